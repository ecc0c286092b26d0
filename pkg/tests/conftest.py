"""Shared fixtures; the expensive desk-scale artifacts are session-scoped.

Seeds are pinned: the desk-scale learning targets were verified with these
seeds and are expected to reproduce exactly.
"""

import numpy as np
import pytest

from markmatch.synth import generate_dataset
from markmatch.training import TrainConfig, train_contrastive

DESK_SEED = 11
HELDOUT_SEED = 12

_acceptance_results: dict[str, bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.get_closest_marker("acceptance"):
        _acceptance_results[item.originalname or item.name] = report.passed


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for name, passed in _acceptance_results.items():
        terminalreporter.write_line(f"  {name}: {'PASS' if passed else 'FAIL'}")


@pytest.fixture(scope="session")
def desk_dataset():
    """50 writers x 20 marks; the pinned training corpus."""
    return generate_dataset(50, 20, seed=DESK_SEED)


@pytest.fixture(scope="session")
def heldout_dataset():
    """20 unseen writers x 10 marks for evaluation."""
    return generate_dataset(20, 10, seed=HELDOUT_SEED, writer_id_base=1000)


@pytest.fixture(scope="session")
def desk_config():
    return TrainConfig(seed=DESK_SEED)


@pytest.fixture(scope="session")
def trained_report(desk_dataset, desk_config):
    """Default contrastive training on the pinned desk corpus."""
    return train_contrastive(desk_dataset, desk_config)


@pytest.fixture(scope="session")
def trained_params(trained_report):
    return trained_report.params


def split_queries_pool(dataset, queries_per_writer=2):
    """First marks of each writer become queries; the rest form the pool."""
    queries, pool = [], []
    for wid, marks in dataset:
        for m in marks[:queries_per_writer]:
            queries.append((m, wid))
        for m in marks[queries_per_writer:]:
            pool.append((m, wid))
    return queries, pool
