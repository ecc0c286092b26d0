"""Batching, training loops, and the two evaluation protocols."""

import numpy as np
import pytest

from markmatch.errors import TrainingDivergedError
from markmatch.images import MarkImage
from markmatch.encoder import EncoderConfig
from markmatch.losses import LossConfig, similarity_matrix
from markmatch.rng import rng_from
from markmatch.synth import generate_dataset
from markmatch.training import (
    TrainConfig,
    evaluate_pair_f1,
    evaluate_topk,
    make_batch,
    make_eval_pairs,
    train_contrastive,
    train_pairwise_baseline,
)

TOY_ENCODER = EncoderConfig(input_size=16, conv_layers=((4, 3, 2), (8, 3, 2)), embedding_dim=8)


def fake_dataset(num_writers, marks_per_writer):
    """Structure-only dataset; pixel content does not matter for batching."""
    rng = np.random.default_rng(0)
    data = []
    for w in range(num_writers):
        marks = [
            MarkImage(
                pixels=rng.uniform(size=(16, 16)),
                mark_id=f"w{w}_m{i}",
                ballot_id=f"w{w}",
            )
            for i in range(marks_per_writer)
        ]
        data.append((w, marks))
    return data


def toy_config(**overrides):
    defaults = dict(
        batch_size=4, epochs=2, seed=0, encoder=TOY_ENCODER, steps_per_epoch=2
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestMakeBatch:
    def test_constraints(self):
        data = fake_dataset(5, 4)
        batch = make_batch(data, 3, rng_from(1))
        assert len(set(batch.writer_ids)) == 3
        for a, b in zip(batch.a_side, batch.b_side):
            assert a.mark_id != b.mark_id

    def test_too_few_writers(self):
        with pytest.raises(ValueError):
            make_batch(fake_dataset(5, 4), 6, rng_from(1))

    def test_invariants_over_many_batches(self):
        data = fake_dataset(6, 3)
        rng = rng_from(2)
        for _ in range(10_000):
            batch = make_batch(data, 4, rng)
            assert len(set(batch.writer_ids)) == 4
            for a, b, w in zip(batch.a_side, batch.b_side, batch.writer_ids):
                assert a.ballot_id == b.ballot_id == f"w{w}"
                assert a.mark_id != b.mark_id


class TestTrainContrastive:
    def test_zero_learning_rate_keeps_params(self):
        data = fake_dataset(6, 3)
        report = train_contrastive(data, toy_config(learning_rate=0.0))
        from markmatch.encoder import init_params

        initial = init_params(TOY_ENCODER, seed=0)
        for a, b in zip(report.params.tensors(), initial.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_deterministic(self):
        data = generate_dataset(4, 3, seed=5, size=16)
        a = train_contrastive(data, toy_config(epochs=3))
        b = train_contrastive(data, toy_config(epochs=3))
        assert a.epoch_losses == b.epoch_losses
        for ta, tb in zip(a.params.tensors(), b.params.tensors()):
            np.testing.assert_array_equal(ta, tb)

    def test_loss_descends_on_toy_dataset(self):
        data = generate_dataset(4, 6, seed=8, size=16)
        cfg = toy_config(batch_size=4, epochs=10, steps_per_epoch=20)  # 200 steps
        report = train_contrastive(data, cfg)
        assert report.epoch_losses[-1] < 0.1 * report.epoch_losses[0]

    def test_progress_lines(self, capsys):
        data = fake_dataset(6, 3)
        train_contrastive(data, toy_config(epochs=2), progress=True)
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("epoch 0 loss ")
        assert lines[1].startswith("epoch 1 loss ")

    def test_divergence_reports_step(self):
        data = fake_dataset(6, 3)
        cfg = toy_config(learning_rate=1e200, epochs=4, steps_per_epoch=4)
        with pytest.raises(TrainingDivergedError) as err:
            with np.errstate(all="ignore"):
                train_contrastive(data, cfg)
        assert err.value.step >= 0


class TestTrainPairwiseBaseline:
    def test_zero_learning_rate_keeps_params(self):
        data = fake_dataset(6, 3)
        report = train_pairwise_baseline(data, toy_config(learning_rate=0.0))
        from markmatch.encoder import init_params

        initial = init_params(TOY_ENCODER, seed=0)
        for a, b in zip(report.params.tensors(), initial.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_initial_loss_near_ln2_at_unit_temperature(self):
        # balanced positive/negative pairs, untrained params, temperature 1.0
        data = fake_dataset(8, 3)
        cfg = toy_config(learning_rate=0.0, epochs=1, steps_per_epoch=8, loss=LossConfig(temperature=1.0))
        report = train_pairwise_baseline(data, cfg)
        assert 0.5 <= report.epoch_losses[0] <= 0.9

    def test_deterministic(self):
        data = generate_dataset(4, 3, seed=6, size=16)
        a = train_pairwise_baseline(data, toy_config())
        b = train_pairwise_baseline(data, toy_config())
        assert a.epoch_losses == b.epoch_losses
        for ta, tb in zip(a.params.tensors(), b.params.tensors()):
            np.testing.assert_array_equal(ta, tb)


class TestEvaluatePairF1:
    def test_perfect_separation(self, tiny_params):
        marks = perfect_pairs()
        f1, _thr = evaluate_pair_f1(tiny_params, marks)
        assert f1 == 1.0

    def test_degenerate_equal_scores(self, tiny_params):
        # identical images on both sides: every score equal, balanced labels
        img = MarkImage(pixels=np.zeros((16, 16)))
        pairs = [(img, img, 1), (img, img, 0)] * 5
        f1, _thr = evaluate_pair_f1(tiny_params, pairs)
        assert abs(f1 - 2 / 3) < 1e-12

    def test_single_class_rejected(self, tiny_params):
        img = MarkImage(pixels=np.zeros((16, 16)))
        with pytest.raises(ValueError):
            evaluate_pair_f1(tiny_params, [(img, img, 1)])


@pytest.fixture(scope="module")
def tiny_params():
    from markmatch.encoder import init_params

    return init_params(TOY_ENCODER, seed=4)


def perfect_pairs():
    """Pairs whose scores are trivially separable: equal images vs inverted ones."""
    rng = np.random.default_rng(3)
    pairs = []
    for _ in range(10):
        img = MarkImage(pixels=rng.uniform(size=(16, 16)))
        pairs.append((img, img, 1))
        inverted = MarkImage(pixels=1.0 - img.pixels)
        pairs.append((img, inverted, 0))
    return pairs


class TestEvaluateTopk:
    def test_k_equals_pool_size(self, tiny_params):
        data = fake_dataset(4, 3)
        queries = [(marks[0], w) for w, marks in data]
        pool = [(m, w) for w, marks in data for m in marks[1:]]
        assert evaluate_topk(tiny_params, queries, pool, k=len(pool)) == 1.0

    def test_single_same_writer_pool(self, tiny_params):
        data = fake_dataset(2, 3)
        w, marks = data[0]
        assert evaluate_topk(tiny_params, [(marks[0], w)], [(marks[1], w)], k=1) == 1.0

    def test_missing_writer_rejected(self, tiny_params):
        data = fake_dataset(3, 3)
        queries = [(data[0][1][0], data[0][0])]
        pool = [(m, w) for w, marks in data[1:] for m in marks]
        with pytest.raises(ValueError):
            evaluate_topk(tiny_params, queries, pool, k=1)

    def test_query_in_pool_rejected(self, tiny_params):
        data = fake_dataset(2, 3)
        w, marks = data[0]
        with pytest.raises(ValueError):
            evaluate_topk(tiny_params, [(marks[0], w)], [(marks[0], w)], k=1)


class TestObjectiveSeparation:
    def test_diagonal_exceeds_off_diagonal_on_heldout(self, trained_params, heldout_dataset):
        from markmatch.encoder import embed_batch

        cfg = LossConfig()
        rng = rng_from(7)
        margins = []
        for _ in range(20):
            batch = make_batch(heldout_dataset, 8, rng)
            emb_a = embed_batch(trained_params, batch.a_side)
            emb_b = embed_batch(trained_params, batch.b_side)
            S = similarity_matrix(emb_a, emb_b, cfg)
            diag = np.mean(np.diag(S))
            off = (S.sum() - np.trace(S)) / (S.size - S.shape[0])
            margins.append(diag - off)
        assert np.mean(margins) > 0
