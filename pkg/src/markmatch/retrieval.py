"""Embedding pool with alias anonymization, softmax-normalized ranking,
heatmaps, and line-oriented persistence.

Ranking is a deterministic linear scan: every pool logit enters the softmax
(not just the returned top-k), so displayed scores are comparable across k
and heatmap columns always sum to 1.  Ties in raw logit break by alias
(lexicographic ascending).  Scan cost is O(pool size x embedding dim).
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import DuplicateEnrollmentError, EmptyPoolError, FileFormatError, VersionMismatchError
from .losses import LossConfig

POOL_FORMAT = "markmatch-pool v1"


@dataclass(frozen=True)
class PoolRecord:
    alias: str
    embedding: np.ndarray
    ballot_id: str
    enrolled_at: int  # UTC seconds


@dataclass(frozen=True)
class RankedMatch:
    rank: int  # 1-based
    alias: str
    softmax_score: float
    raw_logit: float


@dataclass(frozen=True)
class HeatmapMatrix:
    pool_aliases: list
    query_aliases: list
    cells: np.ndarray  # (pool size, query count), columns sum to 1


class Pool:
    """Enrolled mark embeddings; many concurrent readers or one writer."""

    def __init__(self, dim: int):
        if dim < 2:
            raise ValueError(f"embedding dim must be >= 2, got {dim}")
        self.dim = dim
        self.records: list[PoolRecord] = []
        self.lock = threading.RLock()
        self._ballot_index: dict[str, int] = {}
        self._used: set[tuple[str, int]] = set()

    def __len__(self) -> int:
        return len(self.records)

    def enroll(self, embedding, ballot_id: str, mark_index: int, now: int | None = None) -> str:
        emb = np.asarray(embedding, dtype=np.float64)
        if emb.shape != (self.dim,):
            raise ValueError(f"embedding shape {emb.shape} does not match pool dim {self.dim}")
        if abs(np.linalg.norm(emb) - 1.0) > 1e-6:
            raise ValueError("embedding must be unit-norm")
        if mark_index < 0:
            raise ValueError("mark_index must be >= 0")
        with self.lock:
            if (ballot_id, mark_index) in self._used:
                raise DuplicateEnrollmentError(
                    f"ballot {ballot_id!r} mark {mark_index} already enrolled"
                )
            if ballot_id not in self._ballot_index:
                self._ballot_index[ballot_id] = len(self._ballot_index)
            alias = f"alias{self._ballot_index[ballot_id]}_{mark_index}"
            record = PoolRecord(
                alias=alias,
                embedding=emb.copy(),
                ballot_id=ballot_id,
                enrolled_at=int(time.time()) if now is None else int(now),
            )
            self.records.append(record)
            self._used.add((ballot_id, mark_index))
        return alias

    def subset(self, keep) -> "Pool":
        """A read-only view pool with only records satisfying ``keep(record)``."""
        view = Pool(dim=self.dim)
        with self.lock:
            for record in self.records:
                if keep(record):
                    view.records.append(record)
        return view


def enroll(pool: Pool, embedding, ballot_id: str, mark_index: int, now: int | None = None) -> str:
    return pool.enroll(embedding, ballot_id, mark_index, now=now)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def query(pool: Pool, query_emb, k: int, cfg: LossConfig = LossConfig()) -> list[RankedMatch]:
    """Top-k records by raw logit; softmax scores normalized over the whole pool."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(query_emb, dtype=np.float64)
    with pool.lock:
        records = list(pool.records)
    if not records:
        raise EmptyPoolError("cannot query an empty pool")
    if q.shape != (pool.dim,):
        raise ValueError(f"query embedding shape {q.shape} does not match pool dim {pool.dim}")

    matrix = np.stack([r.embedding for r in records])
    logits = matrix @ q / cfg.temperature
    scores = _softmax(logits)
    order = sorted(range(len(records)), key=lambda i: (-logits[i], records[i].alias))
    return [
        RankedMatch(
            rank=rank + 1,
            alias=records[i].alias,
            softmax_score=float(scores[i]),
            raw_logit=float(logits[i]),
        )
        for rank, i in enumerate(order[: min(k, len(records))])
    ]


def heatmap(pool: Pool, query_embs, cfg: LossConfig = LossConfig(), query_labels=None) -> HeatmapMatrix:
    """Column-stochastic score matrix: pool records (rows) x queries (columns)."""
    with pool.lock:
        records = list(pool.records)
    if not records:
        raise ValueError("pool is empty")
    queries = [np.asarray(q, dtype=np.float64) for q in query_embs]
    if not queries:
        raise ValueError("need at least one query")
    if query_labels is None:
        query_labels = [f"q{j}" for j in range(len(queries))]
    elif len(query_labels) != len(queries):
        raise ValueError("query_labels length mismatch")

    matrix = np.stack([r.embedding for r in records])
    cells = np.empty((len(records), len(queries)), dtype=np.float64)
    for j, q in enumerate(queries):
        if q.shape != (pool.dim,):
            raise ValueError(f"query {j} shape {q.shape} does not match pool dim {pool.dim}")
        cells[:, j] = _softmax(matrix @ q / cfg.temperature)
    return HeatmapMatrix(
        pool_aliases=[r.alias for r in records],
        query_aliases=list(query_labels),
        cells=cells,
    )


def heatmap_to_csv(matrix: HeatmapMatrix) -> str:
    lines = ["pool_alias," + ",".join(matrix.query_aliases)]
    for alias, row in zip(matrix.pool_aliases, matrix.cells):
        lines.append(alias + "," + ",".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Persistence: line-oriented text, floats at 17 significant digits.
# ---------------------------------------------------------------------------


def save_pool(pool: Pool, path) -> None:
    with pool.lock:
        records = list(pool.records)
        dim = pool.dim
    lines = [f"{POOL_FORMAT} dim={dim}"]
    for r in records:
        values = " ".join(f"{v:.17g}" for v in r.embedding)
        lines.append(f"{r.alias} {r.ballot_id} {r.enrolled_at} {values}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pool(path) -> Pool:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FileFormatError("empty pool file", line=1)
    header = lines[0].split()
    if len(header) != 3 or not header[2].startswith("dim="):
        raise FileFormatError(f"malformed header {lines[0]!r}", line=1)
    version = f"{header[0]} {header[1]}"
    if version != POOL_FORMAT:
        raise VersionMismatchError(found=version, expected=POOL_FORMAT)
    try:
        dim = int(header[2][4:])
    except ValueError as exc:
        raise FileFormatError(f"bad dim: {exc}", line=1) from exc

    pool = Pool(dim=dim)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 + dim:
            raise FileFormatError(
                f"expected {3 + dim} fields, got {len(parts)}", line=lineno
            )
        alias, ballot_id = parts[0], parts[1]
        try:
            enrolled_at = int(parts[2])
            emb = np.array([float(tok) for tok in parts[3:]], dtype=np.float64)
        except ValueError as exc:
            raise FileFormatError(f"bad record: {exc}", line=lineno) from exc
        if not alias.startswith("alias"):
            raise FileFormatError(f"bad alias {alias!r}", line=lineno)
        try:
            ballot_part, mark_part = alias[5:].split("_")
            ballot_index, mark_index = int(ballot_part), int(mark_part)
        except ValueError as exc:
            raise FileFormatError(f"bad alias {alias!r}: {exc}", line=lineno) from exc
        if (ballot_id, mark_index) in pool._used:
            raise FileFormatError(f"duplicate enrollment {alias!r}", line=lineno)
        known = pool._ballot_index.get(ballot_id)
        if known is None:
            if ballot_index != len(pool._ballot_index):
                raise FileFormatError(
                    f"alias {alias!r} inconsistent with ballot order", line=lineno
                )
            pool._ballot_index[ballot_id] = ballot_index
        elif known != ballot_index:
            raise FileFormatError(f"alias {alias!r} conflicts with ballot index {known}", line=lineno)
        pool.records.append(
            PoolRecord(alias=alias, embedding=emb, ballot_id=ballot_id, enrolled_at=enrolled_at)
        )
        pool._used.add((ballot_id, mark_index))
    return pool
