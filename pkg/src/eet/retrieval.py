"""Packed binary codes, exact Hamming ranking, and mAP / PR evaluation.

Bit ``i`` of a code is 1 for +1 and 0 for -1, packed LSB-first within each
byte; unused trailing bits are zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)
RECALL_LEVELS = np.linspace(0.0, 1.0, 11)


def code_bytes(k: int) -> int:
    return (k + 7) // 8


def binarize(h) -> np.ndarray:
    """Pack ``h > 0`` into ``ceil(k/8)`` bytes (works row-wise on 2-D input)."""
    h = np.asarray(h, dtype=np.float64)
    return np.packbits(h > 0, axis=-1, bitorder="little")


def unpack(bits, k: int) -> np.ndarray:
    """Packed codes back to +/-1 floats."""
    raw = np.unpackbits(np.asarray(bits, dtype=np.uint8), axis=-1, count=k, bitorder="little")
    return raw.astype(np.float64) * 2.0 - 1.0


@dataclass(frozen=True)
class BinaryCodeSet:
    k: int
    bits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2 or bits.shape[1] != code_bytes(self.k):
            raise ShapeError(f"packed codes must be n x {code_bytes(self.k)}, got {bits.shape}")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (bits.shape[0],):
            raise ShapeError(f"{len(labels)} labels for {bits.shape[0]} codes")
        spare = 8 * code_bytes(self.k) - self.k
        if spare and bits.shape[0] and np.any(bits[:, -1] >> (8 - spare)):
            raise ShapeError("unused trailing bits must be zero")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_real(cls, codes, labels) -> "BinaryCodeSet":
        """Build from real codes, one row per item."""
        codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
        return cls(k=codes.shape[1], bits=binarize(codes), labels=labels)

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    def signs(self) -> np.ndarray:
        return unpack(self.bits, self.k)

    def subset(self, index) -> "BinaryCodeSet":
        return BinaryCodeSet(self.k, self.bits[index], self.labels[index])


def hamming(a, b, k: int) -> int:
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != (code_bytes(k),) or b.shape != a.shape:
        raise ShapeError(f"codes of {k} bits need {code_bytes(k)} bytes, got {a.shape} and {b.shape}")
    return int(POPCOUNT[np.bitwise_xor(a, b)].sum())


def hamming_matrix(q_bits: np.ndarray, db_bits: np.ndarray) -> np.ndarray:
    """(nq, ndb) distances between two packed code arrays."""
    if q_bits.shape[1] != db_bits.shape[1]:
        raise ShapeError("code widths differ")
    out = np.zeros((q_bits.shape[0], db_bits.shape[0]), dtype=np.int64)
    for j in range(q_bits.shape[1]):
        out += POPCOUNT[np.bitwise_xor.outer(q_bits[:, j], db_bits[:, j])]
    return out


@dataclass(frozen=True)
class RankedRetrieval:
    """Database indices by ascending distance, ties by ascending index."""

    order: np.ndarray
    distances: np.ndarray
    relevant: np.ndarray | None = None
    query_index: int | None = None


def rank(distances: np.ndarray) -> np.ndarray:
    return np.argsort(distances, kind="stable")


def search(query, db: BinaryCodeSet, query_label: int | None = None, query_index: int | None = None) -> RankedRetrieval:
    query = np.asarray(query, dtype=np.uint8)
    if query.shape != (code_bytes(db.k),):
        raise ShapeError(f"query has {query.shape} bytes, database codes have {code_bytes(db.k)}")
    dist = hamming_matrix(query[None, :], db.bits)[0]
    order = rank(dist)
    relevant = None if query_label is None else db.labels[order] == query_label
    return RankedRetrieval(order=order, distances=dist[order], relevant=relevant, query_index=query_index)


def average_precision(r: RankedRetrieval, q_cutoff: int | None = None, normalizer: str = "retrieved") -> float:
    """AP over the top ``q_cutoff`` ranks.

    ``normalizer="retrieved"`` divides by the relevant items inside the
    cutoff; ``"all"`` divides by every relevant item in the ranking.
    """
    if r.relevant is None:
        raise ValueError("ranking carries no relevance flags")
    rel = np.asarray(r.relevant, dtype=bool)
    q = len(rel) if q_cutoff is None else q_cutoff
    if q > len(rel):
        raise ValueError(f"cutoff {q} exceeds ranking length {len(rel)}")
    top = rel[:q]
    if normalizer == "retrieved":
        denom = int(top.sum())
    elif normalizer == "all":
        denom = int(rel.sum())
    else:
        raise ValueError(f"unknown AP normalizer {normalizer!r}")
    if denom == 0:
        return 0.0
    hits = np.cumsum(top)
    ranks = np.arange(1, q + 1)
    return float(np.sum((hits / ranks)[top]) / denom)


@dataclass(frozen=True)
class EvalResult:
    """mAP plus precision-recall data averaged over queries.

    pr_curve: (11, 2) rows of (recall, interpolated precision).
    pr_raw: (n, 2) rows of (mean recall, mean precision) at each rank.
    """

    map: float
    ap: np.ndarray
    pr_curve: np.ndarray
    pr_raw: np.ndarray


def evaluate(
    queries: BinaryCodeSet,
    db: BinaryCodeSet,
    q_cutoff: int | None = None,
    exclude_self: bool = False,
    normalizer: str = "retrieved",
) -> EvalResult:
    """Rank the database for every query and score the rankings.

    With ``exclude_self`` query ``i`` is removed from its own ranking, which
    assumes query ``i`` is database item ``i``.
    """
    if queries.k != db.k:
        raise ShapeError(f"query codes have {queries.k} bits, database {db.k}")
    if exclude_self and queries.n != db.n:
        raise ShapeError("exclude_self needs queries aligned with the database")
    dist = hamming_matrix(queries.bits, db.bits)
    n_db = db.n - (1 if exclude_self else 0)
    q = n_db if q_cutoff is None or q_cutoff <= 0 else min(q_cutoff, n_db)
    aps = np.zeros(queries.n)
    precision_sum = np.zeros(n_db)
    recall_sum = np.zeros(n_db)
    interp_sum = np.zeros(len(RECALL_LEVELS))
    for i in range(queries.n):
        order = rank(dist[i])
        if exclude_self:
            order = order[order != i]
        rel = db.labels[order] == queries.labels[i]
        ranking = RankedRetrieval(order=order, distances=dist[i][order], relevant=rel, query_index=i)
        aps[i] = average_precision(ranking, q, normalizer)
        total = rel.sum()
        hits = np.cumsum(rel)
        precision = hits / np.arange(1, n_db + 1)
        recall = hits / total if total else np.zeros(n_db)
        precision_sum += precision
        recall_sum += recall
        interp_sum += interpolated_precision(recall, precision)
    nq = max(queries.n, 1)
    return EvalResult(
        map=float(aps.mean()) if queries.n else 0.0,
        ap=aps,
        pr_curve=np.column_stack([RECALL_LEVELS, interp_sum / nq]),
        pr_raw=np.column_stack([recall_sum / nq, precision_sum / nq]),
    )


def interpolated_precision(recall: np.ndarray, precision: np.ndarray, levels=RECALL_LEVELS) -> np.ndarray:
    """Max precision at recall >= each level (0 where that recall is never reached)."""
    out = np.zeros(len(levels))
    if len(recall) == 0:
        return out
    # running max from the tail gives max precision over ranks at or beyond t
    tail_max = np.maximum.accumulate(precision[::-1])[::-1]
    for j, level in enumerate(levels):
        idx = np.searchsorted(recall, level - 1e-12, side="left")
        if idx < len(recall):
            out[j] = tail_max[idx]
    return out
