"""Packed-bit Hamming index and the retrieval evaluation suite.

Codes live as packed bytes; distance is a table-driven population count
over XORed rows. Ranking ties (equal distance) break toward the lower id
so every ranked list is deterministic.

Evaluation conventions:
  * AP@k divides by min(R, k), where R is the number of relevant items in
    the database, so a perfect ranking always scores 1.
  * A query sharing an id with a database item is excluded from its own
    results (test partitions are commonly used as both query set and
    database, and trivial rank-1 self hits would inflate every metric).
  * Queries with zero relevant items are skipped and counted, not scored.
  * Precision at a Hamming radius that retrieves nothing is undefined and
    skipped rather than pinned to 0 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import BinaryCode, pack_bits, require_same_length, unpack_bits
from .exceptions import ShapeError
from . import serial

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def hamming(a: BinaryCode, b: BinaryCode) -> int:
    """Number of differing bits, computed on the packed bytes."""
    require_same_length(a, b)
    return int(_POPCOUNT[np.bitwise_xor(a.packed, b.packed)].sum())


def packed_distances(packed_db: np.ndarray, packed_q: np.ndarray) -> np.ndarray:
    """Hamming distances of one packed query row against all db rows."""
    xor = np.bitwise_xor(packed_db, packed_q[None, :])
    return _POPCOUNT[xor].sum(axis=1).astype(np.int64)


@dataclass
class CodeIndex:
    """Immutable database of packed codes with unique integer ids."""

    packed: np.ndarray            # (n, ceil(K/8)) uint8
    ids: np.ndarray               # (n,) int64
    k: int
    labels: np.ndarray | None = None  # (n,) semantic labels, optional

    def __post_init__(self):
        self.packed = np.asarray(self.packed, dtype=np.uint8)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.packed.shape[0] != self.ids.size:
            raise ShapeError("ids and code rows differ in count")
        if np.unique(self.ids).size != self.ids.size:
            raise ValueError("ids must be unique")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.size != self.ids.size:
                raise ShapeError("labels and ids differ in count")

    @property
    def n(self) -> int:
        return self.ids.size

    @classmethod
    def from_bits(cls, bits: np.ndarray, ids=None, labels=None) -> "CodeIndex":
        """bits: (n, K) array over {-1,+1}."""
        bits = np.asarray(bits)
        ids = np.arange(bits.shape[0]) if ids is None else ids
        return cls(packed=pack_bits(bits), ids=ids, k=bits.shape[1], labels=labels)

    def save(self, codes_path, labels_path=None) -> None:
        serial.save_codes(codes_path, self.packed, self.k)
        if labels_path is not None:
            if self.labels is None:
                raise ValueError("index has no labels to save")
            serial.save_labels(labels_path, self.labels)

    @classmethod
    def load(cls, codes_path, labels_path=None, ids=None) -> "CodeIndex":
        packed, k = serial.load_codes(codes_path)
        labels = serial.load_labels(labels_path) if labels_path else None
        ids = np.arange(packed.shape[0]) if ids is None else ids
        return cls(packed=packed, ids=ids, k=k, labels=labels)


@dataclass
class RankedList:
    """(id, distance) pairs with distances non-decreasing, ties by id."""

    ids: np.ndarray
    distances: np.ndarray


def _rank_all(idx: CodeIndex, query: BinaryCode, exclude_id=None):
    if query.k != idx.k:
        raise ShapeError(f"query has {query.k} bits, index has {idx.k}")
    dists = packed_distances(idx.packed, query.packed)
    ids = idx.ids
    labels = idx.labels
    if exclude_id is not None:
        keep = ids != exclude_id
        dists, ids = dists[keep], ids[keep]
        labels = labels[keep] if labels is not None else None
    order = np.lexsort((ids, dists))
    return ids[order], dists[order], (labels[order] if labels is not None else None)


def query_topk(idx: CodeIndex, query: BinaryCode, k: int, exclude_id=None) -> RankedList:
    """The k nearest codes; raises if k exceeds the (post-exclusion) size."""
    ids, dists, _ = _rank_all(idx, query, exclude_id)
    if k > ids.size:
        raise ValueError(f"k={k} exceeds database size {ids.size}")
    return RankedList(ids=ids[:k], distances=dists[:k])


@dataclass
class MapScore:
    value: float
    evaluated: int
    skipped: int   # queries with zero relevant items


def map_at_k(query_bits: np.ndarray, query_labels, idx: CodeIndex, k: int,
             query_ids=None, exclude_self: bool = True) -> MapScore:
    """Mean average precision over the top-k ranked results.

    query_bits: (nq, K) over {-1,+1}; query_ids enables self-exclusion when
    the query set overlaps the database.
    """
    if idx.labels is None:
        raise ValueError("index has no labels")
    query_bits = np.asarray(query_bits)
    if query_bits.ndim != 2 or query_bits.shape[0] == 0:
        raise ValueError("need a nonempty (nq, K) query array")
    query_labels = np.asarray(query_labels)
    ap_sum = 0.0
    evaluated = 0
    skipped = 0
    for qi in range(query_bits.shape[0]):
        code = BinaryCode(query_bits[qi].astype(np.int8))
        exclude = query_ids[qi] if (exclude_self and query_ids is not None) else None
        _, _, labels = _rank_all(idx, code, exclude)
        rel = labels == query_labels[qi]
        r_total = int(rel.sum())
        if r_total == 0:
            skipped += 1
            continue
        top = rel[:k]
        hits = np.cumsum(top)
        precision_at = hits / np.arange(1, top.size + 1)
        ap = float((precision_at * top).sum()) / min(r_total, k)
        ap_sum += ap
        evaluated += 1
    if evaluated == 0:
        raise ValueError("no evaluable queries (all had zero relevant items)")
    return MapScore(value=ap_sum / evaluated, evaluated=evaluated, skipped=skipped)


def pr_curve(query_bits: np.ndarray, query_labels, idx: CodeIndex,
             query_ids=None, exclude_self: bool = True) -> list[tuple[float, float]]:
    """Precision-recall points swept over Hamming radius r = 0..K.

    Recall averages over every query with at least one relevant item;
    precision averages over queries that retrieved something at radius r.
    Radii where no query retrieves anything yield no point.
    """
    if idx.labels is None:
        raise ValueError("index has no labels")
    query_bits = np.asarray(query_bits)
    query_labels = np.asarray(query_labels)

    per_query = []
    for qi in range(query_bits.shape[0]):
        code = BinaryCode(query_bits[qi].astype(np.int8))
        exclude = query_ids[qi] if (exclude_self and query_ids is not None) else None
        _, dists, labels = _rank_all(idx, code, exclude)
        rel = labels == query_labels[qi]
        if rel.sum() == 0:
            continue
        per_query.append((dists, rel))

    points: list[tuple[float, float]] = []
    for radius in range(idx.k + 1):
        recalls, precisions = [], []
        for dists, rel in per_query:
            retrieved = dists <= radius
            n_ret = int(retrieved.sum())
            n_hit = int((retrieved & rel).sum())
            recalls.append(n_hit / int(rel.sum()))
            if n_ret > 0:
                precisions.append(n_hit / n_ret)
        if precisions:
            points.append((float(np.mean(recalls)), float(np.mean(precisions))))
    return points
