"""Hamming-space retrieval and evaluation.

Binary codes are uint8 vectors of 0/1 with a common length K. An index
packs them into bytes once and serves exhaustive linear-scan queries via
XOR and popcount; at the scales this library targets no approximate
structure is warranted. Rankings are total: every database item appears,
ordered by Hamming distance with ties broken by ascending id, so
evaluation numbers are reproducible to the bit.

Evaluation follows the standard definitions: per-query average precision
over the full ranking, their unweighted mean (mAP), and a micro-averaged
precision-recall curve swept over the distance thresholds 0..K. A
threshold that retrieves nothing has precision 1 by convention (no
mistakes were made); recall at threshold K is always 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DatasetError, DomainError, ShapeError

__all__ = [
    "RetrievalIndex",
    "RankedResult",
    "build_index",
    "hamming",
    "query",
    "average_precision",
    "average_precisions",
    "mean_ap",
    "pr_curve",
    "map_csv_lines",
    "pr_csv_lines",
    "write_map_csv",
    "write_pr_csv",
]


def _code_matrix(codes, name: str) -> np.ndarray:
    B = np.ascontiguousarray(np.asarray(codes, dtype=np.uint8))
    if B.ndim == 1:
        B = B[None, :]
    if B.ndim != 2:
        raise ShapeError(f"{name} must be a code matrix, got shape {B.shape}")
    if B.size and B.max() > 1:
        raise DomainError(f"{name} must contain only 0/1 bits")
    return B


@dataclass(frozen=True)
class RetrievalIndex:
    """Immutable packed-code database for one modality."""

    packed: np.ndarray  # n x ceil(K/8) uint8
    labels: np.ndarray  # n int64
    ids: np.ndarray  # n int64
    K: int
    modality: str

    def __len__(self) -> int:
        return self.packed.shape[0]


def build_index(codes, labels, ids=None, modality: str = "video") -> RetrievalIndex:
    """Pack binary codes with their labels and ids into an index.

    ``ids`` defaults to positions 0..n-1; they are the tie-break key of
    every ranking, so callers who supply their own should keep them
    unique.
    """
    B = _code_matrix(codes, "codes")
    n, K = B.shape
    if n == 0 or K == 0:
        raise DatasetError("cannot build an index from an empty code matrix")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if ids is None:
        ids = np.arange(n, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != (n,):
        raise ShapeError(f"expected {n} ids, got shape {ids.shape}")
    packed = np.packbits(B, axis=1)
    return RetrievalIndex(
        packed=packed, labels=labels.copy(), ids=ids.copy(), K=K, modality=modality
    )


def hamming(a, b) -> int:
    """Number of differing bit positions between two codes."""
    a = _code_matrix(a, "a")[0]
    b = _code_matrix(b, "b")[0]
    if a.size != b.size:
        raise ShapeError(f"code lengths differ: {a.size} vs {b.size}")
    return int(np.count_nonzero(a != b))


def _distances(index: RetrievalIndex, codes: np.ndarray) -> np.ndarray:
    """(nq, n) Hamming distances of query codes against the index."""
    if codes.shape[1] != index.K:
        raise ShapeError(
            f"query codes have length {codes.shape[1]}, index has K={index.K}"
        )
    packed_q = np.packbits(codes, axis=1)
    xor = packed_q[:, None, :] ^ index.packed[None, :, :]
    return np.bitwise_count(xor).sum(axis=2, dtype=np.int64)


@dataclass(frozen=True)
class RankedResult:
    """A full database ranking: distances non-decreasing, ties by
    ascending id."""

    ids: np.ndarray
    labels: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return self.ids.size

    def __iter__(self) -> Iterator[tuple[int, int, int]]:
        for i in range(self.ids.size):
            yield int(self.ids[i]), int(self.labels[i]), int(self.distances[i])


def query(index: RetrievalIndex, q) -> RankedResult:
    """Rank the whole database against one query code."""
    Q = _code_matrix(q, "query code")
    if Q.shape[0] != 1:
        raise ShapeError("query expects a single code; use the batch helpers")
    dists = _distances(index, Q)[0]
    order = np.lexsort((index.ids, dists))
    return RankedResult(
        ids=index.ids[order], labels=index.labels[order], distances=dists[order]
    )


def average_precision(ranked_labels, query_label) -> float:
    """AP of one ranking: mean over relevant ranks k of
    (relevant within top k) / k."""
    labels = np.asarray(ranked_labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ShapeError("ranked labels must be a nonempty vector")
    rel = labels == query_label
    R = int(rel.sum())
    if R == 0:
        raise DatasetError(
            f"query label {query_label!r} has no relevant item in the database"
        )
    ranks = np.arange(1, labels.size + 1)
    hits = np.cumsum(rel)
    return float(np.sum(hits[rel] / ranks[rel]) / R)


def average_precisions(query_codes, query_labels, index: RetrievalIndex) -> np.ndarray:
    """Per-query AP against the index, in query order."""
    Q = _code_matrix(query_codes, "query codes")
    qlabels = np.asarray(query_labels, dtype=np.int64)
    if qlabels.shape != (Q.shape[0],):
        raise ShapeError(
            f"expected {Q.shape[0]} query labels, got shape {qlabels.shape}"
        )
    dists = _distances(index, Q)
    aps = np.empty(Q.shape[0])
    for i in range(Q.shape[0]):
        order = np.lexsort((index.ids, dists[i]))
        aps[i] = average_precision(index.labels[order], qlabels[i])
    return aps


def mean_ap(query_codes, query_labels, index: RetrievalIndex) -> float:
    """Unweighted mean of the per-query APs."""
    return float(np.mean(average_precisions(query_codes, query_labels, index)))


def pr_curve(query_codes, query_labels, index: RetrievalIndex) -> np.ndarray:
    """Micro-averaged precision-recall, one row (threshold, recall,
    precision) per Hamming threshold 0..K.

    A pair is retrieved when its distance is at most the threshold;
    counts pool over all queries before the ratios are taken.
    """
    Q = _code_matrix(query_codes, "query codes")
    qlabels = np.asarray(query_labels, dtype=np.int64)
    if qlabels.shape != (Q.shape[0],):
        raise ShapeError(
            f"expected {Q.shape[0]} query labels, got shape {qlabels.shape}"
        )
    dists = _distances(index, Q)
    rel = qlabels[:, None] == index.labels[None, :]
    total_rel = int(rel.sum())
    if np.any(rel.sum(axis=1) == 0):
        missing = int(np.flatnonzero(rel.sum(axis=1) == 0)[0])
        raise DatasetError(
            f"query {missing} (label {qlabels[missing]}) has no relevant item "
            "in the database"
        )
    rows = np.empty((index.K + 1, 3))
    for t in range(index.K + 1):
        retrieved = dists <= t
        n_ret = int(retrieved.sum())
        tp = int((retrieved & rel).sum())
        precision = tp / n_ret if n_ret else 1.0
        rows[t] = (t, tp / total_rel, precision)
    return rows


def map_csv_lines(query_ids, query_labels, aps) -> list[str]:
    """Per-query AP rows plus a final summary row carrying the mAP."""
    ids = np.asarray(query_ids)
    labels = np.asarray(query_labels)
    aps = np.asarray(aps, dtype=np.float64)
    if not (ids.shape == labels.shape == aps.shape):
        raise ShapeError("query ids, labels, and APs must align")
    lines = ["query_id,label,ap"]
    for qid, lab, ap in zip(ids, labels, aps):
        lines.append(f"{int(qid)},{int(lab)},{float(ap)!r}")
    lines.append(f"mAP,,{float(np.mean(aps))!r}")
    return lines


def pr_csv_lines(curve) -> list[str]:
    curve = np.asarray(curve, dtype=np.float64)
    if curve.ndim != 2 or curve.shape[1] != 3:
        raise ShapeError(f"PR curve must have rows of 3, got shape {curve.shape}")
    lines = ["threshold,recall,precision"]
    for t, recall, precision in curve:
        lines.append(f"{int(t)},{float(recall)!r},{float(precision)!r}")
    return lines


def write_map_csv(path, query_ids, query_labels, aps) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(map_csv_lines(query_ids, query_labels, aps)) + "\n")


def write_pr_csv(path, curve) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(pr_csv_lines(curve)) + "\n")
