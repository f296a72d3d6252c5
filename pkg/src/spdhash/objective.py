"""Heterogeneous triplet objective over relaxed hash codes.

A triplet (u, v, w) pairs an anchor u with a same-class positive v and a
different-class negative w; its hinge loss is

    L = max(0, alpha + ||b_u - b_v||^2 - ||b_u - b_w||^2).

Three disjoint triplet families are enumerated exhaustively inside a
batch: inter-space ('er') triplets mix modalities, with anchors of one
form and positive/negative of the other, in both directions; the 'e'
family is all-image, the 'r' family all-video. The batch objective is

    J = mean(L_er) + lambda1 * mean(L_e) + lambda2 * mean(L_r)

with empty families contributing zero (guarded division, never NaN).

Active triplets (L > 0) contribute the exact hinge gradients

    dL/db_u = 2 (b_w - b_v),  dL/db_v = 2 (b_v - b_u),  dL/db_w = 2 (b_u - b_w);

inactive triplets and the hinge boundary contribute zero. Accumulation
into per-sample slots runs in enumeration order so results are
bit-identical across runs.

Modalities are the strings 'image' and 'video' throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DomainError, NumericalError, ShapeError

__all__ = [
    "IMAGE",
    "VIDEO",
    "Triplet",
    "MinedTriplets",
    "ObjectiveConfig",
    "ObjectiveResult",
    "triplet_loss",
    "triplet_grads",
    "mine_triplets",
    "batch_objective",
]

IMAGE = "image"
VIDEO = "video"

_TERMS = ("er", "e", "r")
_EMPTY_IDX = np.empty(0, dtype=np.int64)


@dataclass(frozen=True)
class Triplet:
    """One (anchor, positive, negative) index triple and its family."""

    u: int
    v: int
    w: int
    term: str


@dataclass(frozen=True)
class ObjectiveConfig:
    """Margin, family weights, and code length of the batch objective."""

    alpha: float
    lambda1: float
    lambda2: float
    K: int

    def __post_init__(self) -> None:
        if self.alpha <= 0.0:
            raise DomainError(f"margin alpha must be positive, got {self.alpha}")
        if self.lambda1 < 0.0 or self.lambda2 < 0.0:
            raise DomainError(
                f"family weights must be nonnegative, got {self.lambda1}, {self.lambda2}"
            )
        if self.K < 1:
            raise DomainError(f"code length K must be at least 1, got {self.K}")


def _code(b, name: str) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1:
        raise ShapeError(f"{name} must be a vector, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise NumericalError(f"{name} contains non-finite entries")
    return b


def triplet_loss(bu, bv, bw, alpha: float) -> float:
    """Hinge loss of one triplet of relaxed codes."""
    bu, bv, bw = _code(bu, "bu"), _code(bv, "bv"), _code(bw, "bw")
    if not (bu.size == bv.size == bw.size):
        raise ShapeError(
            f"code lengths differ: {bu.size}, {bv.size}, {bw.size}"
        )
    pos = float(np.sum((bu - bv) ** 2))
    neg = float(np.sum((bu - bw) ** 2))
    return max(0.0, alpha + pos - neg)


def triplet_grads(bu, bv, bw, alpha: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of triplet_loss with respect to the three codes.

    Zero everywhere when the hinge is inactive (loss zero), including at
    the boundary itself.
    """
    bu, bv, bw = _code(bu, "bu"), _code(bv, "bv"), _code(bw, "bw")
    if not (bu.size == bv.size == bw.size):
        raise ShapeError(
            f"code lengths differ: {bu.size}, {bv.size}, {bw.size}"
        )
    if triplet_loss(bu, bv, bw, alpha) > 0.0:
        return 2.0 * (bw - bv), 2.0 * (bv - bu), 2.0 * (bu - bw)
    z = np.zeros_like(bu)
    return z, z.copy(), z.copy()


@dataclass(frozen=True)
class MinedTriplets:
    """Exhaustive in-batch triplet enumeration, one (T, 3) index array of
    (u, v, w) rows per family, in deterministic nested-loop order
    (anchor ascending, then positive, then negative)."""

    er: np.ndarray
    e: np.ndarray
    r: np.ndarray

    @property
    def n_er(self) -> int:
        return self.er.shape[0]

    @property
    def n_e(self) -> int:
        return self.e.shape[0]

    @property
    def n_r(self) -> int:
        return self.r.shape[0]

    def family(self, term: str) -> np.ndarray:
        if term not in _TERMS:
            raise DomainError(f"unknown triplet family {term!r}")
        return getattr(self, term)

    def iter_triplets(self) -> Iterator[Triplet]:
        for term in _TERMS:
            for u, v, w in self.family(term):
                yield Triplet(int(u), int(v), int(w), term)


def _cross(anchors, pool_by_label, labels, exclude_anchor: bool):
    """Rows (u, v, w) for every anchor: positives are the anchor's label
    pool (minus the anchor itself when it lives in that pool), negatives
    the union of all other label pools, both ascending. Per anchor the
    order is v outer, w inner."""
    rows = []
    for u in anchors:
        lab = labels[u]
        vs = pool_by_label.get(lab, _EMPTY_IDX)
        if exclude_anchor:
            vs = vs[vs != u]
        others = [pool for other, pool in pool_by_label.items() if other != lab]
        ws = np.sort(np.concatenate(others)) if others else _EMPTY_IDX
        if vs.size == 0 or ws.size == 0:
            continue
        rows.append(
            np.column_stack(
                (
                    np.full(vs.size * ws.size, u, dtype=np.int64),
                    np.repeat(vs, ws.size),
                    np.tile(ws, vs.size),
                )
            )
        )
    if not rows:
        return np.empty((0, 3), dtype=np.int64)
    return np.concatenate(rows)


def mine_triplets(labels, modalities) -> MinedTriplets:
    """Enumerate every valid in-batch triplet of each family.

    'e' and 'r' triplets stay within one modality (image and video
    respectively): all ordered same-class pairs (u, v), u != v, crossed
    with every different-class negative of that modality. 'er' triplets
    mix: an anchor of either modality with positive and negative both of
    the opposite modality. A family without valid triplets comes back
    empty; a single-class batch yields three empty families.
    """
    labels = np.asarray(labels)
    modalities = list(modalities)
    if labels.ndim != 1 or labels.size != len(modalities):
        raise ShapeError(
            f"{labels.size} labels but {len(modalities)} modalities"
        )
    for mod in modalities:
        if mod not in (IMAGE, VIDEO):
            raise DomainError(f"unknown modality {mod!r}")
    idx = np.arange(labels.size, dtype=np.int64)
    images = idx[[m == IMAGE for m in modalities]]
    videos = idx[[m == VIDEO for m in modalities]]

    def by_label(pool):
        return {lab: pool[labels[pool] == lab] for lab in np.unique(labels[pool])}

    img_by, vid_by = by_label(images), by_label(videos)
    e = _cross(images, img_by, labels, exclude_anchor=True)
    r = _cross(videos, vid_by, labels, exclude_anchor=True)
    er = np.concatenate(
        (
            _cross(images, vid_by, labels, exclude_anchor=False),
            _cross(videos, img_by, labels, exclude_anchor=False),
        )
    )
    return MinedTriplets(er=er, e=e, r=r)


@dataclass(frozen=True)
class ObjectiveResult:
    """Batch objective value, per-family means and activity, and the
    per-sample code gradients as rows of an (n, K) array."""

    J: float
    J_er: float
    J_e: float
    J_r: float
    n_er: int
    n_e: int
    n_r: int
    active_er: float
    active_e: float
    active_r: float
    grads: np.ndarray


def _family_terms(B: np.ndarray, rows: np.ndarray, alpha: float):
    """Vectorized hinge losses and the active mask for one family."""
    if rows.shape[0] == 0:
        return np.empty(0), np.empty(0, dtype=bool)
    U, V, W = rows[:, 0], rows[:, 1], rows[:, 2]
    pos = np.sum((B[U] - B[V]) ** 2, axis=1)
    neg = np.sum((B[U] - B[W]) ** 2, axis=1)
    losses = np.maximum(0.0, alpha + pos - neg)
    return losses, losses > 0.0


def _accumulate(G: np.ndarray, B: np.ndarray, rows: np.ndarray, active: np.ndarray, scale: float) -> None:
    if rows.shape[0] == 0 or not np.any(active) or scale == 0.0:
        return
    U, V, W = rows[active, 0], rows[active, 1], rows[active, 2]
    np.add.at(G, U, scale * 2.0 * (B[W] - B[V]))
    np.add.at(G, V, scale * 2.0 * (B[V] - B[U]))
    np.add.at(G, W, scale * 2.0 * (B[U] - B[W]))


def batch_objective(codes, labels, modalities, cfg: ObjectiveConfig) -> ObjectiveResult:
    """Evaluate J and its gradient with respect to every code in the batch.

    ``codes`` is an (n, K) array or sequence of K-vectors aligned with
    ``labels`` and ``modalities``. Families are averaged over their own
    triplet counts; an empty family contributes zero to J and to the
    gradients. The gradient rows carry the same 1/N and lambda scaling
    as J, so finite differences of J reproduce them directly.
    """
    B = np.asarray(codes, dtype=np.float64)
    if B.ndim != 2:
        raise ShapeError(f"codes must be a 2-D batch, got shape {B.shape}")
    if B.shape[1] != cfg.K:
        raise ShapeError(f"codes have width {B.shape[1]}, config says K={cfg.K}")
    if not np.all(np.isfinite(B)):
        raise NumericalError("codes contain non-finite entries")
    mined = mine_triplets(labels, modalities)

    G = np.zeros_like(B)
    means, actives = {}, {}
    for term, lam in (("er", 1.0), ("e", cfg.lambda1), ("r", cfg.lambda2)):
        rows = mined.family(term)
        losses, active = _family_terms(B, rows, cfg.alpha)
        n = rows.shape[0]
        means[term] = float(losses.sum() / n) if n else 0.0
        actives[term] = float(active.sum() / n) if n else 0.0
        _accumulate(G, B, rows, active, lam / n if n else 0.0)

    J = means["er"] + cfg.lambda1 * means["e"] + cfg.lambda2 * means["r"]
    return ObjectiveResult(
        J=J,
        J_er=means["er"],
        J_e=means["e"],
        J_r=means["r"],
        n_er=mined.n_er,
        n_e=mined.n_e,
        n_r=mined.n_r,
        active_er=actives["er"],
        active_e=actives["e"],
        active_r=actives["r"],
        grads=G,
    )
