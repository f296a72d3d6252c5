"""Log-covariance pooling of a frame-feature matrix and its exact gradient.

A video's m x d feature matrix D is summarized by the symmetric d x d
matrix

    Y = V log(Sigma^T Sigma + eps I) V^T,   D = U Sigma V^T (full SVD),

which equals log(D^T D + eps I), the log-mapped regularized covariance.
The log is applied to the eigenvalues sigma_i^2 + eps; the trailing d - m
of them are exactly eps.

The backward pass is not an element-wise chain rule: it propagates an
upstream gradient dJ/dY through the SVD with a matrix-variational chain
rule, assembling dJ/dD from dJ/dSigma, dJ/dV, and a Hadamard term whose
denominators are the pairwise gaps sigma_j^2 - sigma_i^2. Those
denominators blow up when singular values collide or vanish; callers pick
between a hard error and sign-preserving clamping via ``policy``.

Only m <= d is supported: the gradient assembly is derived for wide
feature matrices, and ingestion clips videos to at most 30 frames while
encoded dimensions stay larger.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSpectrumError, DomainError, ShapeError
from .linalg import SvdFactors, as_matrix, svd, sym

__all__ = [
    "SPECTRUM_GAP_THRESHOLD",
    "SIGMA_FLOOR",
    "PoolCache",
    "GradCheckReport",
    "pool_forward",
    "pool_backward",
    "grad_check",
]

# Pairwise gaps |sigma_i^2 - sigma_j^2| below the threshold, or any
# sigma_i below the floor, are degenerate for the backward pass.
SPECTRUM_GAP_THRESHOLD = 1e-6
SIGMA_FLOOR = 1e-6

_POLICIES = ("error", "clamp")


@dataclass(frozen=True)
class PoolCache:
    """Forward products kept for the backward pass.

    D is the m x d input, ``factors`` its full SVD, ``log_values`` the d
    eigenvalue logs log(sigma_i^2 + eps) (trailing entries log(eps)), and
    Y the pooled symmetric output.
    """

    D: np.ndarray
    factors: SvdFactors
    epsilon: float
    log_values: np.ndarray
    Y: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.D.shape


def pool_forward(D, epsilon: float) -> PoolCache:
    """Map an m x d feature matrix to its log-covariance representation.

    Requires epsilon > 0 and m <= d. The output Y is explicitly
    symmetrized so later vectorization never sees asymmetric rounding.
    """
    D = as_matrix(D, "feature matrix")
    if epsilon <= 0.0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    m, d = D.shape
    if m > d:
        raise ShapeError(f"feature matrix must have m <= d, got {m}x{d}")
    factors = svd(D)
    log_values = np.full(d, np.log(epsilon))
    log_values[:m] = np.log(factors.S**2 + epsilon)
    V = factors.V
    Y = (V * log_values) @ V.T
    Y = 0.5 * (Y + Y.T)
    return PoolCache(D=D, factors=factors, epsilon=float(epsilon), log_values=log_values, Y=Y)


def _check_spectrum(
    s: np.ndarray, policy: str, gap_threshold: float, sigma_floor: float
) -> None:
    if policy not in _POLICIES:
        raise DomainError(f"unknown degenerate-spectrum policy {policy!r}")
    if policy == "clamp":
        return
    if s.size and s.min() < sigma_floor:
        raise DegenerateSpectrumError(
            f"singular value {s.min():.3e} below floor {sigma_floor:.1e}; "
            "the gradient is unstable (use policy='clamp' to continue)"
        )
    sq = s**2
    gaps = np.abs(sq[:, None] - sq[None, :])
    np.fill_diagonal(gaps, np.inf)
    if gaps.size and gaps.min() < gap_threshold:
        i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
        raise DegenerateSpectrumError(
            f"squared singular values {sq[i]:.6e} and {sq[j]:.6e} are closer "
            f"than {gap_threshold:.1e}; the gradient is unstable "
            "(use policy='clamp' to continue)"
        )


def _gap_matrix(sq: np.ndarray, policy: str, gap_threshold: float) -> np.ndarray:
    """Reciprocal-gap matrix P with P[i, j] = 1 / (sq[j] - sq[i]) off the
    diagonal. Under clamping, near-zero denominators become +-gap_threshold
    with signs chosen antisymmetrically so P stays antisymmetric."""
    m = sq.size
    denom = sq[None, :] - sq[:, None]
    if policy == "clamp":
        signs = np.sign(denom)
        upper = np.triu(np.ones((m, m)), k=1)
        signs = np.where(signs == 0.0, upper - upper.T, signs)
        denom = signs * np.maximum(np.abs(denom), gap_threshold)
    P = np.zeros((m, m))
    off = ~np.eye(m, dtype=bool)
    P[off] = 1.0 / denom[off]
    return P


def pool_backward(
    cache: PoolCache,
    dY,
    policy: str = "error",
    gap_threshold: float = SPECTRUM_GAP_THRESHOLD,
    sigma_floor: float = SIGMA_FLOOR,
) -> np.ndarray:
    """Gradient of a scalar loss with respect to the pooled input D.

    ``dY`` is the upstream d x d gradient with respect to Y. Returns the
    m x d gradient with respect to D. The chain has three stages:

    1. symmetrize dY (only the symmetric part of Y reaches the loss);
    2. gradients with respect to the SVD factors:
           dJ/dSigma = 2 Sigma (Sigma^T Sigma + eps I)^-1 V^T G V
           dJ/dV     = 2 G V log(Sigma^T Sigma + eps I)
       with G the symmetrized upstream gradient;
    3. assembly of dJ/dD from U, the split V = (V1 | V2) into leading m
       and trailing d - m columns,
           Q = Sigma_m^-1 (dJ/dV)_1^T - Sigma_m^-1 V1^T (dJ/dV)_2 V2^T
       and the reciprocal-gap matrix P:
           dJ/dD = U Q
                 + U (dJ/dSigma - Q V)_diag V^T
                 + 2 U (P o (-Q V Sigma^T))_sym Sigma V^T.

    With policy='error' a degenerate spectrum (close or tiny singular
    values) raises DegenerateSpectrumError; with policy='clamp' offending
    P denominators are clamped to sign-preserving +-gap_threshold and
    Sigma_m^-1 uses sigma clamped up to sigma_floor.
    """
    dY = as_matrix(dY, "upstream gradient dY")
    m, d = cache.shape
    if dY.shape != (d, d):
        raise ShapeError(f"dY must be {d}x{d}, got {dY.shape}")
    s = cache.factors.S
    _check_spectrum(s, policy, gap_threshold, sigma_floor)

    U = cache.factors.U
    V = cache.factors.V
    G = 0.5 * (dY + dY.T)
    sq = s**2

    VGV = V.T @ G @ V
    dJdSigma = 2.0 * (s / (sq + cache.epsilon))[:, None] * VGV[:m, :]
    dJdV = 2.0 * (G @ V) * cache.log_values[None, :]

    s_safe = np.maximum(s, sigma_floor) if policy == "clamp" else s
    inv_s = 1.0 / s_safe
    V1 = V[:, :m]
    V2 = V[:, m:]
    Q = inv_s[:, None] * (dJdV[:, :m].T - V1.T @ dJdV[:, m:] @ V2.T)

    QV = Q @ V
    diag_term = np.zeros((m, d))
    idx = np.arange(m)
    diag_term[idx, idx] = dJdSigma[idx, idx] - QV[idx, idx]

    P = _gap_matrix(sq, policy, gap_threshold)
    core = P * (-(QV[:, :m] * s[None, :]))
    core = 0.5 * (core + core.T)
    term3 = np.zeros((m, d))
    term3[:, :m] = 2.0 * (core * s[None, :])

    return U @ (Q + (diag_term + term3) @ V.T)


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of a finite-difference check of pool_backward."""

    max_rel_err: float
    argmax: tuple[int, int]
    analytic_at_argmax: float
    numeric_at_argmax: float


def _probe(name: str, d: int, seed: int):
    """Scalar probe loss on Y and its exact gradient dJ/dY."""
    if name == "sum-of-squares":
        return (lambda Y: float(np.sum(Y**2))), (lambda Y: 2.0 * Y)
    if name == "random-linear":
        G = np.random.default_rng(seed).standard_normal((d, d))
        return (lambda Y: float(np.sum(G * Y))), (lambda Y: G.copy())
    raise DomainError(f"unknown probe loss {name!r}")


def grad_check(
    D,
    epsilon: float,
    probe_loss: str = "sum-of-squares",
    step: float = 1e-5,
    probe_seed: int = 0,
) -> GradCheckReport:
    """Compare pool_backward against central finite differences.

    Perturbs every entry of D by +-step, evaluates probe_loss on the
    pooled output, and reports the worst relative disagreement with the
    analytic gradient, normalized per entry by
    max(|analytic|, |numeric|, 1e-8). Degenerate spectra raise rather
    than silently producing garbage.
    """
    D = as_matrix(D, "feature matrix")
    cache = pool_forward(D, epsilon)
    loss, dloss = _probe(probe_loss, D.shape[1], probe_seed)
    analytic = pool_backward(cache, dloss(cache.Y), policy="error")

    m, d = D.shape
    numeric = np.zeros((m, d))
    for i in range(m):
        for j in range(d):
            bumped = D.copy()
            bumped[i, j] = D[i, j] + step
            hi = loss(pool_forward(bumped, epsilon).Y)
            bumped[i, j] = D[i, j] - step
            lo = loss(pool_forward(bumped, epsilon).Y)
            numeric[i, j] = (hi - lo) / (2.0 * step)

    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / scale
    flat = int(np.argmax(rel))
    loc = (flat // d, flat % d)
    return GradCheckReport(
        max_rel_err=float(rel[loc]),
        argmax=loc,
        analytic_at_argmax=float(analytic[loc]),
        numeric_at_argmax=float(numeric[loc]),
    )
