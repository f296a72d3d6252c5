"""Two-branch hash network over a shared linear feature encoder.

Images are d0-dimensional descriptors; videos are sequences of such
descriptors (at most 30 frames after ingestion). Both pass through one
shared affine encoder into R^d. The image branch applies an affine hash
head plus sigmoid directly to the encoded vector; the video branch first
stacks the encoded frames into an m x d matrix, pools it into a d x d
log-covariance matrix, flattens that row-major, and applies its own
affine head plus sigmoid. Both branches emit length-K relaxed codes with
entries strictly inside (0, 1); thresholding at 0.5 (ties to 1) yields
binary codes.

Codes are plain numpy arrays: relaxed codes are float64 K-vectors in the
open unit interval, binary codes are uint8 K-vectors of 0/1. Invariants
are enforced where the arrays are produced rather than by wrapper types.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covpool import PoolCache, pool_backward, pool_forward
from .errors import DomainError, EmptyVideoError, NumericalError, ShapeError

__all__ = [
    "MAX_FRAMES",
    "Model",
    "ImageForward",
    "VideoForward",
    "ParamGrads",
    "init_model",
    "sigmoid",
    "encode_feature",
    "forward_image",
    "forward_video",
    "binarize",
    "backward_heads",
]

# Videos are clipped to this many frames at ingestion; the forward pass
# re-checks so the m <= d pooling requirement is diagnosable here.
MAX_FRAMES = 30

_ACTIVATIONS = ("identity", "tanh")

# Sigmoid outputs are pinned to the largest open subinterval of (0, 1)
# representable in float64 so downstream code can rely on strict bounds.
_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def _vector(x, name: str, length: int | None = None) -> np.ndarray:
    v = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if v.ndim != 1:
        raise ShapeError(f"{name} must be a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"{name} contains non-finite entries")
    if length is not None and v.size != length:
        raise ShapeError(f"{name} must have length {length}, got {v.size}")
    return v


@dataclass
class Model:
    """Parameters of the encoder and the two hash heads.

    Shapes: W_enc d x d0 with bias d, W_e K x d with bias K, W_r K x d^2
    with bias K. ``epsilon`` is the pooling regularizer; the encoder
    activation is 'identity' (default) or 'tanh'.
    """

    W_enc: np.ndarray
    b_enc: np.ndarray
    W_e: np.ndarray
    b_e: np.ndarray
    W_r: np.ndarray
    b_r: np.ndarray
    epsilon: float
    encoder_activation: str = "identity"

    def __post_init__(self) -> None:
        for name in ("W_enc", "b_enc", "W_e", "b_e", "W_r", "b_r"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"model parameter {name} contains non-finite entries")
            setattr(self, name, arr)
        d, d0 = self.W_enc.shape
        K = self.b_e.size
        if self.b_enc.shape != (d,):
            raise ShapeError(f"b_enc must have length {d}, got {self.b_enc.shape}")
        if self.W_e.shape != (K, d):
            raise ShapeError(f"W_e must be {K}x{d}, got {self.W_e.shape}")
        if self.W_r.shape != (K, d * d):
            raise ShapeError(f"W_r must be {K}x{d * d}, got {self.W_r.shape}")
        if self.b_r.shape != (K,):
            raise ShapeError(f"b_r must have length {K}, got {self.b_r.shape}")
        if K < 1:
            raise DomainError("code length K must be at least 1")
        if self.epsilon <= 0.0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if self.encoder_activation not in _ACTIVATIONS:
            raise DomainError(
                f"unknown encoder activation {self.encoder_activation!r}"
            )

    @property
    def d0(self) -> int:
        return self.W_enc.shape[1]

    @property
    def d(self) -> int:
        return self.W_enc.shape[0]

    @property
    def K(self) -> int:
        return self.b_e.size

    def parameters(self) -> list[tuple[str, np.ndarray, bool]]:
        """(name, array, is_bias) in the fixed serialization order."""
        return [
            ("W_enc", self.W_enc, False),
            ("b_enc", self.b_enc, True),
            ("W_e", self.W_e, False),
            ("b_e", self.b_e, True),
            ("W_r", self.W_r, False),
            ("b_r", self.b_r, True),
        ]


def init_model(
    d0: int,
    d: int,
    K: int,
    epsilon: float,
    seed: int,
    encoder_activation: str = "identity",
) -> Model:
    """Seeded uniform initialization in [-a, a], a = sqrt(6/(fan_in+fan_out)).

    Biases start at zero. Weights are drawn in the fixed order W_enc,
    W_e, W_r so a seed pins every parameter.
    """
    if min(d0, d, K) < 1:
        raise DomainError(f"dimensions must be positive, got d0={d0} d={d} K={K}")
    rng = np.random.default_rng(seed)

    def draw(rows: int, cols: int) -> np.ndarray:
        a = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-a, a, size=(rows, cols))

    return Model(
        W_enc=draw(d, d0),
        b_enc=np.zeros(d),
        W_e=draw(K, d),
        b_e=np.zeros(K),
        W_r=draw(K, d * d),
        b_r=np.zeros(K),
        epsilon=float(epsilon),
        encoder_activation=encoder_activation,
    )


def sigmoid(t: np.ndarray) -> np.ndarray:
    """Numerically safe logistic function with outputs strictly in (0, 1)."""
    out = np.empty_like(t, dtype=np.float64)
    pos = t >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, _SIG_LO, _SIG_HI)


def _encode_matrix(X: np.ndarray, model: Model) -> np.ndarray:
    Z = X @ model.W_enc.T + model.b_enc
    if model.encoder_activation == "tanh":
        Z = np.tanh(Z)
    return Z


def encode_feature(x, model: Model) -> np.ndarray:
    """Shared encoder: affine map of a raw descriptor into R^d, with the
    optional tanh applied when the model is configured for it."""
    x = _vector(x, "descriptor", model.d0)
    return _encode_matrix(x[None, :], model)[0]


@dataclass(frozen=True)
class ImageForward:
    """Activations of one image pass kept for backprop."""

    x: np.ndarray
    z: np.ndarray
    code: np.ndarray


@dataclass(frozen=True)
class VideoForward:
    """Activations of one video pass kept for backprop."""

    X: np.ndarray  # m x d0 raw frames
    Z: np.ndarray  # m x d encoded frames
    pool: PoolCache
    yvec: np.ndarray  # row-major flattening of pool.Y
    code: np.ndarray


def forward_image(x, model: Model) -> ImageForward:
    """Image branch: encode, affine head, sigmoid."""
    x = _vector(x, "descriptor", model.d0)
    z = _encode_matrix(x[None, :], model)[0]
    code = sigmoid(model.W_e @ z + model.b_e)
    return ImageForward(x=x, z=z, code=code)


def forward_video(frames, model: Model) -> VideoForward:
    """Video branch: encode frames, pool to log-covariance, affine head,
    sigmoid. Frames arrive as an m x d0 array or a sequence of rows."""
    X = np.ascontiguousarray(np.asarray(frames, dtype=np.float64))
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyVideoError("video must contain at least one frame")
    if not np.all(np.isfinite(X)):
        raise NumericalError("video frames contain non-finite entries")
    m = X.shape[0]
    if X.shape[1] != model.d0:
        raise ShapeError(f"frames must have {model.d0} columns, got {X.shape[1]}")
    if m > MAX_FRAMES:
        raise ShapeError(f"video has {m} frames; ingestion must clip to {MAX_FRAMES}")
    Z = _encode_matrix(X, model)
    pool = pool_forward(Z, model.epsilon)
    yvec = pool.Y.reshape(-1)
    code = sigmoid(model.W_r @ yvec + model.b_r)
    return VideoForward(X=X, Z=Z, pool=pool, yvec=yvec, code=code)


def binarize(code) -> np.ndarray:
    """Threshold a relaxed code at 0.5; ties map to 1."""
    code = _vector(code, "relaxed code")
    return (code >= 0.5).astype(np.uint8)


@dataclass
class ParamGrads:
    """Gradient accumulator with one slot per model parameter."""

    W_enc: np.ndarray
    b_enc: np.ndarray
    W_e: np.ndarray
    b_e: np.ndarray
    W_r: np.ndarray
    b_r: np.ndarray

    @classmethod
    def zeros_like(cls, model: Model) -> "ParamGrads":
        return cls(
            W_enc=np.zeros_like(model.W_enc),
            b_enc=np.zeros_like(model.b_enc),
            W_e=np.zeros_like(model.W_e),
            b_e=np.zeros_like(model.b_e),
            W_r=np.zeros_like(model.W_r),
            b_r=np.zeros_like(model.b_r),
        )

    def arrays(self) -> list[tuple[str, np.ndarray, bool]]:
        return [
            ("W_enc", self.W_enc, False),
            ("b_enc", self.b_enc, True),
            ("W_e", self.W_e, False),
            ("b_e", self.b_e, True),
            ("W_r", self.W_r, False),
            ("b_r", self.b_r, True),
        ]


def backward_heads(
    activations,
    code_grads,
    model: Model,
    policy: str = "error",
) -> tuple[ParamGrads, list[np.ndarray]]:
    """Backpropagate per-sample code gradients into parameter gradients.

    ``activations`` holds ImageForward/VideoForward records and
    ``code_grads`` the aligned upstream dJ/dcode K-vectors. Each sample's
    gradient passes through the sigmoid (g * s * (1 - s)) and its head;
    video gradients continue through the pooling backward into per-frame
    encoder inputs. Encoder gradients from both branches accumulate
    additively in batch order, which keeps runs bit-identical.

    Returns the accumulated parameter gradients and, per sample, the
    gradient with respect to its raw descriptor(s): a d0-vector for
    images, an m x d0 matrix for videos. ``policy`` is forwarded to the
    pooling backward.
    """
    if len(activations) != len(code_grads):
        raise ShapeError(
            f"{len(activations)} activations but {len(code_grads)} code gradients"
        )
    grads = ParamGrads.zeros_like(model)
    input_grads: list[np.ndarray] = []
    for act, gcode in zip(activations, code_grads):
        gcode = _vector(gcode, "code gradient", model.K)
        s = act.code
        t = gcode * s * (1.0 - s)
        if isinstance(act, ImageForward):
            grads.W_e += np.outer(t, act.z)
            grads.b_e += t
            gZ = (model.W_e.T @ t)[None, :]
            X = act.x[None, :]
            Zout = act.z[None, :]
        elif isinstance(act, VideoForward):
            grads.W_r += np.outer(t, act.yvec)
            grads.b_r += t
            gY = (model.W_r.T @ t).reshape(model.d, model.d)
            gZ = pool_backward(act.pool, gY, policy=policy)
            X = act.X
            Zout = act.Z
        else:
            raise ShapeError(f"unknown activation record {type(act).__name__}")
        if model.encoder_activation == "tanh":
            gpre = gZ * (1.0 - Zout**2)
        else:
            gpre = gZ
        grads.W_enc += gpre.T @ X
        grads.b_enc += gpre.sum(axis=0)
        ginput = gpre @ model.W_enc
        input_grads.append(ginput[0] if isinstance(act, ImageForward) else ginput)
    return grads, input_grads
