"""Binary dataset archives, model checkpoints, and synthetic data.

Both formats are little-endian regardless of host and round-trip
losslessly. Archives store descriptors as 32-bit floats; reading
promotes them to 64-bit, which is the precision used everywhere else.
Checkpoints store parameters as 64-bit floats so a save/load cycle is
bit-exact.

Archive layout ('SPDH'): magic, u32 version, u32 d0, u32 record count,
then per record u32 label, u8 modality flag (0 image, 1 video), u32
frame count m, and m*d0 f32 features row-major. Image records have
m = 1; video records have 1 <= m <= 30 (ingestion clips longer videos).

Checkpoint layout ('SPDM'): magic, u32 version, u32 d0, u32 d, u32 K,
f64 epsilon, u8 encoder-activation flag (0 identity, 1 tanh), then
W_enc, b_enc, W_e, b_e, W_r, b_r as f64 arrays row-major in this exact
order.

The synthetic generator draws class centers from the seed alone and
sample noise from a separately keyed stream, so archives generated with
the same seed but different sample streams share class structure while
holding disjoint data; that is how held-out evaluation sets are made.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorruptHeaderError,
    DatasetError,
    DomainError,
    FileFormatError,
    TruncatedFileError,
    VersionMismatchError,
)
from .hashnet import MAX_FRAMES, Model
from .objective import IMAGE, VIDEO

__all__ = [
    "ARCHIVE_MAGIC",
    "CHECKPOINT_MAGIC",
    "FORMAT_VERSION",
    "Record",
    "FeatureArchive",
    "SynthConfig",
    "synth_generate",
    "archive_bytes",
    "write_archive",
    "read_archive",
    "checkpoint_bytes",
    "write_checkpoint",
    "read_checkpoint",
]

ARCHIVE_MAGIC = b"SPDH"
CHECKPOINT_MAGIC = b"SPDM"
FORMAT_VERSION = 1

_MODALITY_FLAGS = {IMAGE: 0, VIDEO: 1}
_FLAG_MODALITIES = {0: IMAGE, 1: VIDEO}
_ACTIVATION_FLAGS = {"identity": 0, "tanh": 1}
_FLAG_ACTIVATIONS = {0: "identity", 1: "tanh"}


@dataclass(frozen=True)
class Record:
    """One labeled sample: an image (single row) or a video (m rows)."""

    label: int
    modality: str
    features: np.ndarray  # m x d0, float64

    def __post_init__(self) -> None:
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise DatasetError(
                f"record features must be a nonempty 2-D array, got shape {feats.shape}"
            )
        object.__setattr__(self, "features", feats)
        if self.modality not in _MODALITY_FLAGS:
            raise DatasetError(f"unknown modality {self.modality!r}")
        if self.modality == IMAGE and feats.shape[0] != 1:
            raise DatasetError(f"image record must have one row, got {feats.shape[0]}")
        if self.modality == VIDEO and feats.shape[0] > MAX_FRAMES:
            raise DatasetError(
                f"video record has {feats.shape[0]} frames, limit {MAX_FRAMES}"
            )
        if not 0 <= int(self.label) < 2**32:
            raise DatasetError(f"label {self.label} does not fit an unsigned 32-bit int")


@dataclass(frozen=True)
class FeatureArchive:
    """A homogeneous collection of records sharing descriptor width d0."""

    d0: int
    records: tuple[Record, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        for i, rec in enumerate(self.records):
            if rec.features.shape[1] != self.d0:
                raise DatasetError(
                    f"record {i} has descriptor width {rec.features.shape[1]}, "
                    f"archive declares {self.d0}"
                )

    def by_modality(self, modality: str) -> list[tuple[int, Record]]:
        """(archive index, record) pairs of the given modality, in order."""
        if modality not in _MODALITY_FLAGS:
            raise DatasetError(f"unknown modality {modality!r}")
        return [(i, r) for i, r in enumerate(self.records) if r.modality == modality]


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic labeled dataset.

    Classes sit at Gaussian centers scaled by ``center_spread``; each
    video adds a class-local offset at ``noise_scale`` plus per-frame
    jitter at ``drift_scale``. Every video also contributes
    ``images_per_video`` of its own frames as image records.
    ``sample_stream`` keys the noise stream: archives with equal seeds
    but different streams share centers and hold disjoint samples.
    """

    classes: int = 10
    videos_per_class: int = 20
    frames_per_video: int = 15
    d0: int = 32
    center_spread: float = 1.0
    noise_scale: float = 0.3
    drift_scale: float = 0.1
    seed: int = 0
    images_per_video: int = 1
    sample_stream: int = 0

    def __post_init__(self) -> None:
        if self.classes < 2:
            raise DomainError(f"need at least 2 classes, got {self.classes}")
        if self.videos_per_class < 1 or self.frames_per_video < 1 or self.d0 < 1:
            raise DomainError("videos per class, frames, and d0 must be positive")
        if self.frames_per_video > MAX_FRAMES:
            raise DomainError(
                f"frames per video exceeds the {MAX_FRAMES}-frame ingestion limit"
            )
        if min(self.center_spread, self.noise_scale, self.drift_scale) <= 0.0:
            raise DomainError("all scales must be positive")
        if self.images_per_video < 0:
            raise DomainError("images per video must be nonnegative")


def synth_generate(cfg: SynthConfig) -> FeatureArchive:
    """Draw a labeled archive: video records for every class, then image
    records holding frames sampled from those videos.

    Centers depend only on the seed; video noise, frame drift, and image
    frame choices come from the (seed, sample_stream) stream in a fixed
    order, so equal configs give byte-identical archives.
    """
    center_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    sample_rng = np.random.default_rng(
        np.random.SeedSequence(cfg.seed, spawn_key=(cfg.sample_stream,))
    )
    centers = cfg.center_spread * center_rng.standard_normal((cfg.classes, cfg.d0))

    videos: list[Record] = []
    for label in range(cfg.classes):
        for _ in range(cfg.videos_per_class):
            offset = cfg.noise_scale * sample_rng.standard_normal(cfg.d0)
            drift = cfg.drift_scale * sample_rng.standard_normal(
                (cfg.frames_per_video, cfg.d0)
            )
            frames = centers[label] + offset + drift
            videos.append(Record(label=label, modality=VIDEO, features=frames))

    images: list[Record] = []
    for rec in videos:
        m = rec.features.shape[0]
        k = min(cfg.images_per_video, m)
        picks = sample_rng.choice(m, size=k, replace=False)
        for frame_idx in picks:
            images.append(
                Record(
                    label=rec.label,
                    modality=IMAGE,
                    features=rec.features[frame_idx : frame_idx + 1],
                )
            )
    return FeatureArchive(d0=cfg.d0, records=tuple(videos) + tuple(images))


def archive_bytes(archive: FeatureArchive) -> bytes:
    """Serialize an archive; descriptors are narrowed to 32-bit floats."""
    parts = [
        ARCHIVE_MAGIC,
        struct.pack("<III", FORMAT_VERSION, archive.d0, len(archive.records)),
    ]
    for rec in archive.records:
        m = rec.features.shape[0]
        parts.append(
            struct.pack("<IBI", int(rec.label), _MODALITY_FLAGS[rec.modality], m)
        )
        parts.append(np.ascontiguousarray(rec.features, dtype="<f4").tobytes())
    return b"".join(parts)


def write_archive(archive: FeatureArchive, path) -> None:
    with open(path, "wb") as fh:
        fh.write(archive_bytes(archive))


class _Reader:
    """Cursor over a byte string that converts exhaustion into
    TruncatedFileError."""

    def __init__(self, data: bytes, what: str) -> None:
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"{self.what} ends after {len(self.data)} bytes; "
                f"needed {self.pos + n}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self) -> None:
        if self.pos != len(self.data):
            raise CorruptHeaderError(
                f"{self.what} declares {self.pos} bytes of content but the file "
                f"holds {len(self.data)}"
            )


def read_archive(path) -> FeatureArchive:
    """Parse and validate an archive file.

    Wrong magic raises CorruptHeaderError, an unsupported version
    VersionMismatchError, early EOF TruncatedFileError, and invalid
    record fields FileFormatError.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, "archive")
    if r.take(4) != ARCHIVE_MAGIC:
        raise CorruptHeaderError(
            f"bad archive magic (expected {ARCHIVE_MAGIC!r})"
        )
    version, d0, count = r.unpack("<III")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"archive version {version} unsupported (expected {FORMAT_VERSION})"
        )
    if d0 < 1:
        raise CorruptHeaderError(f"archive declares descriptor width {d0}")
    records = []
    for i in range(count):
        label, flag, m = r.unpack("<IBI")
        if flag not in _FLAG_MODALITIES:
            raise FileFormatError(f"record {i}: invalid modality flag {flag}")
        modality = _FLAG_MODALITIES[flag]
        if m < 1:
            raise FileFormatError(f"record {i}: frame count {m} invalid")
        if modality == IMAGE and m != 1:
            raise FileFormatError(f"record {i}: image with {m} rows")
        if modality == VIDEO and m > MAX_FRAMES:
            raise FileFormatError(
                f"record {i}: video with {m} frames exceeds the limit {MAX_FRAMES}"
            )
        raw = r.take(4 * m * d0)
        feats = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(m, d0)
        records.append(Record(label=label, modality=modality, features=feats))
    r.done()
    return FeatureArchive(d0=d0, records=tuple(records))


def checkpoint_bytes(model: Model) -> bytes:
    """Serialize a model; all parameters stay 64-bit so the round trip
    is bit-exact."""
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack(
            "<IIIIdB",
            FORMAT_VERSION,
            model.d0,
            model.d,
            model.K,
            model.epsilon,
            _ACTIVATION_FLAGS[model.encoder_activation],
        ),
    ]
    for _, arr, _ in model.parameters():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def write_checkpoint(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def read_checkpoint(path) -> Model:
    """Parse and validate a checkpoint file; error taxonomy matches
    read_archive."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, "checkpoint")
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CorruptHeaderError(
            f"bad checkpoint magic (expected {CHECKPOINT_MAGIC!r})"
        )
    version, d0, d, K, epsilon, act_flag = r.unpack("<IIIIdB")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {version} unsupported (expected {FORMAT_VERSION})"
        )
    if min(d0, d, K) < 1:
        raise CorruptHeaderError(
            f"checkpoint declares degenerate dimensions d0={d0} d={d} K={K}"
        )
    if act_flag not in _FLAG_ACTIVATIONS:
        raise FileFormatError(f"unknown encoder activation flag {act_flag}")

    def arr(*shape: int) -> np.ndarray:
        n = int(np.prod(shape))
        raw = r.take(8 * n)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

    W_enc = arr(d, d0)
    b_enc = arr(d)
    W_e = arr(K, d)
    b_e = arr(K)
    W_r = arr(K, d * d)
    b_r = arr(K)
    r.done()
    return Model(
        W_enc=W_enc,
        b_enc=b_enc,
        W_e=W_e,
        b_e=b_e,
        W_r=W_r,
        b_r=b_r,
        epsilon=epsilon,
        encoder_activation=_FLAG_ACTIVATIONS[act_flag],
    )
