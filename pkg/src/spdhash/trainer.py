"""Mini-batch SGD training of the two-branch hash network.

Batches use second-order sampling: S subjects drawn without replacement,
then P video-image pairs per subject, the image being one frame drawn
from the paired video. Each step runs both forward branches, evaluates
the triplet objective, backpropagates through the heads and the pooling
step into the shared encoder, and applies SGD with momentum and weight
decay (weights only, never biases).

Everything is driven by one seed: the model initialization and the batch
stream are independent spawns of it, so a (seed, config, dataset) triple
reproduces the final weights bit-exactly regardless of thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import FeatureArchive, Record
from .errors import (
    DatasetError,
    DegenerateSpectrumError,
    DomainError,
    NumericalError,
)
from .hashnet import (
    Model,
    ParamGrads,
    backward_heads,
    forward_image,
    forward_video,
    init_model,
)
from .objective import IMAGE, VIDEO, ObjectiveConfig, batch_objective

__all__ = [
    "TrainConfig",
    "HistoryRecord",
    "TrainHistory",
    "sample_batch",
    "forward_batch",
    "sgd_step",
    "train",
    "model_grad_check",
    "ModelGradCheckReport",
]

_POLICIES = ("error", "clamp")
_ACTIVATIONS = ("identity", "tanh")

HISTORY_COLUMNS = "step,J,J_er,J_e,J_r,active_er,active_e,active_r"


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    learning_rate: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    steps: int = 1000
    subjects_per_batch: int = 6
    pairs_per_subject: int = 5
    alpha: float = 2.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    K: int = 12
    epsilon: float = 1e-3
    encoded_dim: int = 32
    encoder_activation: str = "identity"
    seed: int = 0
    # degenerate singular spectra abort with 'error' (right for gradient
    # checks) or clamp reciprocal gaps and continue (right for long runs)
    policy: str = "clamp"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0.0:
            raise DomainError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise DomainError(f"weight decay must be nonnegative, got {self.weight_decay}")
        if self.steps < 0:
            raise DomainError(f"step count must be nonnegative, got {self.steps}")
        if self.subjects_per_batch < 2:
            raise DomainError(
                f"need at least 2 subjects per batch, got {self.subjects_per_batch}"
            )
        if self.pairs_per_subject < 1:
            raise DomainError(
                f"need at least 1 pair per subject, got {self.pairs_per_subject}"
            )
        if self.alpha <= 0.0:
            raise DomainError(f"margin alpha must be positive, got {self.alpha}")
        if self.lambda1 < 0.0 or self.lambda2 < 0.0:
            raise DomainError("family weights must be nonnegative")
        if self.K < 1 or self.encoded_dim < 1:
            raise DomainError("K and the encoded dimension must be positive")
        if self.epsilon <= 0.0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if self.encoder_activation not in _ACTIVATIONS:
            raise DomainError(f"unknown encoder activation {self.encoder_activation!r}")
        if self.policy not in _POLICIES:
            raise DomainError(f"unknown degenerate-spectrum policy {self.policy!r}")

    def objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(
            alpha=self.alpha, lambda1=self.lambda1, lambda2=self.lambda2, K=self.K
        )


@dataclass(frozen=True)
class HistoryRecord:
    """One training step's objective breakdown and gradient magnitude."""

    step: int
    J: float
    J_er: float
    J_e: float
    J_r: float
    active_er: float
    active_e: float
    active_r: float
    grad_norm: float


@dataclass
class TrainHistory:
    """Per-step records, one per executed step."""

    records: list[HistoryRecord] = field(default_factory=list)

    def csv_lines(self) -> list[str]:
        lines = [HISTORY_COLUMNS]
        for r in self.records:
            lines.append(
                f"{r.step},{r.J!r},{r.J_er!r},{r.J_e!r},{r.J_r!r},"
                f"{r.active_er!r},{r.active_e!r},{r.active_r!r}"
            )
        return lines

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("\n".join(self.csv_lines()) + "\n")


def _videos_by_subject(archive: FeatureArchive) -> dict[int, list[Record]]:
    out: dict[int, list[Record]] = {}
    for _, rec in archive.by_modality(VIDEO):
        out.setdefault(int(rec.label), []).append(rec)
    return out


def sample_batch(
    archive: FeatureArchive,
    subjects_per_batch: int,
    pairs_per_subject: int,
    rng: np.random.Generator,
) -> list[Record]:
    """Draw S subjects, then P video-image pairs per subject.

    Videos are drawn without replacement among the subject's videos; the
    image of a pair is a uniformly chosen frame of the paired video. The
    batch lists each pair's video immediately before its image, subjects
    in draw order, so the layout is reproducible from the rng state.
    """
    S, P = subjects_per_batch, pairs_per_subject
    by_subject = _videos_by_subject(archive)
    if len(by_subject) < S:
        raise DatasetError(
            f"batch needs {S} subjects but the dataset has {len(by_subject)}"
        )
    eligible = np.array(
        sorted(lab for lab, vids in by_subject.items() if len(vids) >= P),
        dtype=np.int64,
    )
    if eligible.size < S:
        raise DatasetError(
            f"batch needs {S} subjects with at least {P} videos each; "
            f"only {eligible.size} qualify"
        )
    batch: list[Record] = []
    subjects = rng.choice(eligible, size=S, replace=False)
    for label in subjects:
        vids = by_subject[int(label)]
        picks = rng.choice(len(vids), size=P, replace=False)
        for vid_idx in picks:
            video = vids[int(vid_idx)]
            frame = int(rng.integers(video.features.shape[0]))
            batch.append(video)
            batch.append(
                Record(
                    label=video.label,
                    modality=IMAGE,
                    features=video.features[frame : frame + 1],
                )
            )
    return batch


def forward_batch(model: Model, samples) -> tuple[list, np.ndarray, np.ndarray, list]:
    """Run the matching branch on every sample.

    Returns (activations, codes, labels, modalities) with codes stacked
    as an (n, K) array aligned with the rest.
    """
    acts: list = []
    labels: list[int] = []
    mods: list[str] = []
    for rec in samples:
        if rec.modality == IMAGE:
            acts.append(forward_image(rec.features[0], model))
        else:
            acts.append(forward_video(rec.features, model))
        labels.append(int(rec.label))
        mods.append(rec.modality)
    codes = np.stack([a.code for a in acts]) if acts else np.zeros((0, model.K))
    return acts, codes, np.asarray(labels, dtype=np.int64), mods


def sgd_step(
    model: Model, grads: ParamGrads, velocity: ParamGrads, cfg: TrainConfig
) -> tuple[Model, ParamGrads]:
    """One momentum update, in place:

        v <- momentum * v - lr * (g + weight_decay * theta)
        theta <- theta + v

    Weight decay applies to weight matrices only; biases see just their
    gradient, so a zero-gradient bias is a fixed point.
    """
    for (name, p, is_bias), (_, g, _), (_, v, _) in zip(
        model.parameters(), grads.arrays(), velocity.arrays()
    ):
        if p.shape != g.shape or p.shape != v.shape:
            raise DomainError(f"shape mismatch updating {name}")
        eff = g if is_bias else g + cfg.weight_decay * p
        v *= cfg.momentum
        v -= cfg.learning_rate * eff
        p += v
    return model, velocity


def _check_finite(grads: ParamGrads, step: int) -> float:
    total = 0.0
    for name, arr, _ in grads.arrays():
        if not np.all(np.isfinite(arr)):
            raise NumericalError(
                f"non-finite gradient in {name} at step {step}"
            )
        total += float(np.sum(arr**2))
    return float(np.sqrt(total))


def train(archive: FeatureArchive, cfg: TrainConfig) -> tuple[Model, TrainHistory]:
    """Run the full optimization and return the model with its history.

    With steps = 0 the freshly initialized model comes back untouched.
    A degenerate singular spectrum under policy='error' aborts with the
    step number attached; non-finite objective values or gradients abort
    naming the offending tensor.
    """
    root = np.random.SeedSequence(cfg.seed)
    init_seed, batch_seed = root.spawn(2)
    model = init_model(
        d0=archive.d0,
        d=cfg.encoded_dim,
        K=cfg.K,
        epsilon=cfg.epsilon,
        seed=init_seed,
        encoder_activation=cfg.encoder_activation,
    )
    rng = np.random.default_rng(batch_seed)
    velocity = ParamGrads.zeros_like(model)
    ocfg = cfg.objective()
    history = TrainHistory()

    for step in range(cfg.steps):
        batch = sample_batch(
            archive, cfg.subjects_per_batch, cfg.pairs_per_subject, rng
        )
        acts, codes, labels, mods = forward_batch(model, batch)
        result = batch_objective(codes, labels, mods, ocfg)
        if not np.isfinite(result.J):
            raise NumericalError(f"objective is non-finite at step {step}")
        try:
            grads, _ = backward_heads(acts, result.grads, model, policy=cfg.policy)
        except DegenerateSpectrumError as exc:
            raise DegenerateSpectrumError(f"step {step}: {exc}") from exc
        grad_norm = _check_finite(grads, step)
        sgd_step(model, grads, velocity, cfg)
        history.records.append(
            HistoryRecord(
                step=step,
                J=result.J,
                J_er=result.J_er,
                J_e=result.J_e,
                J_r=result.J_r,
                active_er=result.active_er,
                active_e=result.active_e,
                active_r=result.active_r,
                grad_norm=grad_norm,
            )
        )
    return model, history


@dataclass(frozen=True)
class ModelGradCheckReport:
    """Worst finite-difference disagreement over all model parameters."""

    max_rel_err: float
    param: str
    index: int
    analytic: float
    numeric: float


def _batch_J(model: Model, samples, ocfg: ObjectiveConfig) -> float:
    _, codes, labels, mods = forward_batch(model, samples)
    return batch_objective(codes, labels, mods, ocfg).J


def model_grad_check(
    model: Model,
    samples,
    ocfg: ObjectiveConfig,
    step: float = 1e-5,
) -> ModelGradCheckReport:
    """Central finite differences of the whole pipeline, one parameter
    entry at a time, against the analytic gradients.

    Relative error is normalized per entry by max(|analytic|, |numeric|,
    1e-8). Uses the strict degenerate-spectrum policy throughout: a
    check on an unstable spectrum should fail loudly, not quietly pass.
    """
    acts, codes, labels, mods = forward_batch(model, samples)
    result = batch_objective(codes, labels, mods, ocfg)
    grads, _ = backward_heads(acts, result.grads, model, policy="error")

    worst = ModelGradCheckReport(0.0, "", -1, 0.0, 0.0)
    for (name, param, _), (_, grad, _) in zip(model.parameters(), grads.arrays()):
        flat_p = param.reshape(-1)
        flat_g = grad.reshape(-1)
        for i in range(flat_p.size):
            keep = flat_p[i]
            flat_p[i] = keep + step
            hi = _batch_J(model, samples, ocfg)
            flat_p[i] = keep - step
            lo = _batch_J(model, samples, ocfg)
            flat_p[i] = keep
            numeric = (hi - lo) / (2.0 * step)
            denom = max(abs(flat_g[i]), abs(numeric), 1e-8)
            rel = abs(flat_g[i] - numeric) / denom
            if rel > worst.max_rel_err:
                worst = ModelGradCheckReport(
                    max_rel_err=rel,
                    param=name,
                    index=i,
                    analytic=float(flat_g[i]),
                    numeric=float(numeric),
                )
    return worst
