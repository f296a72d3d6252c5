"""Command-line pipeline: synth, train, encode, retrieve, eval, gradcheck.

Every tunable is accepted both as a key in a JSON config file and as a
flag; flags win. Usage errors exit with status 2 (argparse), runtime
failures print one diagnostic line to standard error and exit with
status 1. All outputs are deterministic functions of the inputs and the
seed, byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .covpool import grad_check
from .dataio import (
    FeatureArchive,
    SynthConfig,
    read_archive,
    read_checkpoint,
    synth_generate,
    write_archive,
    write_checkpoint,
)
from .errors import DomainError, SpdHashError
from .hashnet import Model, binarize, forward_image, forward_video
from .objective import IMAGE, VIDEO
from .retrieval import (
    average_precisions,
    build_index,
    pr_curve,
    query,
    write_map_csv,
    write_pr_csv,
)
from .trainer import TrainConfig, train

__all__ = ["main", "run"]

GRADCHECK_TOLERANCE = 1e-4

_MODES = {
    "i2v": (IMAGE, VIDEO),
    "v2i": (VIDEO, IMAGE),
    "v2v": (VIDEO, VIDEO),
}


def _build_config(cls, config_path, overrides: dict):
    """Materialize a config dataclass from an optional JSON file plus
    flag overrides; flags win over file keys."""
    data: dict = {}
    if config_path is not None:
        with open(config_path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise DomainError(f"config file {config_path} must hold a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - valid)
    if unknown:
        raise DomainError(f"unknown config keys: {', '.join(unknown)}")
    return cls(**data)


def _encode_record(record, model: Model) -> np.ndarray:
    if record.modality == IMAGE:
        return binarize(forward_image(record.features[0], model).code)
    return binarize(forward_video(record.features, model).code)


def _codes_for(archive: FeatureArchive, modality: str, model: Model):
    """(ids, labels, binary code matrix) of the archive's given modality."""
    entries = archive.by_modality(modality)
    if not entries:
        raise DomainError(f"archive contains no {modality} records")
    ids = np.array([i for i, _ in entries], dtype=np.int64)
    labels = np.array([r.label for _, r in entries], dtype=np.int64)
    codes = np.stack([_encode_record(r, model) for _, r in entries])
    return ids, labels, codes


def _cmd_synth(args) -> int:
    overrides = {
        "classes": args.classes,
        "videos_per_class": args.videos_per_class,
        "frames_per_video": args.frames_per_video,
        "d0": args.d0,
        "center_spread": args.center_spread,
        "noise_scale": args.noise_scale,
        "drift_scale": args.drift_scale,
        "seed": args.seed,
        "images_per_video": args.images_per_video,
        "sample_stream": args.sample_stream,
    }
    cfg = _build_config(SynthConfig, args.config, overrides)
    write_archive(synth_generate(cfg), args.out)
    return 0


def _cmd_train(args) -> int:
    overrides = {
        "learning_rate": args.learning_rate,
        "momentum": args.momentum,
        "weight_decay": args.weight_decay,
        "steps": args.steps,
        "subjects_per_batch": args.subjects,
        "pairs_per_subject": args.pairs,
        "alpha": args.alpha,
        "lambda1": args.lambda1,
        "lambda2": args.lambda2,
        "K": args.bits,
        "epsilon": args.epsilon,
        "encoded_dim": args.encoded_dim,
        "encoder_activation": args.encoder_activation,
        "seed": args.seed,
        "policy": args.policy,
    }
    cfg = _build_config(TrainConfig, args.config, overrides)
    archive = read_archive(args.data)
    model, history = train(archive, cfg)
    write_checkpoint(model, args.out)
    if args.history is not None:
        history.write_csv(args.history)
    if history.records:
        print(
            f"trained {cfg.steps} steps: J {history.records[0].J:.6f} -> "
            f"{history.records[-1].J:.6f}"
        )
    return 0


def _cmd_encode(args) -> int:
    model = read_checkpoint(args.model)
    archive = read_archive(args.data)
    lines = ["id,modality,label,bits"]
    for i, record in enumerate(archive.records):
        bits = "".join(str(int(b)) for b in _encode_record(record, model))
        lines.append(f"{i},{record.modality},{record.label},{bits}")
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def _retrieval_setup(args):
    model = read_checkpoint(args.model)
    qmod, dbmod = _MODES[args.mode]
    qids, qlabels, qcodes = _codes_for(read_archive(args.query_data), qmod, model)
    dbids, dblabels, dbcodes = _codes_for(read_archive(args.db_data), dbmod, model)
    index = build_index(dbcodes, dblabels, ids=dbids, modality=dbmod)
    return qids, qlabels, qcodes, index


def _cmd_retrieve(args) -> int:
    qids, _, qcodes, index = _retrieval_setup(args)
    lines = ["query_id,rank,db_id,db_label,distance"]
    for qid, code in zip(qids, qcodes):
        ranked = query(index, code)
        for rank, (db_id, db_label, dist) in enumerate(ranked, start=1):
            if rank > args.topk:
                break
            lines.append(f"{qid},{rank},{db_id},{db_label},{dist}")
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_eval(args) -> int:
    qids, qlabels, qcodes, index = _retrieval_setup(args)
    aps = average_precisions(qcodes, qlabels, index)
    value = float(np.mean(aps))
    if args.out_map is not None:
        write_map_csv(args.out_map, qids, qlabels, aps)
    if args.out_pr is not None:
        write_pr_csv(args.out_pr, pr_curve(qcodes, qlabels, index))
    print(f"mAP {value!r}")
    return 0


def _cmd_gradcheck(args) -> int:
    try:
        m, d = (int(part) for part in args.shape.split(","))
    except ValueError:
        raise DomainError(f"--shape must be 'm,d', got {args.shape!r}") from None
    D = np.random.default_rng(args.seed).standard_normal((m, d))
    worst = 0.0
    for probe in ("sum-of-squares", "random-linear"):
        report = grad_check(D, args.epsilon, probe, probe_seed=args.seed)
        worst = max(worst, report.max_rel_err)
    print(f"max_rel_err {worst:.6e}")
    return 0 if worst < GRADCHECK_TOLERANCE else 1


def _add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="RNG seed override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdhash",
        description="Train and evaluate joint image/video Hamming codes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled archive")
    p.add_argument("--config", help="JSON file of generator settings")
    p.add_argument("--out", required=True, help="archive file to write")
    p.add_argument("--classes", type=int)
    p.add_argument("--videos-per-class", type=int)
    p.add_argument("--frames-per-video", type=int)
    p.add_argument("--d0", type=int)
    p.add_argument("--center-spread", type=float)
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--drift-scale", type=float)
    p.add_argument("--images-per-video", type=int)
    p.add_argument("--sample-stream", type=int)
    _add_seed(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model on an archive")
    p.add_argument("--data", required=True, help="training archive")
    p.add_argument("--config", help="JSON file of training settings")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--history", help="per-step objective CSV to write")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--subjects", type=int, help="subjects per batch")
    p.add_argument("--pairs", type=int, help="video-image pairs per subject")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--bits", type=int, help="code length K")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--encoded-dim", type=int)
    p.add_argument("--encoder-activation", choices=["identity", "tanh"])
    p.add_argument("--policy", choices=["error", "clamp"])
    _add_seed(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("encode", help="emit binary codes for every record")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="archive to encode")
    p.add_argument("--out", required=True, help="codes CSV to write")
    _add_seed(p)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("retrieve", help="rank database items per query")
    p.add_argument("--model", required=True)
    p.add_argument("--query-data", required=True)
    p.add_argument("--db-data", required=True)
    p.add_argument("--mode", required=True, choices=sorted(_MODES))
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--out", help="result CSV (default: standard output)")
    _add_seed(p)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("eval", help="mAP and precision-recall evaluation")
    p.add_argument("--model", required=True)
    p.add_argument("--query-data", required=True)
    p.add_argument("--db-data", required=True)
    p.add_argument("--mode", required=True, choices=sorted(_MODES))
    p.add_argument("--out-map", help="per-query AP CSV to write")
    p.add_argument("--out-pr", help="precision-recall CSV to write")
    _add_seed(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of pooling")
    p.add_argument("--shape", default="4,6", help="feature matrix shape 'm,d'")
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0, help="RNG seed")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def run(argv=None) -> int:
    """Parse and execute; returns the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SpdHashError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> int:
    return run()
