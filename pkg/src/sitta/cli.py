"""Command line entry point: train, translate, augment, eval, bench, gen-data.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import (SyntheticSpec, TEXTURE_KINDS, SHAPE_KINDS, apply_config, atomic_write_bytes,
                   image_set_from_dir, load_checkpoint, load_image, make_synthetic_set, read_config,
                   save_checkpoint, to_pixels, write_pixels)
from .losses import LossWeights
from .model import DomainId

log = logging.getLogger("sitta")

METRICS = ("fid", "lpips", "vgg")


class UsageError(Exception):
    pass


class RunManifest:
    """One JSON line per artifact; no timestamps so reruns stay byte-identical."""

    def __init__(self, out_dir: Path, command: str, seed):
        self.path = Path(out_dir) / "run_manifest.jsonl"
        self.command = command
        self.seed = seed
        self.records: list[dict] = []

    def add(self, path, kind: str):
        path = Path(path)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.records.append({"command": self.command, "kind": kind, "path": str(path),
                             "seed": self.seed, "sha256": digest})

    def write(self):
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)
        atomic_write_bytes(self.path, text.encode())


# ------------------------------------------------------------------ subcommands


def _train_config(args):
    from .trainer import TrainConfig

    values = read_config(args.config) if args.config else {}
    cfg = apply_config(TrainConfig(), values)
    cfg.weights = apply_config(LossWeights(), values)
    overrides = {"iters": args.iters, "seed": args.seed, "image_side": args.size}
    return apply_config(cfg, {k: v for k, v in overrides.items() if v is not None})


def comparison_grid(model, i_a, i_b) -> np.ndarray:
    """2x3 grid: rows A and B; columns input, translation, identity reconstruction."""
    from . import tensor as T
    from .model import forward_pair

    with T.no_grad():
        out = forward_pair(model, i_a, i_b)
    rows = [[i_a, out["i_a2b"], out["i_aa"]], [i_b, out["i_b2a"], out["i_bb"]]]
    return np.concatenate([np.concatenate([to_pixels(t) for t in row], axis=1) for row in rows], axis=0)


def cmd_train(args) -> int:
    from .trainer import _fit, train_pair, write_history

    cfg = _train_config(args)
    out = Path(args.out)
    i_a, i_b = load_image(args.content), load_image(args.texture)
    ckpt = out / "model.sitt"
    model, history = train_pair(i_a, i_b, cfg, checkpoint_path=ckpt)
    manifest = RunManifest(out, "train", cfg.seed)
    save_checkpoint(model, ckpt)
    manifest.add(ckpt, "checkpoint")
    write_history(history, out / "losses.csv")
    manifest.add(out / "losses.csv", "loss_log")
    side = cfg.image_side
    write_pixels(comparison_grid(model, _fit(i_a, side), _fit(i_b, side)), out / "grid.png")
    manifest.add(out / "grid.png", "grid")
    manifest.write()
    print(f"trained {cfg.iters} iterations; final total loss {history[-1].total:.4f}")
    return 0


def cmd_translate(args) -> int:
    from .trainer import translate

    model = load_checkpoint(args.checkpoint)
    content, texture = load_image(args.content), load_image(args.texture)
    out_dir = Path(args.out)
    path = out_dir / f"{Path(args.content).stem}__x__{Path(args.texture).stem}.png"
    write_pixels(to_pixels(translate(model, content, texture, DomainId(args.direction))), path)
    manifest = RunManifest(out_dir, "translate", None)
    manifest.add(path, "image")
    manifest.write()
    print(path)
    return 0


def cmd_augment(args) -> int:
    from .augmentor import read_job, run_job

    job = read_job(args.job, seed=args.seed)
    if args.out:
        job.output_dir = Path(args.out)
    manifest = RunManifest(job.output_dir, "augment", args.seed)
    try:
        result = run_job(job)
    finally:
        if (job.output_dir / "manifest.csv").exists():
            for path in sorted(job.output_dir.glob("*__x__*.png")):
                manifest.add(path, "image")
            manifest.add(job.output_dir / "manifest.csv", "manifest")
            manifest.write()
    print(f"{len(result.rows)} images from {result.models_trained} model(s); "
          f"{len(result.skipped)} skipped")
    return 0


def cmd_eval(args) -> int:
    from . import metrics
    from .data import to_tensor
    from .losses import backbone

    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in names if m not in METRICS]
    if unknown or not names:
        raise UsageError(f"unknown metric(s) {unknown}; choose from {', '.join(METRICS)}")
    pyramid = backbone(args.backbone_seed)
    set_a = [to_tensor(i.load()) for i in image_set_from_dir(args.set_a)]
    set_b = [to_tensor(i.load()) for i in image_set_from_dir(args.set_b)]
    if not set_a or not set_b:
        raise OSError("both sets must contain at least one .png or .ppm image")
    rows = []
    for name in names:
        if name == "fid":
            value = metrics.fid(set_a, set_b, pyramid)
        elif name == "lpips":
            value = metrics.nearest_mean(
                set_a, set_b, lambda x, y: metrics.perceptual_patch_distance(x, y, pyramid))
        else:
            value = metrics.nearest_mean(
                set_a, set_b, lambda x, y: metrics.feature_reconstruction_loss(x, y, pyramid))
        rows.append(f"{name},{args.set_a},{args.set_b},{value:.10g},{args.backbone_seed}\n")
    out = Path(args.out)
    report = out / "report.csv"
    atomic_write_bytes(report, ("metric,set_a,set_b,value,backbone_seed\n" + "".join(rows)).encode())
    manifest = RunManifest(out, "eval", None)
    manifest.add(report, "report")
    manifest.write()
    sys.stdout.write("".join(rows))
    return 0


def cmd_bench(args) -> int:
    from .bench import BenchProtocol, ClassifierSpec, run_bench

    seeds = tuple(args.seed + i for i in range(args.n_seeds))
    protocol = BenchProtocol(seeds=seeds, classifier=ClassifierSpec(epochs=args.epochs),
                             n_major=args.n_major, translator_iters=args.translator_iters)
    result = run_bench(protocol)
    out = Path(args.out)
    result.write(out / "bench.csv")
    manifest = RunManifest(out, "bench", args.seed)
    manifest.add(out / "bench.csv", "results")
    manifest.write()
    for comp, value in result.means().items():
        print(f"{comp:18s} {value:.4f}")
    return 0


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(args.texture, args.shape, args.side, args.count, args.seed)
    out = Path(args.out)
    written = make_synthetic_set(spec).write(out)
    manifest = RunManifest(out, "gen-data", args.seed)
    for item in written:
        manifest.add(item.path, "image")
    manifest.write()
    print(f"wrote {len(written)} images to {out}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sitta", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one translation model on a content/texture pair")
    p.add_argument("--content", required=True)
    p.add_argument("--texture", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--size", type=int, help="training image side (default 288)")
    p.add_argument("--config", help="key = value file of training options")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="apply a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--content", required=True)
    p.add_argument("--texture", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--direction", choices=[d.value for d in DomainId], default="B")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("augment", help="run a SingleToSingle or SingleToMulti job file")
    p.add_argument("--job", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="override the job's output_dir")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval", help="compare two image directories")
    p.add_argument("--set-a", required=True)
    p.add_argument("--set-b", required=True)
    p.add_argument("--metrics", default="fid,lpips,vgg")
    p.add_argument("--out", required=True)
    p.add_argument("--backbone-seed", type=int, default=1234)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="imbalanced classification comparison")
    p.add_argument("--seed", type=int, required=True, help="first seed")
    p.add_argument("--n-seeds", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--n-major", type=int, default=64)
    p.add_argument("--translator-iters", type=int, default=800)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-data", help="write a synthetic image set")
    p.add_argument("--texture", choices=TEXTURE_KINDS, required=True)
    p.add_argument("--shape", choices=SHAPE_KINDS, default="disc")
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    from .augmentor import JobSpecError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, JobSpecError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
