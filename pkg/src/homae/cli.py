"""Command line: ``homae {synth-gen,train,eval,mask-demo,metrics}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import HomaeError

log = logging.getLogger("homae")


def cmd_synth_gen(args) -> int:
    from .scenegen import SceneConfig, generate_dataset

    ds = generate_dataset(args.out, args.count, args.seed, SceneConfig(image_size=args.image_size))
    print(f"wrote {len(ds)} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .config import RunConfig
    from .train import run_training

    cfg = RunConfig.load(args.config, args.profile) if args.config else RunConfig.for_profile(args.profile or "desk")
    overrides = {k: v for k, v in (("dataset", args.data), ("out_dir", args.out), ("seed", args.seed)) if v is not None}
    if overrides:
        cfg = RunConfig.from_dict({**cfg.to_dict(), **overrides})
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    cfg.save(Path(cfg.out_dir) / "config.json")
    res = run_training(cfg, resume=args.resume)
    last = res.history[-1] if res.history else {}
    print(f"trained {len(res.history)} steps; final L_total {last.get('L_total', float('nan')):.5g}; checkpoint {res.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import run_eval
    from .scenegen import read_dataset

    _, report = run_eval(args.ckpt, read_dataset(args.data), args.mode, args.report, args.pred, group_by=args.group_by)
    print(report.to_table())
    return 0


def cmd_mask_demo(args) -> int:
    from .checkpoint import load_model
    from .evaluate import dataset_samples
    from .scenegen import read_dataset
    from .viz import emit_demo_grid

    model, cfg, _ = load_model(args.ckpt)
    samples = dataset_samples(read_dataset(args.data), cfg)[: args.count]
    out = emit_demo_grid(model, cfg, samples, args.out, epoch=args.epoch, overlay=args.overlay)
    print(f"wrote {out} and {out.with_suffix('.json')}")
    return 0


def cmd_metrics(args) -> int:
    from .metrics import evaluate_dataset
    from .scenegen import read_dataset

    report = evaluate_dataset(args.pred, read_dataset(args.data), group_by=args.group_by)
    if args.report:
        Path(args.report).write_text(report.to_json())
    print(report.to_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homae", description="Masked-autoencoder hand-object pose pipeline on synthetic scenes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-gen", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--image-size", type=int, default=112)
    s.set_defaults(func=cmd_synth_gen)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", help="JSON run configuration")
    s.add_argument("--profile", choices=["desk", "paper"])
    s.add_argument("--data", help="dataset directory (overrides the config)")
    s.add_argument("--out", help="output directory (overrides the config)")
    s.add_argument("--seed", type=int)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="predict and score a dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=["gt", "voxel"], default="gt")
    s.add_argument("--report", required=True)
    s.add_argument("--pred", help="predictions JSON-lines path (default: next to the report)")
    s.add_argument("--group-by", choices=["object_id"])
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("mask-demo", help="write ground truth | masked | reconstruction panels")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=4)
    s.add_argument("--epoch", type=int, default=0, help="epoch index used to seed the masks")
    s.add_argument("--overlay", action="store_true", help="add a projected-pose panel")
    s.set_defaults(func=cmd_mask_demo)

    s = sub.add_parser("metrics", help="score a predictions file")
    s.add_argument("--pred", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report")
    s.add_argument("--group-by", choices=["object_id"])
    s.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HomaeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
