"""``mmv`` command line: train, eval, deflate, gradcheck, gen-data.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 check failure.
Relative output paths are resolved against ``$MMV_OUTPUT_ROOT`` when set.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .errors import DataError, MMVError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "MMV_OUTPUT_ROOT"


class CheckFailure(MMVError):
    pass


def _out_path(path: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _write_metrics(path: str, metrics: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in metrics.items():
            w.writerow([k, repr(float(v))])


def _config(args):
    from .config import load_config

    return load_config(args.config, args.set)


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    from .data import SampleSource, load_corpus
    from .train import load_checkpoint, train

    cfg = _config(args)
    source = None
    if cfg.train.corpus:
        samples, spec = load_corpus(cfg.train.corpus)
        if spec != cfg.world:
            raise ValidationError("train.corpus was generated with a different [world] section")
        source = SampleSource(spec, samples=samples)
    out = _out_path(args.out or cfg.output_dir)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    resume = load_checkpoint(args.resume) if args.resume else None
    every = max(1, cfg.schedule.total_steps // 20)

    def log(row):
        if not args.quiet and (row[0] % every == 0 or row[0] == cfg.schedule.total_steps - 1):
            print(f"step {row[0]:6d}  lr {row[1]:.6f}  loss {row[2]:.4f}  va {row[3]:.4f}  vt {row[4]:.4f}")

    train(cfg, out, source, log, resume)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import check_task, run_task
    from .train import load_checkpoint, model_from_checkpoint

    cfg, model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    if args.set:
        from .config import RunConfig, apply_overrides

        cfg = RunConfig.from_dict(apply_overrides(cfg.to_dict(), args.set))
    check_task(args.task, model.graph.cfg)
    metrics = run_task(args.task, model, cfg)
    out = _out_path(args.out or os.path.join(os.path.dirname(args.checkpoint) or ".",
                                             f"eval_{args.task}.csv"))
    _write_metrics(out, metrics)
    print(f"{args.task} ({cfg.graph.topology})")
    for k, v in metrics.items():
        print(f"  {k:>12s}  {v:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_deflate(args) -> int:
    import dataclasses

    from .deflation import calibration_images, recalibrate
    from .train import Checkpoint, load_checkpoint, model_from_checkpoint, save_checkpoint

    cfg, model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    if args.set:
        from .config import RunConfig, apply_overrides

        cfg = RunConfig.from_dict(apply_overrides(cfg.to_dict(), args.set))
    job = dataclasses.replace(cfg.deflate, method=args.method)
    if args.epochs is not None:
        job = dataclasses.replace(job, epochs=args.epochs)
    if args.images:
        if not os.path.exists(args.images):
            raise DataError(f"calibration image file {args.images} not found")
        images = np.load(args.images).astype(np.float32)
    else:
        images, _ = calibration_images(cfg.world, job.calibration_images, job.data_seed,
                                       cfg.augment.crop_size)
    if len(images) == 0:
        raise DataError("empty calibration image set")
    length = job.static_length or cfg.world.clip_frames
    rep = recalibrate(model, images, job, length)
    out = _out_path(args.out or os.path.join(os.path.dirname(args.checkpoint) or ".", f"deflated_{args.method}"))
    os.makedirs(out, exist_ok=True)
    tensors = {f"param/{k}": p.data for k, p in rep.encoder.store.params.items()}
    tensors.update({f"buffer/{k}": b for k, b in rep.encoder.store.buffers.items()})
    meta = {"run_config": cfg.to_dict(), "deflation": dataclasses.asdict(job), "static_length": length,
            "source": os.path.abspath(args.checkpoint)}
    save_checkpoint(Checkpoint(tensors, meta), os.path.join(out, "deflated.mmvc"))
    _write_metrics(os.path.join(out, "report.csv"),
                   {"naive_gap": rep.naive_gap, "final_gap": rep.final_gap,
                    "ratio": rep.final_gap / rep.naive_gap if rep.naive_gap > 0 else 0.0})
    print(f"deflation ({args.method}): naive L1 gap {rep.naive_gap:.6f}, final L1 gap {rep.final_gap:.6f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import THRESHOLD, run_suite

    def report(r):
        flag = "ok  " if r.passed else "FAIL"
        print(f"{flag} {r.scope:10s} {r.name:28s} max rel err {r.max_rel_error:.3e}  ({r.seeds} seeds)")

    results = run_suite(args.scope, args.seeds, names=args.case or None, report=report)
    bad = [r for r in results if not r.passed]
    if bad:
        raise CheckFailure(f"{len(bad)} case(s) exceed max relative error {THRESHOLD:g}: "
                           + ", ".join(r.name for r in bad))
    print(f"all {len(results)} cases below {THRESHOLD:g}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from .data import generate, save_corpus

    cfg = _config(args)
    if args.n < 0:
        raise ValidationError("--n must be >= 0")
    samples = generate(cfg.world, args.seed, args.n)
    out = _out_path(args.out)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_corpus(samples, cfg.world, out)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ entry

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="TOML or JSON run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a dotted config key (repeatable)")

    t = sub.add_parser("train", help="train a model")
    with_config(t)
    t.add_argument("--out", help="run directory (default: output_dir from the config)")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task", required=True,
                   choices=("probe-video", "probe-audio", "retrieval-t2v", "retrieval-t2a"))
    e.add_argument("--out", help="metric CSV path")
    e.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("deflate", help="deflate a video backbone into an image backbone")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--method", choices=("naive", "recalibrated"), default="recalibrated")
    d.add_argument("--images", help=".npy array [N,H,W,3] of calibration images")
    d.add_argument("--epochs", type=int)
    d.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    d.add_argument("--out")
    d.set_defaults(func=cmd_deflate)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--scope", choices=("ops", "losses", "end-to-end", "all"), default="ops")
    g.add_argument("--seeds", type=int, help="seeds per case (default: per-case setting)")
    g.add_argument("--case", action="append", metavar="NAME", help="run only the named case(s)")
    g.set_defaults(func=cmd_gradcheck)

    gd = sub.add_parser("gen-data", help="write a synthetic corpus file")
    with_config(gd)
    gd.add_argument("--seed", type=int, default=0)
    gd.add_argument("--n", type=int, required=True)
    gd.add_argument("--out", required=True)
    gd.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ValidationError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (MMVError, OSError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
