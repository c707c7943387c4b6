"""Command-line entry points.

Subcommands: disentangle, phantom-gen, train, evaluate, sweep. Exit code 0
on success, 1 on runtime failure (missing files, failed cells, mismatched
checkpoints), 2 on usage errors (bad flags, malformed config, theta out of
range).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, config_hash, describe_schema, load_config
from .data import (
    Mask,
    Volume,
    generate_phantom_dataset,
    make_split,
    read_manifest,
    read_volume,
    subsample_train,
    write_svol,
)
from .frequency import disentangle, mask_bounds
from .models import build_model, load_checkpoint_into, save_checkpoint
from .sweep import run_sweep, write_results
from .train import evaluate_model, load_dataset, train_model


class UsageError(ValueError):
    """Bad arguments; maps to exit code 2."""


def _load_cfg(args):
    return load_config(getattr(args, "config", None), getattr(args, "set", None) or [])


def _add_config_args(sub) -> None:
    sub.add_argument("--config", metavar="FILE", help="INI config file")
    sub.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                     help="override one config value (repeatable)")


def cmd_disentangle(args) -> int:
    if not 0.0 < args.theta < 1.0:
        raise UsageError(f"--theta must lie in (0,1), got {args.theta}")
    volume = read_volume(args.input)
    pair = disentangle(volume.data, args.theta)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    high_path = prefix.with_name(prefix.name + ".high.svol")
    low_path = prefix.with_name(prefix.name + ".low.svol")
    write_svol(high_path, Volume(pair.high, volume.spacing))
    write_svol(low_path, Volume(pair.low, volume.spacing))
    recon_err = float(np.abs(pair.high + pair.low - volume.data).max())
    for axis_name, extent in zip("xyz", volume.extents):
        if axis_name in "xy":
            lo, hi = mask_bounds(extent, args.theta)
            print(f"axis {axis_name}: extent {extent}, high block [{lo}, {hi})")
        else:
            print(f"axis {axis_name}: extent {extent}, all frequencies in high part")
    print(f"wrote {high_path}")
    print(f"wrote {low_path}")
    print(f"max reconstruction error: {recon_err:.3e}")
    print(f"max imaginary residue: {pair.max_imag_residue:.3e}")
    return 0


def cmd_phantom_gen(args) -> int:
    cfg = _load_cfg(args)
    spec = cfg.phantom_spec()
    count = cfg.get("phantom", "count")
    ids = generate_phantom_dataset(args.out, spec, count, spec.seed)
    print(f"wrote {len(ids)} subjects to {args.out}")
    return 0


def _meta_path(ckpt_path) -> Path:
    p = Path(ckpt_path)
    return p.with_name(p.name + ".meta")


def _write_meta(ckpt_path, entries: dict[str, str]) -> None:
    _meta_path(ckpt_path).write_text("".join(f"{k}={v}\n" for k, v in entries.items()))


def _read_meta(ckpt_path) -> dict[str, str]:
    path = _meta_path(ckpt_path)
    if not path.is_file():
        raise FileNotFoundError(f"no metadata sidecar at {path}")
    out = {}
    for line in path.read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key] = value
    return out


def _resolve_split(cfg, data_dir):
    split_cfg = cfg.section("split")
    ids = read_manifest(data_dir)
    return make_split(ids, (split_cfg["train"], split_cfg["val"], split_cfg["test"]),
                      split_cfg["seed"])


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    split = _resolve_split(cfg, args.data)
    fraction = cfg.get("train", "fraction")
    seed = cfg.get("train", "seed")
    if fraction < 1.0:
        split = subsample_train(split, fraction, seed)
    subjects = load_dataset(args.data, split.train + split.val + split.test,
                            cfg.get("data", "target_extents"), cfg.get("data", "spacing"))
    model = build_model(cfg.unet_config(), cfg.fusion_config(), seed)
    result = train_model(
        model, subjects, split,
        lr=cfg.get("train", "lr"),
        epochs=cfg.get("train", "epochs"),
        seed=seed,
        val_interval=cfg.get("train", "val_interval"),
        threshold=cfg.get("eval", "threshold"),
        trace_bands=cfg.get("train", "trace_bands"),
        log=print,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model)
    _write_meta(out, {
        "config_hash": config_hash(cfg),
        "mode": cfg.get("model", "mode"),
        "theta": repr(cfg.get("model", "theta")),
        "best_epoch": str(result.best_epoch),
        "best_val_dice": repr(result.best_val_dice),
        "epochs": str(result.epochs_run),
        "n_train": str(len(split.train)),
    })
    print(f"saved checkpoint to {out}")
    print(f"best val dice {result.best_val_dice:.4f} at epoch {result.best_epoch}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    meta = _read_meta(args.ckpt)
    expected = config_hash(cfg)
    if meta.get("config_hash") != expected:
        if not args.leak_ok:
            raise RuntimeError(
                f"checkpoint was trained under config hash {meta.get('config_hash')}, "
                f"current config hashes to {expected}; the held-out split may differ "
                f"(pass --leak-ok to evaluate anyway)"
            )
        print("warning: evaluating despite a config hash mismatch", file=sys.stderr)
    split = _resolve_split(cfg, args.data)
    subjects = load_dataset(args.data, split.test,
                            cfg.get("data", "target_extents"), cfg.get("data", "spacing"))
    model = build_model(cfg.unet_config(), cfg.fusion_config(), cfg.get("train", "seed"))
    load_checkpoint_into(args.ckpt, model)
    report = evaluate_model(
        model, subjects, split.test,
        threshold=cfg.get("eval", "threshold"),
        n_boot=cfg.get("eval", "bootstrap_b"),
        seed=cfg.get("eval", "bootstrap_seed"),
    )
    print(report.table(), end="")
    if args.report:
        Path(args.report).write_text(report.to_text())
        print(f"wrote report to {args.report}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    sweep = run_sweep(cfg, args.data, log=print)
    paths = write_results(sweep.rows, args.out)
    print(paths["table"].read_text(), end="")
    for name in ("results", "canonical", "table"):
        print(f"wrote {paths[name]}")
    if sweep.failures:
        print(f"{len(sweep.failures)} cell(s) failed:", file=sys.stderr)
        for line in sweep.failures:
            print(f"  {line}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqseg",
        description="Frequency-split 3D segmentation toolkit.",
        epilog="Config keys:\n" + describe_schema(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("disentangle", help="split a volume into high/low parts")
    p.add_argument("input", help="input .svol volume")
    p.add_argument("--theta", type=float, default=0.5, help="split parameter in (0,1)")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_disentangle)

    p = sub.add_parser("phantom-gen", help="generate a synthetic dataset")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("train", help="train one model")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--report", help="optional text report output path")
    p.add_argument("--leak-ok", action="store_true",
                   help="evaluate even if the config hash differs from training")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run the fraction x mode x seed grid")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="results output directory")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
