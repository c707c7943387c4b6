"""Data-fraction sweep: train fraction x fusion mode x seed grid.

Subjects kept at a given fraction are drawn once per (fraction, replicate)
and shared by every mode, so mode comparisons are paired. Rows are sorted
canonically and written twice: ``results.csv`` with wall-clock seconds, and
``results.canonical.csv`` with wall_s zeroed so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config, config_hash
from .data import make_split, read_manifest, subsample_train
from .models import MODES, build_model
from .train import TrainResult, evaluate_model, load_dataset, train_model

CSV_COLUMNS = (
    "task", "fraction", "n_train", "mode", "seed",
    "dice_mean", "dice_lo", "dice_hi",
    "hd95_mean", "hd95_lo", "hd95_hi",
    "wall_s", "config_hash",
)


@dataclass
class SweepRow:
    task: str
    fraction: float
    n_train: int
    mode: str
    seed: int
    dice_mean: float  # percent
    dice_lo: float
    dice_hi: float
    hd95_mean: float
    hd95_lo: float
    hd95_hi: float
    wall_s: float
    config_hash: str

    def as_record(self, zero_wall: bool = False) -> list[str]:
        return [
            self.task,
            repr(self.fraction),
            str(self.n_train),
            self.mode,
            str(self.seed),
            repr(self.dice_mean),
            repr(self.dice_lo),
            repr(self.dice_hi),
            repr(self.hd95_mean),
            repr(self.hd95_lo),
            repr(self.hd95_hi),
            repr(0.0 if zero_wall else self.wall_s),
            self.config_hash,
        ]


def subsample_seed(master: int, fraction: float, replicate: int) -> int:
    """Subset seed shared across modes; keyed by fraction and replicate only."""
    fraction_key = int(round(fraction * 10**6))
    return int(np.random.SeedSequence((master, fraction_key, replicate)).generate_state(1)[0])


@dataclass
class SweepResult:
    rows: list[SweepRow]
    failures: list[str]
    # per-cell training curves, keyed by (fraction, mode, seed)
    training: dict[tuple[float, str, int], TrainResult]


def run_sweep(cfg: Config, data_dir, log=None,
              trace_modes: tuple[str, ...] = ()) -> SweepResult:
    """Train and evaluate every grid cell; failures are recorded, not fatal.

    Cells whose mode appears in ``trace_modes`` also record a per-epoch
    frequency-band error trace (``eval.n_bands`` bands) in their TrainResult.
    """
    say = log if log is not None else (lambda _line: None)
    task = cfg.get("data", "task")
    spacing = cfg.get("data", "spacing")
    target = cfg.get("data", "target_extents")
    sweep = cfg.section("sweep")
    split_cfg = cfg.section("split")
    eval_cfg = cfg.section("eval")

    ids = read_manifest(data_dir)
    split = make_split(ids, (split_cfg["train"], split_cfg["val"], split_cfg["test"]),
                       split_cfg["seed"])
    used = split.train + split.val + split.test
    subjects = load_dataset(data_dir, used, target, spacing)

    rows: list[SweepRow] = []
    failures: list[str] = []
    training: dict[tuple[float, str, int], TrainResult] = {}
    for fraction in sweep["fractions"]:
        for replicate, seed in enumerate(sweep["seeds"]):
            sub = subsample_train(
                split, fraction, subsample_seed(sweep["subsample_seed"], fraction, replicate)
            )
            for mode in sweep["modes"]:
                cell = f"fraction={fraction} mode={mode} seed={seed}"
                cell_cfg = cfg.with_overrides({
                    ("model", "mode"): mode,
                    ("train", "fraction"): fraction,
                    ("train", "seed"): seed,
                })
                started = time.perf_counter()
                try:
                    model = build_model(cell_cfg.unet_config(), cell_cfg.fusion_config(), seed)
                    result = train_model(
                        model, subjects, sub,
                        lr=cell_cfg.get("train", "lr"),
                        epochs=cell_cfg.get("train", "epochs"),
                        seed=seed,
                        val_interval=cell_cfg.get("train", "val_interval"),
                        threshold=eval_cfg["threshold"],
                        trace_bands=eval_cfg["n_bands"] if mode in trace_modes else 0,
                    )
                    report = evaluate_model(
                        model, subjects, split.test,
                        threshold=eval_cfg["threshold"],
                        n_boot=eval_cfg["bootstrap_b"],
                        seed=eval_cfg["bootstrap_seed"],
                    )
                except Exception as exc:  # noqa: BLE001 - cell isolation is the point
                    failures.append(f"{cell}: {type(exc).__name__}: {exc}")
                    say(f"FAILED {cell}: {exc}")
                    continue
                wall = time.perf_counter() - started
                training[(fraction, mode, seed)] = result
                rows.append(SweepRow(
                    task=task,
                    fraction=fraction,
                    n_train=len(sub.train),
                    mode=mode,
                    seed=seed,
                    dice_mean=100.0 * report.dice_mean,
                    dice_lo=100.0 * report.dice_ci[0],
                    dice_hi=100.0 * report.dice_ci[1],
                    hd95_mean=report.hd95_mean,
                    hd95_lo=report.hd95_ci[0],
                    hd95_hi=report.hd95_ci[1],
                    wall_s=wall,
                    config_hash=config_hash(cell_cfg),
                ))
                say(f"done {cell}: dice {rows[-1].dice_mean:.2f}% "
                    f"hd95 {rows[-1].hd95_mean:.3f} ({wall:.1f}s)")
    rows.sort(key=lambda r: (r.task, r.fraction, MODES.index(r.mode), r.seed))
    return SweepResult(rows=rows, failures=failures, training=training)


def rows_to_csv(rows: list[SweepRow], zero_wall: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.as_record(zero_wall))
    return buf.getvalue()


def write_results(rows: list[SweepRow], out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": out_dir / "results.csv",
        "canonical": out_dir / "results.canonical.csv",
        "table": out_dir / "table.txt",
    }
    paths["results"].write_text(rows_to_csv(rows))
    paths["canonical"].write_text(rows_to_csv(rows, zero_wall=True))
    paths["table"].write_text(summary_table(rows))
    return paths


def median_by_cell(rows: list[SweepRow]) -> dict[tuple[float, str], float]:
    """Median Dice percent over seeds for each (fraction, mode)."""
    groups: dict[tuple[float, str], list[float]] = {}
    for row in rows:
        groups.setdefault((row.fraction, row.mode), []).append(row.dice_mean)
    return {key: float(np.median(vals)) for key, vals in groups.items()}


def summary_table(rows: list[SweepRow]) -> str:
    """Aligned text table of per-cell medians across seeds."""
    groups: dict[tuple[float, str], list[SweepRow]] = {}
    for row in rows:
        groups.setdefault((row.fraction, row.mode), []).append(row)
    table = [("fraction", "n_train", "mode", "seeds", "median dice %", "median hd95")]
    for (fraction, mode) in sorted(groups, key=lambda k: (k[0], MODES.index(k[1]))):
        cell = groups[(fraction, mode)]
        table.append((
            repr(fraction),
            str(cell[0].n_train),
            mode,
            str(len(cell)),
            f"{np.median([r.dice_mean for r in cell]):.2f}",
            f"{np.median([r.hd95_mean for r in cell]):.3f}",
        ))
    widths = [max(len(r[c]) for r in table) for c in range(len(table[0]))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "".join(f"{line}\n" for line in lines)
