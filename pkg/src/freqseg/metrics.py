"""Segmentation quality metrics and their uncertainty estimates.

Dice overlap, the 95th-percentile symmetric Hausdorff distance (exact
all-pairs, spacing-aware), percentile bootstrap confidence intervals over
test subjects, and a per-band relative spectral error used to probe which
frequency content of the target a prediction has captured.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frequency import band_index_map, fft3


def _as_binary(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 3:
        raise ValueError(f"{name} must be 3-d, got shape {a.shape}")
    return a != 0


def dice_coefficient(pred, target) -> float:
    """Overlap in [0,1]; two empty masks count as perfect agreement."""
    p = _as_binary(pred, "pred")
    g = _as_binary(target, "target")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs target {g.shape}")
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / denom


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Coordinates of foreground voxels with a background face neighbor.

    The region outside the volume counts as background, so foreground
    touching the volume edge is boundary.
    """
    m = _as_binary(mask, "mask")
    padded = np.pad(m, 1, constant_values=False)
    core = padded[1:-1, 1:-1, 1:-1]
    exposed = np.zeros_like(core)
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        exposed |= ~padded[tuple(lo)]
        exposed |= ~padded[tuple(hi)]
    return np.argwhere(core & exposed)


def _directed_nearest(a_mm: np.ndarray, b_mm: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """For each point in a_mm, the distance to its nearest point in b_mm."""
    out = np.empty(len(a_mm))
    for start in range(0, len(a_mm), chunk):
        block = a_mm[start : start + chunk]
        d2 = ((block[:, None, :] - b_mm[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = np.sqrt(d2.min(axis=1))
    return out


def hausdorff95(pred, target, spacing=(1.0, 1.0, 1.0)) -> float:
    """Symmetric 95th-percentile boundary distance in physical units.

    Exact: every boundary-to-boundary distance is considered, percentiles
    use linear interpolation. Both masks empty gives 0.0; exactly one empty
    gives the volume diagonal as a worst-case sentinel.
    """
    p = _as_binary(pred, "pred")
    g = _as_binary(target, "target")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs target {g.shape}")
    spacing = np.asarray(spacing, dtype=np.float64)
    if spacing.shape != (3,) or (spacing <= 0).any():
        raise ValueError(f"spacing must be three positive values, got {spacing}")
    p_empty, g_empty = not p.any(), not g.any()
    if p_empty and g_empty:
        return 0.0
    if p_empty or g_empty:
        return float(np.sqrt(((np.array(p.shape) * spacing) ** 2).sum()))
    pb = boundary_voxels(p) * spacing
    gb = boundary_voxels(g) * spacing
    d_pg = np.percentile(_directed_nearest(pb, gb), 95)
    d_gp = np.percentile(_directed_nearest(gb, pb), 95)
    return float(max(d_pg, d_gp))


def bootstrap_ci(values, n_boot: int = 2000, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap 95% CI of the mean over subjects.

    Each replicate resamples subjects with replacement using its own
    counter-keyed generator, so replicate b is reproducible in isolation.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("bootstrap needs a non-empty 1-d sample")
    if n_boot < 100:
        raise ValueError(f"need at least 100 bootstrap replicates, got {n_boot}")
    n = values.size
    means = np.empty(n_boot)
    for b in range(n_boot):
        idx = np.random.default_rng((seed, b)).integers(0, n, size=n)
        means[b] = values[idx].mean()
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(lo), float(hi)


def frequency_error_spectrum(pred, target, n_bands: int = 8,
                             eps: float = 1e-12) -> np.ndarray:
    """Relative spectral error per radial frequency band.

    Band b compares the Fourier coefficients of prediction and target over
    that shell: ||F(pred) - F(target)||_b / (||F(target)||_b + eps). Low
    values mean the band has been learned.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    if pred.ndim != 3:
        raise ValueError(f"expected 3-d fields, got shape {pred.shape}")
    diff_power = np.abs(fft3(pred) - fft3(target)) ** 2
    ref_power = np.abs(fft3(target)) ** 2
    bands = band_index_map(pred.shape, n_bands).ravel()
    diff_norm = np.sqrt(np.bincount(bands, weights=diff_power.ravel(), minlength=n_bands))
    ref_norm = np.sqrt(np.bincount(bands, weights=ref_power.ravel(), minlength=n_bands))
    return diff_norm / (ref_norm + eps)


def band_convergence_epochs(trace, threshold: float = 0.5) -> np.ndarray:
    """First epoch (1-based) at which each band's error drops below threshold.

    ``trace`` is a sequence of per-epoch band-error vectors, as collected
    during training. Bands that never cross get ``inf``. The classic fitting
    order shows up as this vector being (mostly) non-decreasing: low bands
    converge first.
    """
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 2 or trace.shape[0] < 1:
        raise ValueError(f"expected a (epochs, bands) trace, got shape {trace.shape}")
    below = trace < threshold
    first = np.where(below.any(axis=0), below.argmax(axis=0) + 1.0, np.inf)
    return first


def monotone_fraction(values) -> float:
    """Fraction of adjacent pairs that are non-decreasing (ties count)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise ValueError(f"need a 1-d vector of at least 2 values, got shape {values.shape}")
    # inf >= inf holds, so two never-converged bands count as in order
    return float((values[1:] >= values[:-1]).mean())


@dataclass
class MetricReport:
    """Per-subject test metrics with bootstrap CIs over the subject mean."""

    subject_ids: list[str]
    dice: list[float]
    hd95: list[float]
    n_boot: int
    seed: int
    dice_mean: float = field(init=False)
    dice_ci: tuple[float, float] = field(init=False)
    hd95_mean: float = field(init=False)
    hd95_ci: tuple[float, float] = field(init=False)

    def __post_init__(self):
        if not (len(self.subject_ids) == len(self.dice) == len(self.hd95)):
            raise ValueError("subject ids and metric lists must align")
        if not self.subject_ids:
            raise ValueError("report needs at least one subject")
        self.dice_mean = float(np.mean(self.dice))
        self.dice_ci = bootstrap_ci(self.dice, self.n_boot, self.seed)
        self.hd95_mean = float(np.mean(self.hd95))
        self.hd95_ci = bootstrap_ci(self.hd95, self.n_boot, self.seed)

    def to_text(self) -> str:
        lines = [f"n_subjects={len(self.subject_ids)}",
                 f"n_boot={self.n_boot}",
                 f"seed={self.seed}"]
        for sid, d, h in zip(self.subject_ids, self.dice, self.hd95):
            lines.append(f"subject {sid} dice={d!r} hd95={h!r}")
        return "".join(f"{line}\n" for line in lines)

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        header: dict[str, str] = {}
        ids, dice, hd95 = [], [], []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("subject "):
                _, sid, d_part, h_part = line.split()
                ids.append(sid)
                dice.append(float(d_part.removeprefix("dice=")))
                hd95.append(float(h_part.removeprefix("hd95=")))
            else:
                key, _, value = line.partition("=")
                header[key] = value
        return cls(ids, dice, hd95, n_boot=int(header["n_boot"]), seed=int(header["seed"]))

    def table(self) -> str:
        rows = [("subject", "dice %", "hd95")]
        for sid, d, h in zip(self.subject_ids, self.dice, self.hd95):
            rows.append((sid, f"{100.0 * d:.2f}", f"{h:.3f}"))
        rows.append(("mean", f"{100.0 * self.dice_mean:.2f}", f"{self.hd95_mean:.3f}"))
        rows.append((
            "95% CI",
            f"[{100.0 * self.dice_ci[0]:.2f}, {100.0 * self.dice_ci[1]:.2f}]",
            f"[{self.hd95_ci[0]:.3f}, {self.hd95_ci[1]:.3f}]",
        ))
        widths = [max(len(r[c]) for r in rows) for c in range(3)]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "".join(f"{line}\n" for line in lines)
