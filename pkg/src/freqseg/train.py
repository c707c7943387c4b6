"""Training loop and evaluation for the segmentation models.

Single-volume batches, Dice loss, Adam. Validation Dice is measured every
``val_interval`` epochs and the best-scoring parameters are kept (earliest
epoch wins ties), so the returned model is the best-on-validation one.
Runs are deterministic for a fixed seed: BLAS threading is pinned to one
thread and every random draw comes from a seeded generator.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Mask, SplitSpec, Volume, load_subject, minmax_normalize, resize
from .layers import Adam, soft_dice_loss
from .metrics import MetricReport, dice_coefficient, frequency_error_spectrum, hausdorff95
from .models import SegmentationModel


def load_dataset(directory, subject_ids, target_extents=None,
                 spacing=(1.0, 1.0, 1.0)) -> dict[str, tuple[Volume, Mask]]:
    """Read, optionally resample, and min-max normalize each subject."""
    out: dict[str, tuple[Volume, Mask]] = {}
    for sid in subject_ids:
        volume, mask = load_subject(directory, sid)
        if target_extents is not None:
            volume = resize(volume, target_extents)
            mask = resize(mask, target_extents)
        volume = minmax_normalize(volume)
        volume.spacing = tuple(spacing)
        mask.spacing = tuple(spacing)
        out[sid] = (volume, mask)
    return out


def mask_to_target(mask: Mask, num_classes: int) -> np.ndarray:
    """Binary [1, C, X, Y, Z] target; label c+1 populates channel c."""
    labels = mask.data
    if num_classes == 1:
        return (labels != 0).astype(np.float64)[None, None]
    chans = [(labels == c + 1).astype(np.float64) for c in range(num_classes)]
    return np.stack(chans, axis=0)[None]


def probabilities_to_mask(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Collapse [1, C, X, Y, Z] per-class probabilities to a label mask."""
    binary = probs[0] > threshold
    if binary.shape[0] == 1:
        return binary[0].astype(np.uint8)
    # multi-label: highest-probability class among those above threshold
    best = probs[0].argmax(axis=0)
    any_on = binary.any(axis=0)
    return np.where(any_on, best + 1, 0).astype(np.uint8)


@dataclass
class TrainResult:
    best_epoch: int
    best_val_dice: float
    epochs_run: int
    losses: list[float]
    val_history: list[tuple[int, float]]
    band_trace: list[np.ndarray] = field(default_factory=list)
    wall_s: float = 0.0


def _val_dice(model: SegmentationModel, inputs, targets, ids, threshold: float) -> float:
    scores = []
    for sid in ids:
        probs = model.forward(*inputs[sid]).data
        pred = probs[0] > threshold
        truth = targets[sid][0] != 0
        scores.append(_channel_dice(pred, truth))
    return float(np.mean(scores))


def _channel_dice(pred: np.ndarray, truth: np.ndarray) -> float:
    per_class = [dice_coefficient(pred[c], truth[c]) for c in range(pred.shape[0])]
    return float(np.mean(per_class))


def train_model(
    model: SegmentationModel,
    subjects: dict[str, tuple[Volume, Mask]],
    split: SplitSpec,
    lr: float = 1e-3,
    epochs: int = 200,
    seed: int = 0,
    val_interval: int = 1,
    threshold: float = 0.5,
    trace_bands: int = 0,
    log=None,
) -> TrainResult:
    """Optimize in place and leave the model at its best validation epoch."""
    num_classes = model.unet_config.num_classes
    with threadpool_limits(limits=1):
        inputs = {sid: model.prepare(subjects[sid][0]) for sid in split.train + split.val}
        targets = {sid: mask_to_target(subjects[sid][1], num_classes)
                   for sid in split.train + split.val}
        optimizer = Adam(model.parameters(), lr=lr)
        losses: list[float] = []
        val_history: list[tuple[int, float]] = []
        band_trace: list[np.ndarray] = []
        best = (-1.0, -1, None)  # (val dice, epoch, parameter snapshot)
        started = time.perf_counter()
        for epoch in range(1, epochs + 1):
            order = np.random.default_rng((seed, epoch)).permutation(len(split.train))
            epoch_losses = []
            for i in order:
                sid = split.train[i]
                probs = model.forward(*inputs[sid])
                loss = soft_dice_loss(probs, targets[sid])
                loss.backward()
                epoch_losses.append(loss.item())
                optimizer.step()
            losses.append(float(np.mean(epoch_losses)))
            if trace_bands >= 2:
                errs = [
                    frequency_error_spectrum(
                        model.forward(*inputs[sid]).data[0, 0],
                        targets[sid][0, 0],
                        n_bands=trace_bands,
                    )
                    for sid in split.train
                ]
                band_trace.append(np.mean(errs, axis=0))
            if epoch % val_interval == 0 or epoch == epochs:
                val = _val_dice(model, inputs, targets, split.val, threshold)
                val_history.append((epoch, val))
                if val > best[0]:
                    best = (val, epoch, [p.data.copy() for p in model.parameters()])
                if log is not None:
                    log(f"epoch {epoch:4d}  loss {losses[-1]:.4f}  val dice {val:.4f}")
            elif log is not None:
                log(f"epoch {epoch:4d}  loss {losses[-1]:.4f}")
        wall = time.perf_counter() - started
    if best[2] is not None:
        for p, snapshot in zip(model.parameters(), best[2]):
            p.data = snapshot
            p.grad = None
    return TrainResult(
        best_epoch=best[1],
        best_val_dice=best[0],
        epochs_run=epochs,
        losses=losses,
        val_history=val_history,
        band_trace=band_trace,
        wall_s=wall,
    )


def evaluate_model(
    model: SegmentationModel,
    subjects: dict[str, tuple[Volume, Mask]],
    subject_ids,
    threshold: float = 0.5,
    n_boot: int = 2000,
    seed: int = 0,
) -> MetricReport:
    """Per-subject Dice and HD95 on held-out subjects, with bootstrap CIs."""
    num_classes = model.unet_config.num_classes
    ids = list(subject_ids)
    dice_scores: list[float] = []
    hd95_scores: list[float] = []
    with threadpool_limits(limits=1):
        for sid in ids:
            volume, mask = subjects[sid]
            probs = model.forward(*model.prepare(volume)).data
            pred = probs[0] > threshold
            truth = mask_to_target(mask, num_classes)[0] != 0
            dice_scores.append(_channel_dice(pred, truth))
            hd95_scores.append(float(np.mean([
                hausdorff95(pred[c], truth[c], mask.spacing) for c in range(num_classes)
            ])))
    return MetricReport(ids, dice_scores, hd95_scores, n_boot=n_boot, seed=seed)
