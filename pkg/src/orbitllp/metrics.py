"""Chip-level MAE, pixel F1 and the regression-to-the-mean reference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHIP = 100


def mae_chip(pred, truth) -> float:
    pred, truth = np.asarray(pred, np.float64), np.asarray(truth, np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))


def upsample_nn(cells: np.ndarray, factor: int | None = None, size: int = CHIP) -> np.ndarray:
    """Nearest-neighbour upsampling of an (S, S[, C]) map to (size, size[, C])."""
    cells = np.asarray(cells)
    s = cells.shape[0]
    if factor is None:
        if size % s:
            raise ValueError(f"{s} does not divide {size}")
        factor = size // s
    if cells.shape[1] != s or s * factor != size:
        raise ValueError(f"cannot upsample a {cells.shape[:2]} map by {factor} to {size}")
    return np.repeat(np.repeat(cells, factor, axis=0), factor, axis=1)


def argmax_classes(cell_probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class id on ties
    return np.argmax(cell_probs, axis=-1)


def confusion(pred_labels: np.ndarray, truth_labels: np.ndarray, n_classes: int) -> np.ndarray:
    """(truth, pred) count matrix."""
    idx = truth_labels.astype(np.int64).ravel() * n_classes + pred_labels.astype(np.int64).ravel()
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def f1_from_confusion(cm: np.ndarray):
    """Per-class F1 and its macro mean.

    A class absent from both prediction and truth scores 0 and is left out of
    the macro average.
    """
    tp = np.diag(cm).astype(np.float64)
    pred_count = cm.sum(axis=0)
    true_count = cm.sum(axis=1)
    denom = pred_count + true_count
    per_class = np.zeros(len(tp))
    present = denom > 0
    per_class[present] = 2 * tp[present] / denom[present]
    macro = float(np.mean(per_class[present])) if present.any() else float("nan")
    return per_class, macro


def f1_pixel(pred_cell_probs, truth_labels, n_classes: int):
    """Per-class and macro F1 of per-pixel argmax against a 100 x 100 label map."""
    pred_labels = upsample_nn(argmax_classes(np.asarray(pred_cell_probs)))
    truth = np.asarray(truth_labels)
    if truth.shape != (CHIP, CHIP):
        truth = upsample_nn(truth)
    return f1_from_confusion(confusion(pred_labels, truth, n_classes))


def regression_to_mean(train_targets) -> np.ndarray:
    """Constant predictor: the renormalized mean of the train targets."""
    t = np.asarray(train_targets, np.float64)
    if t.ndim != 2 or len(t) == 0:
        raise ValueError("need a nonempty (n, n_classes) array of train targets")
    mean = t.mean(axis=0)
    return mean / mean.sum()


@dataclass
class EvalReport:
    chip_ids: list
    chip_mae: np.ndarray
    per_class_f1: np.ndarray
    macro_f1: float
    baseline_mae: float | None = None

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.chip_mae))

    @property
    def n_chips(self) -> int:
        return len(self.chip_ids)

    def summary(self) -> dict:
        return {
            "chips": self.n_chips,
            "mean_mae": self.mean_mae,
            "macro_f1": self.macro_f1,
            "per_class_f1": [float(v) for v in self.per_class_f1],
            "baseline_mae": self.baseline_mae,
        }


def evaluate(chip_ids, pred_props, pred_cells, truth_labels, n_classes, baseline=None) -> EvalReport:
    """Per-chip MAE plus pixel F1 accumulated over all chips' confusion counts."""
    truth_props = np.stack([np.bincount(t.ravel(), minlength=n_classes) / t.size for t in truth_labels])
    chip_mae = np.abs(np.asarray(pred_props, np.float64) - truth_props).mean(axis=1)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for cells, truth in zip(pred_cells, truth_labels):
        cm += confusion(upsample_nn(argmax_classes(cells)), truth, n_classes)
    per_class, macro = f1_from_confusion(cm)
    base = None
    if baseline is not None:
        base = float(np.abs(np.asarray(baseline) - truth_props).mean())
    return EvalReport(list(chip_ids), chip_mae, per_class, macro, base)
