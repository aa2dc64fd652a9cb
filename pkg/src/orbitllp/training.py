"""LLP training: MSE against commune-level targets, Adam, best-epoch selection."""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from . import models as M
from . import tensor as T
from .data import ChipDataset, CommuneTable, split_arrays
from .tensor import Tape, Tensor


def llp_loss(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


@dataclass
class TrainConfig:
    kind: str = "downconv"
    hyper: int | None = None  # filters for downconv, components for qkm
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.kind not in M.PARAM_TYPES:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.hyper is None:
            self.hyper = 96 if self.kind == "downconv" else 64
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")


class Adam:
    """Adam with bias correction over a list of arrays."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            dt = p.dtype.type
            self.m[i] = dt(self.beta1) * self.m[i] + dt(1 - self.beta1) * g
            self.v[i] = dt(self.beta2) * self.v[i] + dt(1 - self.beta2) * (g * g)
            m_hat = self.m[i] / dt(1 - self.beta1**self.t)
            v_hat = self.v[i] / dt(1 - self.beta2**self.t)
            out.append((p - dt(self.lr) * m_hat / (np.sqrt(v_hat) + dt(self.eps))).astype(p.dtype))
        return out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    seconds: float
    chips_per_sec: float


@dataclass
class TrainRun:
    config: TrainConfig
    history: list[EpochRecord] = field(default_factory=list)
    selected_epoch: int = -1
    best_params: object = None
    initial_params: object = None

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.history]

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_mae,seconds,chips_per_sec"]
        for r in self.history:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.val_mae!r},{r.seconds:.4f},{r.chips_per_sec:.2f}")
        return "\n".join(lines) + "\n"


def batch_loss(kind, arrays, images, targets, dtype):
    """Forward + backward for one minibatch; returns (loss, grads)."""
    leaves = [Tensor(a, dtype=dtype, requires_grad=True) for a in arrays]
    with Tape() as tape:
        pred = M.FORWARDS[kind](Tensor(images, dtype=dtype), leaves)
        loss = T.mse_loss(pred.proportions, Tensor(targets, dtype=dtype))
    return loss.item(), tape.gradient(loss, leaves)


def predict_batches(params, images, batch_size=64, dtype=np.float32, cells=False):
    """Proportions (and optionally cell maps) for a stack of images, no tape."""
    props, maps = [], []
    fwd = M.FORWARDS[params.kind]
    for start in range(0, len(images), batch_size):
        out = fwd(Tensor(images[start : start + batch_size], dtype=dtype), params)
        props.append(out.proportions.data)
        if cells:
            maps.append(out.cell_probs.data)
    n = params.n_classes
    p = np.concatenate(props) if props else np.zeros((0, n), dtype)
    if not cells:
        return p
    return p, (np.concatenate(maps) if maps else None)


def mean_mae(pred, truth) -> float:
    return float(np.mean(np.abs(np.asarray(pred, np.float64) - truth)))


def fit_llp(params, images, targets, config: TrainConfig, val_images=None, val_truths=None, log=None) -> TrainRun:
    """Train ``params`` on (images, targets) for ``config.epochs`` epochs.

    The selected epoch minimises chip-level validation MAE (earliest on ties);
    without validation data the lowest train loss is used instead.
    """
    dtype = np.dtype(config.dtype)
    if len(images) == 0:
        raise ValueError("no training chips")
    kind = params.kind
    rng = np.random.default_rng(config.seed)
    arrays = [a.astype(dtype) for a in M.param_arrays(params)]
    opt = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    run = TrainRun(config=config, initial_params=M.replace_arrays(params, [a.copy() for a in arrays]))
    best_score = np.inf
    n = len(images)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        start_t = time.perf_counter()
        total = 0.0
        for b in range(0, n, config.batch_size):
            idx = order[b : b + config.batch_size]
            loss, grads = batch_loss(kind, arrays, images[idx], targets[idx], dtype)
            arrays = opt.step(arrays, grads)
            total += loss * len(idx)
        seconds = time.perf_counter() - start_t
        current = M.replace_arrays(params, arrays)
        val_mae = np.nan
        if val_images is not None and len(val_images):
            val_mae = mean_mae(predict_batches(current, val_images, dtype=dtype), val_truths)
        rec = EpochRecord(epoch, total / n, val_mae, seconds, n / seconds if seconds > 0 else np.inf)
        run.history.append(rec)
        score = rec.val_mae if not np.isnan(rec.val_mae) else rec.train_loss
        if score < best_score:
            best_score = score
            run.selected_epoch = epoch
            run.best_params = copy.deepcopy(current)
        if log is not None:
            log(rec)
    return run


def train(dataset: ChipDataset, commune_table: CommuneTable | None = None, config: TrainConfig | None = None, log=None) -> TrainRun:
    """Build a model from ``config`` and train it on the dataset's train split."""
    config = config or TrainConfig()
    communes = commune_table if commune_table is not None else dataset.communes
    if communes is None:
        raise ValueError("a commune table is required for training targets")
    _, x_tr, y_tr, _ = split_arrays(dataset, "train", communes)
    _, x_va, _, t_va = split_arrays(dataset, "validation", communes)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("train and validation splits must both be nonempty")
    if t_va is None:
        raise ValueError("validation chips need ground-truth labels for model selection")
    params = M.PARAM_TYPES[config.kind].initialize(config.hyper, dataset.n_classes, seed=config.seed, dtype=config.dtype)
    return fit_llp(params, x_tr, y_tr, config, x_va, t_va, log=log)
