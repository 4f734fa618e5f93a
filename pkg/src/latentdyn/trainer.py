"""Training loop: Adam with decoupled weight decay, plateau learning-rate
schedule, per-subject gradient accumulation, deterministic shuffling.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .diffcore import SeededRng, Tape, Tensor
from .loss import objective

log = logging.getLogger(__name__)


class NumericalAbort(RuntimeError):
    """Training hit a non-finite loss; carries last-batch diagnostics."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    lr: float = 5e-3
    weight_decay: float = 1e-4
    adam_eps: float = 0.1
    adam_betas: tuple = (0.9, 0.999)
    epochs: int = 150
    seed: int = 42
    plateau_factor: float = 0.95
    plateau_patience: int = 6
    min_lr: float = 1e-5
    gru_l2: float = 1e-4
    clip_norm: float = 100.0
    decoupled_weight_decay: bool = True

    def __post_init__(self):
        positives = dict(batch_size=self.batch_size, lr=self.lr,
                         adam_eps=self.adam_eps, epochs=self.epochs,
                         plateau_factor=self.plateau_factor,
                         plateau_patience=self.plateau_patience,
                         min_lr=self.min_lr)
        for name, value in positives.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.weight_decay < 0 or self.gru_l2 < 0:
            raise ValueError("penalty coefficients must be nonnegative")
        if self.lr < self.min_lr:
            raise ValueError("lr must be at least min_lr")


class Adam:
    """Adam with bias correction; eps sits outside the square root.

    Weight decay is decoupled (-lr*wd*theta) by default; the coupled
    variant adds wd*theta to the gradient instead.
    """

    def __init__(self, params, cfg):
        self.params = params  # name -> Tensor
        self.cfg = cfg
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, grads, lr):
        cfg = self.cfg
        b1, b2 = cfg.adam_betas
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for name, p in self.params.items():
            g = grads[name]
            if g is None:
                g = np.zeros_like(p.data)
            if cfg.weight_decay > 0 and not cfg.decoupled_weight_decay:
                g = g + cfg.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
            if cfg.weight_decay > 0 and cfg.decoupled_weight_decay:
                update = update + cfg.weight_decay * p.data
            p.data -= lr * update


class PlateauScheduler:
    """Cut lr by `factor` once validation stalls past `patience` epochs.

    The stall counter keeps counting after a cut, so a long plateau keeps
    reducing every epoch until the floor; any improvement resets it.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self.lr = cfg.lr
        self.best = np.inf
        self.bad_epochs = 0

    def update(self, val_loss):
        if val_loss < self.best - 1e-6:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.cfg.plateau_patience:
                self.lr = max(self.lr * self.cfg.plateau_factor,
                              self.cfg.min_lr)
        return self.lr


def clip_gradients(grads, max_norm):
    """Scale all gradients jointly so the global norm stays at most max_norm."""
    total = 0.0
    for g in grads.values():
        if g is not None:
            total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            if g is not None:
                g *= scale
    return norm


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_recon: float
    train_kl: float
    train_tc: float
    train_total: float
    val_total: float

    FIELDS = ("epoch", "lr", "train_recon", "train_kl", "train_tc",
              "train_total", "val_total")

    def row(self):
        return [repr(self.epoch), repr(self.lr), repr(self.train_recon),
                repr(self.train_kl), repr(self.train_tc),
                repr(self.train_total), repr(self.val_total)]


def write_metrics_csv(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EpochMetrics.FIELDS)
        for m in history:
            writer.writerow(m.row())


def _subject_loss(model, x, beta, rng):
    """Forward + objective for one subject; call under an open tape."""
    factors, xhat = model.forward(x, rng=rng, sample=True)
    return objective(Tensor(x), xhat, factors, beta)


def validation_loss(model, val_arrays, beta):
    """Posterior-mean objective on held-out subjects; no sampling."""
    total = 0.0
    for x in val_arrays:
        factors, xhat = model.forward(x, sample=False)
        _, breakdown = objective(Tensor(x), xhat, factors, beta)
        total += breakdown.total
    return total / max(len(val_arrays), 1)


def train(train_arrays, val_arrays, model, cfg, metrics_path=None):
    """Optimize the model in place; returns per-epoch metrics history.

    Subjects are shuffled each epoch (seeded); gradients accumulate over
    batch_size subjects before each optimizer step.
    """
    beta = model.cfg.beta
    opt = Adam(model.params, cfg)
    sched = PlateauScheduler(cfg)
    names = list(model.params)
    recurrent = set(model.recurrent_weight_names())
    history = []
    n_train = len(train_arrays)
    for epoch in range(cfg.epochs):
        order = SeededRng(cfg.seed, f"shuffle/{epoch}").permutation(n_train)
        sums = dict(recon=0.0, kl=0.0, tc=0.0, total=0.0)
        for start in range(0, n_train, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grads = {n: None for n in names}
            for subject in batch:
                x = train_arrays[subject]
                rng = SeededRng(cfg.seed, f"reparam/{epoch}/{subject}")
                with Tape() as tape:
                    total, breakdown = _subject_loss(model, x, beta, rng)
                if not np.isfinite(total.data).all():
                    raise NumericalAbort(
                        f"non-finite loss at epoch {epoch}, subject "
                        f"{subject}: recon={breakdown.recon!r}, "
                        f"kl={breakdown.kl!r}, tc={breakdown.tc!r}, "
                        f"|x|max={float(np.abs(x).max())!r}")
                tape.backward(total)
                for n in names:
                    p = model.params[n]
                    if p.grad is not None:
                        if grads[n] is None:
                            grads[n] = p.grad
                        else:
                            grads[n] += p.grad
                        p.grad = None
                for key in ("recon", "kl", "tc", "total"):
                    sums[key] += getattr(breakdown, key)
            scale = 1.0 / len(batch)
            for n in names:
                if grads[n] is not None:
                    grads[n] *= scale
            if cfg.gru_l2 > 0:
                # d/dU of gru_l2 * sum(U^2)
                for n in recurrent:
                    extra = 2.0 * cfg.gru_l2 * model.params[n].data
                    grads[n] = extra if grads[n] is None else grads[n] + extra
            clip_gradients(grads, cfg.clip_norm)
            opt.step(grads, sched.lr)
        val_total = validation_loss(model, val_arrays, beta)
        metrics = EpochMetrics(
            epoch=epoch, lr=sched.lr,
            train_recon=sums["recon"] / n_train,
            train_kl=sums["kl"] / n_train,
            train_tc=sums["tc"] / n_train,
            train_total=sums["total"] / n_train,
            val_total=val_total)
        history.append(metrics)
        sched.update(val_total)
        log.info("epoch %d lr %.5g train %.5g val %.5g", epoch, metrics.lr,
                 metrics.train_total, metrics.val_total)
    if metrics_path is not None:
        write_metrics_csv(metrics_path, history)
    return history
