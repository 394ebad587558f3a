"""Mini-batch maximum-likelihood training with early stopping.

Protocol: Adam at learning rate 1e-3, batch size 256, fresh tau draws per
batch for the tau-conditioned heads (n_tau = 100), validation NLL tracked
every epoch, training stopped after ``patience`` epochs without a new best,
and the best-validation weights restored on exit.

All randomness flows from one seed through named child streams (init,
shuffling, batch taus, validation taus), so a run is a pure function of
(spec, data, config, optional initial weights).  The validation tau draws
are made once per run and reused every epoch: the validation NLL is itself
a Monte Carlo estimate,
and holding its draws fixed keeps the early-stopping comparison noise-free.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ndmath as nd
from .losses import head_loss
from .model import Model, _draw_taus, expand_with_tau


class TrainingDiverged(RuntimeError):
    """Raised when a loss or validation score goes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    n_tau: int = 100
    max_epochs: int = 3000
    patience: int = 200
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise ValueError("learning_rate must be positive")
        for name in ("batch_size", "n_tau", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer: {self.optimizer!r}")

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "n_tau": self.n_tau,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "optimizer": self.optimizer,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def sample_taus(count, rng):
    """i.i.d. uniform tau draws clamped to [1e-3, 1 - 1e-3]."""
    count = int(count)
    if count < 1:
        raise ValueError("count must be >= 1")
    return _draw_taus(count, rng)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in params]
        self.v = [np.zeros_like(p.values) for p in params]

    def step(self, params):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correct1 = 1.0 - b1 ** self.t
        correct2 = 1.0 - b2 ** self.t
        for i, p in enumerate(params):
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            mhat = self.m[i] / correct1
            vhat = self.v[i] / correct2
            p.values -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.grad = None


class Sgd:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params):
        for p in params:
            p.values -= self.lr * p.grad
            p.grad = None


def _make_optimizer(config, params):
    if config.optimizer == "adam":
        return Adam(params, config.learning_rate)
    return Sgd(params, config.learning_rate)


def _batch_loss(model, xb, yb, tb):
    """One recorded forward pass and loss for a (possibly expanded) batch."""
    outputs = model.forward(xb)
    return head_loss(model.spec.head, yb, outputs, tb)


def _eval_loss(model, x, y, tb):
    """Loss value without recording (used for validation)."""
    return _batch_loss(model, x, y, tb).item()


def train_model(spec, dataset, split, config, init_weights=None):
    """Fit a fresh model; returns (model, log rows).

    Log rows are dicts with keys epoch, train_loss, val_nll, best_so_far,
    seconds (cumulative wall time).  The returned model carries the weights
    of the epoch with the lowest validation NLL.

    init_weights, when given, is a list of arrays (one per parameter tensor,
    e.g. another model's ``copy_weights()``) used instead of the seeded
    Glorot draw.  The donor must share the exact layer dimensions.  The
    umal head benefits hugely from warm-starting at the trained
    independent_ald solution of the same seed: the per-tau objective drives
    mu(x, tau) onto the conditional quantile curve, and the mixture
    objective then only has to sharpen the scales, where training the
    mixture from scratch tends to collapse onto one broad component.
    """
    if len(split.train) < 1:
        raise ValueError("empty training split")
    if len(split.val) < 1:
        raise ValueError("empty validation split (early stopping needs one)")

    init_rng, shuffle_rng, tau_rng, val_tau_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4)
    ]
    model = Model.initialize(spec, init_rng)
    if init_weights is not None:
        model.set_weights(init_weights)
    opt = _make_optimizer(config, model.params)

    x_train = dataset.X[split.train]
    y_train = dataset.y[split.train]
    x_val = dataset.X[split.val]
    y_val = dataset.y[split.val]
    n_train = len(y_train)

    # fixed validation expansion, reused every epoch
    if spec.tau_conditioned:
        val_taus = sample_taus(len(y_val) * config.n_tau, val_tau_rng)
        x_val_in, val_tb = expand_with_tau(x_val, config.n_tau, val_taus)
    else:
        x_val_in, val_tb = x_val, None

    best_val = np.inf
    best_weights = model.copy_weights()
    epochs_since_best = 0
    log = []
    t0 = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        perm = shuffle_rng.permutation(n_train)
        loss_sum = 0.0
        for batch_idx, start in enumerate(range(0, n_train, config.batch_size)):
            rows = perm[start : start + config.batch_size]
            xb_raw, yb = x_train[rows], y_train[rows]
            if spec.tau_conditioned:
                taus = sample_taus(len(rows) * config.n_tau, tau_rng)
                xb, tb = expand_with_tau(xb_raw, config.n_tau, taus)
            else:
                xb, tb = xb_raw, None
            with nd.Tape() as tape:
                loss = _batch_loss(model, xb, yb, tb)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite training loss {value} at epoch {epoch}, "
                    f"batch {batch_idx}: y in [{yb.min():.4g}, {yb.max():.4g}], "
                    f"max |weight| {max(np.abs(p.values).max() for p in model.params):.4g}"
                )
            nd.backprop(tape, loss)
            opt.step(model.params)
            loss_sum += value * len(rows)

        train_loss = loss_sum / n_train
        val_nll = _eval_loss(model, x_val_in, y_val, val_tb)
        if not np.isfinite(val_nll):
            raise TrainingDiverged(
                f"non-finite validation NLL {val_nll} at epoch {epoch}"
            )
        if val_nll < best_val:
            best_val = val_nll
            best_weights = model.copy_weights()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        log.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_nll": val_nll,
                "best_so_far": best_val,
                "seconds": round(time.perf_counter() - t0, 3),
            }
        )
        if epochs_since_best >= config.patience:
            break

    model.set_weights(best_weights)
    return model, log


def write_training_log(log, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,train_loss,val_nll,best_so_far,seconds\n")
        for row in log:
            fh.write(
                f"{row['epoch']},{row['train_loss']!r},{row['val_nll']!r},"
                f"{row['best_so_far']!r},{row['seconds']}\n"
            )
