"""Differentiable training objectives, one per model head.

Each loss maps a batch to a scalar tensor recorded on the active tape.
Batch reduction is the mean over original samples, which keeps the learning
rate independent of batch size and of the tau-sample count; summed test
metrics live in the eval module.

The tau-conditioned losses consume the repeated-row layout produced by
``model.expand_with_tau``: row k*n_tau + t of the head outputs belongs to
original sample k and tau draw t.
"""

from __future__ import annotations

import math

import numpy as np

from . import ndmath as nd
from .dists import TAU_MAX, TAU_MIN


class TauBatch:
    """The tau draws for one expanded batch, in repeated-row order.

    values has length bs * n_tau; every entry lies in [1e-3, 1 - 1e-3].
    """

    __slots__ = ("values", "n_tau")

    def __init__(self, values, n_tau):
        n_tau = int(n_tau)
        if n_tau < 1:
            raise ValueError("n_tau must be >= 1")
        values = np.ascontiguousarray(values, dtype=np.float64).ravel()
        if values.size == 0 or values.size % n_tau != 0:
            raise ValueError(
                f"tau vector length {values.size} is not a positive multiple of n_tau={n_tau}"
            )
        if not (np.all(values >= TAU_MIN) and np.all(values <= TAU_MAX)):
            raise ValueError("tau values must lie within [1e-3, 1 - 1e-3]")
        self.values = values
        self.n_tau = n_tau

    @property
    def batch_size(self):
        return self.values.size // self.n_tau

    def __len__(self):
        return self.values.size


def _as_1d(name, arr):
    arr = np.asarray(arr, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    return arr


def _check_expanded(y, out, tb):
    y = _as_1d("y", y)
    if out.values.size != y.size * tb.n_tau:
        raise ValueError(
            f"head output size {out.values.size} does not match "
            f"batch {y.size} expanded by n_tau={tb.n_tau}"
        )
    return y


def pinball(y, mu, tau):
    """Mean asymmetric absolute error (y - mu)(tau - 1[y < mu]).

    Scalars reduce to the plain pinball value; zero exactly when y == mu
    everywhere.
    """
    tau_arr = np.asarray(tau, dtype=np.float64)
    if not (np.all(tau_arr > 0.0) and np.all(tau_arr < 1.0)):
        raise ValueError("tau must lie in (0, 1)")
    if not isinstance(mu, nd.Tensor):
        mu = nd.Tensor(np.asarray(mu, dtype=np.float64))
    return nd.mean_all(nd.pinball_values(y, mu, tau_arr))


def single_nll(kind, y, mu, scale):
    """Mean negative log-likelihood of a one-component head."""
    y = _as_1d("y", y)
    if kind == "normal":
        lp = nd.normal_logpdf(y, mu, scale)
    elif kind == "laplace":
        lp = nd.laplace_logpdf(y, mu, scale)
    else:
        raise ValueError(f"unknown distribution kind: {kind!r}")
    return nd.neg(nd.mean_all(lp))


def mdn_nll(y, mus, scales, logits, kind):
    """Mean mixture negative log-likelihood, computed in the log domain.

    mus, scales, logits are [n, m] tensors; weights enter through a
    log-softmax of the logits so no raw density is ever exponentiated.
    """
    y = _as_1d("y", y)
    m = mus.values.shape[1] if mus.values.ndim == 2 else 0
    if m < 1:
        raise ValueError("mixture needs at least one component")
    if mus.values.shape != scales.values.shape or mus.values.shape != logits.values.shape:
        raise ValueError("mixture parameter tensors must share one [n, m] shape")
    y2 = y[:, None]
    if kind == "normal":
        lp = nd.normal_logpdf(y2, mus, scales)
    elif kind == "laplace":
        lp = nd.laplace_logpdf(y2, mus, scales)
    else:
        raise ValueError(f"unknown distribution kind: {kind!r}")
    rows = nd.add(nd.log_softmax_rows(logits), lp)
    return nd.neg(nd.mean_all(nd.logsumexp_rows(rows)))


def umal_nll(y, mu, b, tb):
    """Monte Carlo mixture NLL over the tau draws.

    Per original sample: -(logsumexp_t of the asymmetric-Laplacian
    log-densities - log n_tau); reduced by the mean over samples.
    """
    y = _check_expanded(y, mu, tb)
    lp = nd.ald_logpdf(np.repeat(y, tb.n_tau), mu, b, tb.values)
    per = nd.logsumexp_rows(nd.reshape(lp, (y.size, tb.n_tau)))
    return nd.sub(math.log(tb.n_tau), nd.mean_all(per))


def independent_ald_nll(y, mu, b, tb):
    """Upper bound on umal_nll that scores each tau draw independently.

    The mean of the per-draw negative log-densities; by the concavity of the
    logarithm this is >= umal_nll for every batch, with equality exactly
    when all n_tau log-densities agree per sample (always at n_tau = 1).
    """
    y = _check_expanded(y, mu, tb)
    lp = nd.ald_logpdf(np.repeat(y, tb.n_tau), mu, b, tb.values)
    return nd.neg(nd.mean_all(lp))


def independent_qr_loss(y, mu, tb):
    """Mean pinball loss over all (sample, tau draw) pairs."""
    y = _check_expanded(y, mu, tb)
    pv = nd.pinball_values(np.repeat(y, tb.n_tau), mu, tb.values)
    return nd.mean_all(pv)


def head_loss(head, y, outputs, tb=None, point_tau=0.5):
    """Dispatch a head kind to its training loss.

    outputs is the dict produced by the model forward pass; tb is required
    for the tau-conditioned heads and ignored otherwise.
    """
    if head in ("umal", "independent_ald", "independent_qr") and tb is None:
        raise ValueError(f"head {head!r} needs a TauBatch")
    if head == "point_qr":
        return pinball(y, outputs["mu"], point_tau)
    if head == "single_normal":
        return single_nll("normal", y, outputs["mu"], outputs["scale"])
    if head == "single_laplace":
        return single_nll("laplace", y, outputs["mu"], outputs["scale"])
    if head == "mdn_normal":
        return mdn_nll(y, outputs["mus"], outputs["scales"], outputs["logits"], "normal")
    if head == "mdn_laplace":
        return mdn_nll(y, outputs["mus"], outputs["scales"], outputs["logits"], "laplace")
    if head == "umal":
        return umal_nll(y, outputs["mu"], outputs["b"], tb)
    if head == "independent_ald":
        return independent_ald_nll(y, outputs["mu"], outputs["b"], tb)
    if head == "independent_qr":
        return independent_qr_loss(y, outputs["mu"], tb)
    raise ValueError(f"unknown head kind: {head!r}")
