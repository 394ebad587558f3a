"""Predictive densities, test log-likelihood, calibration, diagnostics.

Every operation here is read-only over a trained model.  Density grids are
per-input: bounds come from extreme component quantiles (levels 0.001 and
0.999) with the span grown 10%, and the quantile-regression head gets its
density from the slope of its sorted quantile curve.

Calibration treats "predicted probability" as the probability integral
transform u = F(y|x): empirical(theta) is the fraction of test points with
u >= 1 - theta, and a calibrated model traces the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import dists
from .model import expand_with_tau

# slope ceiling when converting quantile curves to densities
DENSITY_CEILING = 1e4
# density floor that keeps log-likelihoods finite outside the quantile span
DENSITY_FLOOR = 1e-12

CALIBRATION_NOTE = (
    "calibration reads 'predicted probability' as the probability integral "
    "transform u = F(y|x); empirical(theta) is the fraction of test points "
    "with u >= 1 - theta, so a calibrated model traces the identity line"
)


class EvaluationError(Exception):
    """Raised when a model produces unusable outputs at evaluation time."""


def _default_sel_tau():
    return np.linspace(0.005, 0.995, 100)


@dataclass
class PredictConfig:
    """Inference-time tau grid and density-grid resolution."""

    sel_tau: np.ndarray = field(default_factory=_default_sel_tau)
    grid_size: int = 500

    def __post_init__(self):
        self.sel_tau = np.asarray(self.sel_tau, dtype=np.float64).ravel()
        if self.sel_tau.size < 1:
            raise ValueError("sel_tau must be non-empty")
        if not (np.all(self.sel_tau > 0.0) and np.all(self.sel_tau < 1.0)):
            raise ValueError("sel_tau values must lie strictly inside (0, 1)")
        if np.any(np.diff(self.sel_tau) <= 0.0):
            raise ValueError("sel_tau must be strictly increasing")
        self.grid_size = int(self.grid_size)
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")

    def to_dict(self):
        return {"sel_tau": self.sel_tau.tolist(), "grid_size": self.grid_size}

    @classmethod
    def from_dict(cls, d):
        return cls(
            sel_tau=np.asarray(d["sel_tau"], dtype=np.float64),
            grid_size=int(d["grid_size"]),
        )


@dataclass
class DensityGrid:
    """A discretized predictive density for one input."""

    y_grid: np.ndarray
    pdf: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        self.y_grid = np.asarray(self.y_grid, dtype=np.float64).ravel()
        self.pdf = np.asarray(self.pdf, dtype=np.float64).ravel()
        if self.y_grid.size != self.pdf.size or self.y_grid.size < 2:
            raise ValueError("grid and density must share a length >= 2")
        if np.any(np.diff(self.y_grid) <= 0.0):
            raise ValueError("y_grid must be strictly increasing")
        if np.any(self.pdf < 0.0):
            raise ValueError("densities must be nonnegative")

    def mass(self):
        return float(np.trapezoid(self.pdf, self.y_grid))


@dataclass
class CalibrationCurve:
    thetas: np.ndarray
    empirical: np.ndarray
    mae: float


def calibration_curve(pit, thetas=None):
    """Empirical coverage curve of PIT values against the identity."""
    u = np.asarray(pit, dtype=np.float64).ravel()
    if u.size == 0:
        raise ValueError("calibration needs at least one PIT value")
    if not (np.all(u >= 0.0) and np.all(u <= 1.0)):
        raise ValueError("PIT values must lie in [0, 1]")
    if thetas is None:
        thetas = np.linspace(0.01, 0.99, 99)
    else:
        thetas = np.asarray(thetas, dtype=np.float64).ravel()
    empirical = np.mean(u[None, :] >= 1.0 - thetas[:, None], axis=1)
    mae = float(np.mean(np.abs(empirical - thetas)))
    return CalibrationCurve(thetas, empirical, mae)


def _forward_chunked(model, x, chunk=4096):
    """Head outputs as arrays, computed in row blocks to bound memory."""
    outs = None
    for start in range(0, x.shape[0], chunk):
        part = model.forward_arrays(x[start : start + chunk])
        if outs is None:
            outs = {k: [v] for k, v in part.items()}
        else:
            for k, v in part.items():
                outs[k].append(v)
    return {k: np.concatenate(v) for k, v in outs.items()}


def _require_finite(arrays, where):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise EvaluationError(f"non-finite head outputs for {where}")


def _row_label(row_id):
    return "input row" if row_id is None else f"input row {row_id}"


def _tau_outputs(model, x, sel_tau, keys):
    """Per-input, per-tau head outputs with shape [n, len(sel_tau)]."""
    n = x.shape[0]
    n_tau = sel_tau.size
    results = {k: np.empty((n, n_tau)) for k in keys}
    step = max(1, 4096 // n_tau)
    for start in range(0, n, step):
        block = x[start : start + step]
        expanded, _ = expand_with_tau(block, n_tau, sel_tau)
        outs = model.forward_arrays(expanded)
        for k in keys:
            results[k][start : start + step] = outs[k].reshape(block.shape[0], n_tau)
    return results


def _mixture_grid(lo, hi, grid_size):
    span = hi - lo
    pad = 0.05 * span
    return np.linspace(lo - pad, hi + pad, grid_size)


def _quantile_curve_density(quantiles, taus):
    """Density of a sorted quantile curve via central slope differences.

    Returns (y_grid, pdf, degenerate).  An all-equal curve falls back to a
    narrow triangle of width 1e-3 around the common value.
    """
    q = np.sort(np.asarray(quantiles, dtype=np.float64))
    span = q[-1] - q[0]
    if q.size < 2 or span <= 1e-9:
        center = q[0]
        w = 1e-3
        grid = np.array([center - 0.5 * w, center, center + 0.5 * w])
        return grid, np.array([0.0, 2.0 / w, 0.0]), True
    eps = max(span * 1e-12, 1e-300)
    for i in range(1, q.size):
        if q[i] <= q[i - 1]:
            q[i] = q[i - 1] + eps
    dens = np.empty_like(q)
    dens[1:-1] = (taus[2:] - taus[:-2]) / (q[2:] - q[:-2])
    dens[0] = (taus[1] - taus[0]) / (q[1] - q[0])
    dens[-1] = (taus[-1] - taus[-2]) / (q[-1] - q[-2])
    return q, np.clip(dens, 0.0, DENSITY_CEILING), False


def quantile_density(model, x_row, sel_tau):
    """DensityGrid of a quantile-regression head on its sorted quantiles."""
    if model.spec.head != "independent_qr":
        raise ValueError("quantile_density needs an independent_qr head")
    sel_tau = np.asarray(sel_tau, dtype=np.float64).ravel()
    x = np.asarray(x_row, dtype=np.float64).reshape(1, -1)
    mu = _tau_outputs(model, x, sel_tau, ("mu",))["mu"][0]
    _require_finite([mu], "input row")
    grid, pdf, degenerate = _quantile_curve_density(mu, sel_tau)
    return DensityGrid(grid, pdf, degenerate)


def predict_density(model, x_row, config, row_id=None):
    """Predictive density of one input on an auto-bounded uniform grid."""
    head = model.spec.head
    if head == "point_qr":
        raise ValueError("point_qr predicts a single value, not a density")
    x = np.asarray(x_row, dtype=np.float64).reshape(1, -1)
    G = config.grid_size

    if head in ("umal", "independent_ald"):
        outs = _tau_outputs(model, x, config.sel_tau, ("mu", "b"))
        mu, b = outs["mu"][0], outs["b"][0]
        _require_finite([mu, b], _row_label(row_id))
        taus = config.sel_tau
        lo = float(np.min(dists.ald_quantile(0.001, (mu, b, taus))))
        hi = float(np.max(dists.ald_quantile(0.999, (mu, b, taus))))
        grid = _mixture_grid(lo, hi, G)
        rows = dists.ald_logpdf(grid[:, None], (mu, b, taus))
        pdf = np.exp(logsumexp(rows, axis=1) - np.log(taus.size))
        return DensityGrid(grid, pdf)

    if head in ("single_normal", "single_laplace"):
        kind = head.removeprefix("single_")
        outs = model.forward_arrays(x)
        mu, scale = float(outs["mu"][0]), float(outs["scale"][0])
        _require_finite([np.array([mu, scale])], _row_label(row_id))
        lo = dists.base_quantile(kind, 0.001, mu, scale)
        hi = dists.base_quantile(kind, 0.999, mu, scale)
        grid = _mixture_grid(lo, hi, G)
        pdf = np.exp(dists.base_logpdf(kind, grid, mu, scale))
        return DensityGrid(grid, pdf)

    if head in ("mdn_normal", "mdn_laplace"):
        kind = head.removeprefix("mdn_")
        outs = model.forward_arrays(x)
        mus, scales, alpha = outs["mus"][0], outs["scales"][0], outs["alpha"][0]
        _require_finite([mus, scales, alpha], _row_label(row_id))
        lo = float(np.min(dists.base_quantile(kind, 0.001, mus, scales)))
        hi = float(np.max(dists.base_quantile(kind, 0.999, mus, scales)))
        grid = _mixture_grid(lo, hi, G)
        with np.errstate(divide="ignore"):
            rows = dists.base_logpdf(kind, grid[:, None], mus, scales) + np.log(alpha)
        pdf = np.exp(logsumexp(rows, axis=1))
        return DensityGrid(grid, pdf)

    # independent_qr: resample the quantile-slope density onto a uniform grid
    qd = quantile_density(model, x_row, config.sel_tau)
    grid = _mixture_grid(qd.y_grid[0], qd.y_grid[-1], G)
    pdf = np.interp(grid, qd.y_grid, qd.pdf, left=0.0, right=0.0)
    return DensityGrid(grid, pdf, degenerate=qd.degenerate)


def _qr_cumulative(grid, pdf):
    gaps = np.diff(grid)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * gaps)])
    return cum


def test_loglik(model, dataset, split, config):
    """(total, mean) natural-log likelihood of the test split."""
    if len(split.test) < 1:
        raise ValueError("empty test split")
    x = dataset.X[split.test]
    y = dataset.y[split.test]
    head = model.spec.head

    if head in ("single_normal", "single_laplace"):
        kind = head.removeprefix("single_")
        outs = _forward_chunked(model, x)
        _require_finite(outs.values(), "the test split")
        lp = dists.base_logpdf(kind, y, outs["mu"], outs["scale"])
    elif head in ("mdn_normal", "mdn_laplace"):
        kind = head.removeprefix("mdn_")
        outs = _forward_chunked(model, x)
        _require_finite(outs.values(), "the test split")
        logits = outs["logits"]
        log_alpha = logits - logsumexp(logits, axis=1, keepdims=True)
        rows = log_alpha + dists.base_logpdf(
            kind, y[:, None], outs["mus"], outs["scales"]
        )
        lp = logsumexp(rows, axis=1)
    elif head in ("umal", "independent_ald"):
        outs = _tau_outputs(model, x, config.sel_tau, ("mu", "b"))
        _require_finite(outs.values(), "the test split")
        rows = dists.ald_logpdf(y[:, None], (outs["mu"], outs["b"], config.sel_tau))
        lp = logsumexp(rows, axis=1) - np.log(config.sel_tau.size)
    elif head == "independent_qr":
        mus = _tau_outputs(model, x, config.sel_tau, ("mu",))["mu"]
        _require_finite([mus], "the test split")
        lp = np.empty(len(y))
        for i in range(len(y)):
            grid, pdf, _ = _quantile_curve_density(mus[i], config.sel_tau)
            d = np.interp(y[i], grid, pdf, left=0.0, right=0.0)
            lp[i] = np.log(max(d, DENSITY_FLOOR))
    else:
        raise ValueError(f"head {head!r} has no predictive density")

    if not np.all(np.isfinite(lp)):
        bad = int(np.argmin(np.isfinite(lp)))
        raise EvaluationError(f"non-finite log-density at test row {bad}")
    total = float(np.sum(lp))
    return total, total / len(y)


def pit_values(model, dataset, split, config):
    """Predicted CDF evaluated at each test response."""
    if len(split.test) < 1:
        raise ValueError("empty test split")
    x = dataset.X[split.test]
    y = dataset.y[split.test]
    head = model.spec.head

    if head in ("single_normal", "single_laplace"):
        kind = head.removeprefix("single_")
        outs = _forward_chunked(model, x)
        _require_finite(outs.values(), "the test split")
        u = dists.base_cdf(kind, y, outs["mu"], outs["scale"])
    elif head in ("mdn_normal", "mdn_laplace"):
        kind = head.removeprefix("mdn_")
        outs = _forward_chunked(model, x)
        _require_finite(outs.values(), "the test split")
        comps = dists.base_cdf(kind, y[:, None], outs["mus"], outs["scales"])
        u = np.sum(outs["alpha"] * comps, axis=1)
    elif head in ("umal", "independent_ald"):
        outs = _tau_outputs(model, x, config.sel_tau, ("mu", "b"))
        _require_finite(outs.values(), "the test split")
        comps = dists.ald_cdf(y[:, None], (outs["mu"], outs["b"], config.sel_tau))
        u = np.mean(comps, axis=1)
    elif head == "independent_qr":
        mus = _tau_outputs(model, x, config.sel_tau, ("mu",))["mu"]
        _require_finite([mus], "the test split")
        u = np.empty(len(y))
        for i in range(len(y)):
            grid, pdf, _ = _quantile_curve_density(mus[i], config.sel_tau)
            cum = _qr_cumulative(grid, pdf)
            u[i] = np.interp(y[i], grid, cum, left=0.0, right=cum[-1])
    else:
        raise ValueError(f"head {head!r} has no predictive distribution")

    return np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)


def crossing_report(model, x, tau_grid):
    """Fraction of adjacent-tau quantile inversions over the given inputs."""
    if not model.spec.tau_conditioned:
        raise ValueError("crossing_report needs a tau-conditioned head")
    tau_grid = np.asarray(tau_grid, dtype=np.float64).ravel()
    mus = _tau_outputs(model, np.asarray(x, dtype=np.float64), tau_grid, ("mu",))["mu"]
    return float(np.mean(np.diff(mus, axis=1) < 0.0))


def compute_metrics(model, dataset, split, config):
    """Summary dict backing the metrics JSON report."""
    total, mean = test_loglik(model, dataset, split, config)
    curve = calibration_curve(pit_values(model, dataset, split, config))
    crossing = None
    if model.spec.tau_conditioned:
        crossing = crossing_report(model, dataset.X[split.test], config.sel_tau)
    return {
        "note": CALIBRATION_NOTE,
        "total_loglik": total,
        "mean_loglik": mean,
        "calibration_mae": curve.mae,
        "crossing_fraction": crossing,
        "n_test": int(len(split.test)),
    }


def export_densities(model, x, config, path, ids=None):
    """One CSV row per input: id, unit-max densities, then grid bounds."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x must be a 2-D batch")
    if ids is None:
        ids = list(range(x.shape[0]))
    header = ["id", *(f"d{j}" for j in range(config.grid_size)), "y_lo", "y_hi"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row_id, row in zip(ids, x):
            dg = predict_density(model, row, config, row_id=row_id)
            peak = dg.pdf.max()
            if not peak > 0.0:
                raise EvaluationError(f"all-zero density for input row {row_id}")
            values = dg.pdf / peak
            cells = [str(row_id)]
            cells.extend(repr(float(v)) for v in values)
            cells.append(repr(float(dg.y_grid[0])))
            cells.append(repr(float(dg.y_grid[-1])))
            fh.write(",".join(cells) + "\n")
