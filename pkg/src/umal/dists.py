"""Log-densities, CDFs, quantiles, and samplers for the response families.

Covers the Normal, the Laplace, the asymmetric Laplacian (the three-parameter
family whose location is the tau-quantile), and finite mixtures of those.
Everything here is a pure function of numpy arrays; component containers
validate their parameters once at construction.

Component parameters may be passed as an :class:`ALDComponent` or as a plain
``(mu, b, tau)`` triple of scalars or broadcastable arrays, so vectorized
callers can evaluate hundreds of components against a grid in one call.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

TAU_MIN = 1e-3
TAU_MAX = 1.0 - 1e-3


class ALDComponent:
    """One asymmetric Laplacian: location mu, scale b > 0, asymmetry tau.

    tau must lie in the open unit interval and is clamped to
    [1e-3, 1 - 1e-3] at construction; the density degenerates at the
    endpoints where tau(1 - tau) = 0.
    """

    __slots__ = ("mu", "b", "tau")

    def __init__(self, mu, b, tau):
        mu, b, tau = float(mu), float(b), float(tau)
        if not b > 0.0:
            raise ValueError(f"ALD scale must be positive, got {b}")
        if not 0.0 < tau < 1.0:
            raise ValueError(f"ALD asymmetry must lie in (0, 1), got {tau}")
        self.mu = mu
        self.b = b
        self.tau = min(max(tau, TAU_MIN), TAU_MAX)

    def __repr__(self):
        return f"ALDComponent(mu={self.mu}, b={self.b}, tau={self.tau})"


def _ald_params(c):
    if isinstance(c, ALDComponent):
        return c.mu, c.b, c.tau
    mu, b, tau = c
    mu = np.asarray(mu, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if not np.all(b > 0.0):
        raise ValueError("ALD scale must be positive")
    if not (np.all(tau > 0.0) and np.all(tau < 1.0)):
        raise ValueError("ALD asymmetry must lie in (0, 1)")
    return mu, b, tau


def ald_logpdf(y, c):
    """log density log tau + log(1-tau) - log b - (y-mu)(tau - 1[y<mu])/b."""
    mu, b, tau = _ald_params(c)
    y = np.asarray(y, dtype=np.float64)
    w = tau - (y < mu)
    out = np.log(tau) + np.log1p(-tau) - np.log(b) - (y - mu) * w / b
    return out if out.ndim else float(out)


def ald_cdf(y, c):
    """Closed-form distribution function; continuous, with value tau at mu."""
    mu, b, tau = _ald_params(c)
    y = np.asarray(y, dtype=np.float64)
    z = (y - mu) / b
    lower = tau * np.exp(np.minimum((1.0 - tau) * z, 0.0))
    upper = 1.0 - (1.0 - tau) * np.exp(np.minimum(-tau * z, 0.0))
    out = np.where(y <= mu, lower, upper)
    return out if out.ndim else float(out)


def ald_quantile(q, c):
    """Inverse of ald_cdf on (0, 1); q = tau maps to mu."""
    mu, b, tau = _ald_params(c)
    q = np.asarray(q, dtype=np.float64)
    if not (np.all(q > 0.0) and np.all(q < 1.0)):
        raise ValueError("quantile level must lie in (0, 1)")
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = mu + b / (1.0 - tau) * np.log(q / tau)
        upper = mu - b / tau * np.log((1.0 - q) / (1.0 - tau))
    out = np.where(q <= tau, lower, upper)
    return out if out.ndim else float(out)


def ald_sample(c, size, rng):
    """Inverse-CDF draws from one component."""
    u = rng.uniform(0.0, 1.0, size)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return ald_quantile(u, c)


def _check_scale(scale):
    if not np.all(np.asarray(scale) > 0.0):
        raise ValueError("scale must be positive")


def base_logpdf(kind, y, mu, scale):
    """Exact log-density of a named two-parameter family.

    kind "normal" takes scale = standard deviation; kind "laplace" takes
    scale = diversity b.
    """
    _check_scale(scale)
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if kind == "normal":
        z = (y - mu) / scale
        out = -np.log(scale) - _HALF_LOG_2PI - 0.5 * z * z
    elif kind == "laplace":
        out = -np.log(2.0 * scale) - np.abs(y - mu) / scale
    else:
        raise ValueError(f"unknown distribution kind: {kind!r}")
    return out if out.ndim else float(out)


def base_cdf(kind, y, mu, scale):
    _check_scale(scale)
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if kind == "normal":
        out = ndtr((y - mu) / scale)
    elif kind == "laplace":
        z = (y - mu) / scale
        out = np.where(
            y < mu,
            0.5 * np.exp(np.minimum(z, 0.0)),
            1.0 - 0.5 * np.exp(np.minimum(-z, 0.0)),
        )
    else:
        raise ValueError(f"unknown distribution kind: {kind!r}")
    out = np.asarray(out)
    return out if out.ndim else float(out)


def base_quantile(kind, q, mu, scale):
    _check_scale(scale)
    q = np.asarray(q, dtype=np.float64)
    if not (np.all(q > 0.0) and np.all(q < 1.0)):
        raise ValueError("quantile level must lie in (0, 1)")
    mu = np.asarray(mu, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if kind == "normal":
        out = mu + scale * ndtri(q)
    elif kind == "laplace":
        out = np.where(
            q < 0.5,
            mu + scale * np.log(2.0 * q),
            mu - scale * np.log(2.0 * (1.0 - q)),
        )
    else:
        raise ValueError(f"unknown distribution kind: {kind!r}")
    out = np.asarray(out)
    return out if out.ndim else float(out)


class FiniteMixture:
    """Weighted mixture of named components.

    components is a list of (weight, kind, params) with kind in
    {"normal", "laplace", "ald"}; params is (mu, scale) for the named pairs
    and (mu, b, tau) for "ald".  Weights must be nonnegative and sum to 1
    within 1e-9.
    """

    __slots__ = ("components",)

    def __init__(self, components):
        components = list(components)
        if not components:
            raise ValueError("mixture needs at least one component")
        total = 0.0
        for weight, kind, params in components:
            if weight < 0.0:
                raise ValueError(f"mixture weight must be nonnegative, got {weight}")
            if kind == "ald":
                _ald_params(tuple(params))
            elif kind in ("normal", "laplace"):
                _check_scale(params[1])
            else:
                raise ValueError(f"unknown distribution kind: {kind!r}")
            total += weight
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {total}, expected 1")
        self.components = components

    @classmethod
    def equal_ald(cls, mus, bs, taus):
        """Equal-weight asymmetric-Laplacian mixture, one component per tau."""
        mus = np.asarray(mus, dtype=np.float64).ravel()
        bs = np.asarray(bs, dtype=np.float64).ravel()
        taus = np.asarray(taus, dtype=np.float64).ravel()
        if not mus.size == bs.size == taus.size:
            raise ValueError("component parameter arrays must have equal length")
        if mus.size == 0:
            raise ValueError("mixture needs at least one component")
        w = 1.0 / mus.size
        return cls(
            [(w, "ald", (m, b, t)) for m, b, t in zip(mus, bs, taus)]
        )

    @classmethod
    def weighted(cls, kind, alphas, mus, scales):
        """Mixture of one named family with softmax-style weights."""
        alphas = np.asarray(alphas, dtype=np.float64).ravel()
        mus = np.asarray(mus, dtype=np.float64).ravel()
        scales = np.asarray(scales, dtype=np.float64).ravel()
        return cls(
            [(a, kind, (m, s)) for a, m, s in zip(alphas, mus, scales)]
        )

    def __len__(self):
        return len(self.components)


def _component_logpdf(kind, params, y):
    if kind == "ald":
        return ald_logpdf(y, tuple(params))
    return base_logpdf(kind, y, params[0], params[1])


def _component_cdf(kind, params, y):
    if kind == "ald":
        return ald_cdf(y, tuple(params))
    return base_cdf(kind, y, params[0], params[1])


def mixture_logpdf(y, mix):
    """logsumexp over log weight + component log density; single component
    reduces to that component's logpdf exactly."""
    y = np.asarray(y, dtype=np.float64)
    if len(mix.components) == 1:
        weight, kind, params = mix.components[0]
        out = np.log(weight) + _component_logpdf(kind, params, y)
        return out if out.ndim else float(out)
    flat = y.ravel()
    logs = np.empty((flat.size, len(mix.components)))
    with np.errstate(divide="ignore"):
        for j, (weight, kind, params) in enumerate(mix.components):
            logs[:, j] = np.log(weight) + _component_logpdf(kind, params, flat)
    m = np.max(logs, axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    out = safe + np.log(np.sum(np.exp(logs - safe[:, None]), axis=1))
    out = out.reshape(y.shape)
    return out if out.ndim else float(out)


def mixture_cdf(y, mix):
    """Weighted sum of component CDFs."""
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros(y.shape)
    for weight, kind, params in mix.components:
        out = out + weight * _component_cdf(kind, params, y)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def mixture_sample(mix, size, rng):
    """Draw by picking a component per sample, then inverse-CDF sampling it."""
    weights = np.array([c[0] for c in mix.components])
    idx = rng.choice(len(mix.components), size=size, p=weights / weights.sum())
    u = np.clip(rng.uniform(0.0, 1.0, size), 1e-12, 1.0 - 1e-12)
    out = np.empty(size, dtype=np.float64)
    for j, (_, kind, params) in enumerate(mix.components):
        mask = idx == j
        if not np.any(mask):
            continue
        if kind == "ald":
            out[mask] = ald_quantile(u[mask], tuple(params))
        else:
            out[mask] = base_quantile(kind, u[mask], params[0], params[1])
    return out
