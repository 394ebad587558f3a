"""Hot numeric kernels, each with a numba-jitted and a pure-numpy twin.

The active set is picked at import time from the ``UMAL_BACKEND`` environment
variable ("numba" or "numpy"; unset prefers numba when it imports cleanly) and
can be swapped at runtime with :func:`set_backend`.  ``benchmarks/bench_kernels.py``
compares the two paths.

All kernels expect C-contiguous float64 arrays: 1-D for the elementwise ones,
2-D for the row-wise logsumexp pair.  The twins share their scalar formulas;
results agree to within a couple of ulps (numba's scalar libm and numpy's
vector transcendentals round differently, and the row reductions sum in a
different order), with the purely arithmetic pinball pair agreeing bitwise.
"""

import os

import numpy as np

__all__ = [
    "active_backend",
    "set_backend",
    "softplus_fwd",
    "softplus_bwd",
    "ald_logpdf_fwd",
    "ald_logpdf_bwd",
    "pinball_fwd",
    "pinball_bwd",
    "normal_logpdf_fwd",
    "normal_logpdf_bwd",
    "laplace_logpdf_fwd",
    "laplace_logpdf_bwd",
    "logsumexp_rows_fwd",
    "logsumexp_rows_bwd",
]

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

_KERNEL_NAMES = [name for name in __all__ if name.endswith(("_fwd", "_bwd"))]


# ---------------------------------------------------------------------------
# pure-numpy implementations

def _np_softplus_fwd(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _np_softplus_bwd(x, g):
    t = np.exp(-np.abs(x))
    sig = np.where(x >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
    return g * sig


def _np_ald_logpdf_fwd(y, mu, b, tau):
    w = tau - (y < mu)
    return np.log(tau) + np.log1p(-tau) - np.log(b) - (y - mu) * w / b


def _np_ald_logpdf_bwd(y, mu, b, tau, g):
    w = tau - (y < mu)
    gmu = g * (w / b)
    gb = g * ((y - mu) * w - b) / (b * b)
    return gmu, gb


def _np_pinball_fwd(y, mu, tau):
    return (y - mu) * (tau - (y < mu))


def _np_pinball_bwd(y, mu, tau, g):
    return -g * (tau - (y < mu))


def _np_normal_logpdf_fwd(y, mu, sigma):
    z = (y - mu) / sigma
    return -_HALF_LOG_2PI - np.log(sigma) - 0.5 * z * z


def _np_normal_logpdf_bwd(y, mu, sigma, g):
    z = (y - mu) / sigma
    gmu = g * z / sigma
    gsigma = g * (z * z - 1.0) / sigma
    return gmu, gsigma


def _np_laplace_logpdf_fwd(y, mu, b):
    return -np.log(2.0 * b) - np.abs(y - mu) / b


def _np_laplace_logpdf_bwd(y, mu, b, g):
    r = y - mu
    gmu = g * np.sign(r) / b
    gb = g * (np.abs(r) - b) / (b * b)
    return gmu, gb


def _np_logsumexp_rows_fwd(a):
    m = np.max(a, axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(a - safe[:, None]), axis=1)
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(m), safe + np.log(s), m)


def _np_logsumexp_rows_bwd(a, out, g):
    return g[:, None] * np.exp(a - out[:, None])


_NUMPY_IMPLS = {name: globals()["_np_" + name] for name in _KERNEL_NAMES}


# ---------------------------------------------------------------------------
# numba twins

def _build_numba_impls():
    from numba import njit

    @njit(cache=True)
    def softplus_fwd(x):
        out = np.empty_like(x)
        for i in range(x.size):
            v = x[i]
            if v > 0.0:
                out[i] = v + np.log1p(np.exp(-v))
            else:
                out[i] = np.log1p(np.exp(v))
        return out

    @njit(cache=True)
    def softplus_bwd(x, g):
        out = np.empty_like(x)
        for i in range(x.size):
            v = x[i]
            if v >= 0.0:
                t = np.exp(-v)
                out[i] = g[i] / (1.0 + t)
            else:
                t = np.exp(v)
                out[i] = g[i] * t / (1.0 + t)
        return out

    @njit(cache=True)
    def ald_logpdf_fwd(y, mu, b, tau):
        out = np.empty_like(y)
        for i in range(y.size):
            w = tau[i] - (1.0 if y[i] < mu[i] else 0.0)
            out[i] = (
                np.log(tau[i])
                + np.log1p(-tau[i])
                - np.log(b[i])
                - (y[i] - mu[i]) * w / b[i]
            )
        return out

    @njit(cache=True)
    def ald_logpdf_bwd(y, mu, b, tau, g):
        gmu = np.empty_like(y)
        gb = np.empty_like(y)
        for i in range(y.size):
            w = tau[i] - (1.0 if y[i] < mu[i] else 0.0)
            gmu[i] = g[i] * (w / b[i])
            gb[i] = g[i] * ((y[i] - mu[i]) * w - b[i]) / (b[i] * b[i])
        return gmu, gb

    @njit(cache=True)
    def pinball_fwd(y, mu, tau):
        out = np.empty_like(y)
        for i in range(y.size):
            w = tau[i] - (1.0 if y[i] < mu[i] else 0.0)
            out[i] = (y[i] - mu[i]) * w
        return out

    @njit(cache=True)
    def pinball_bwd(y, mu, tau, g):
        out = np.empty_like(y)
        for i in range(y.size):
            w = tau[i] - (1.0 if y[i] < mu[i] else 0.0)
            out[i] = -g[i] * w
        return out

    @njit(cache=True)
    def normal_logpdf_fwd(y, mu, sigma):
        out = np.empty_like(y)
        for i in range(y.size):
            z = (y[i] - mu[i]) / sigma[i]
            out[i] = -_HALF_LOG_2PI - np.log(sigma[i]) - 0.5 * z * z
        return out

    @njit(cache=True)
    def normal_logpdf_bwd(y, mu, sigma, g):
        gmu = np.empty_like(y)
        gsigma = np.empty_like(y)
        for i in range(y.size):
            z = (y[i] - mu[i]) / sigma[i]
            gmu[i] = g[i] * z / sigma[i]
            gsigma[i] = g[i] * (z * z - 1.0) / sigma[i]
        return gmu, gsigma

    @njit(cache=True)
    def laplace_logpdf_fwd(y, mu, b):
        out = np.empty_like(y)
        for i in range(y.size):
            out[i] = -np.log(2.0 * b[i]) - np.abs(y[i] - mu[i]) / b[i]
        return out

    @njit(cache=True)
    def laplace_logpdf_bwd(y, mu, b, g):
        gmu = np.empty_like(y)
        gb = np.empty_like(y)
        for i in range(y.size):
            r = y[i] - mu[i]
            gmu[i] = g[i] * np.sign(r) / b[i]
            gb[i] = g[i] * (np.abs(r) - b[i]) / (b[i] * b[i])
        return gmu, gb

    @njit(cache=True)
    def logsumexp_rows_fwd(a):
        n, k = a.shape
        out = np.empty(n)
        for i in range(n):
            m = a[i, 0]
            for j in range(1, k):
                if a[i, j] > m:
                    m = a[i, j]
            if not np.isfinite(m):
                out[i] = m
                continue
            s = 0.0
            for j in range(k):
                s += np.exp(a[i, j] - m)
            out[i] = m + np.log(s)
        return out

    @njit(cache=True)
    def logsumexp_rows_bwd(a, out, g):
        n, k = a.shape
        ga = np.empty_like(a)
        for i in range(n):
            for j in range(k):
                ga[i, j] = g[i] * np.exp(a[i, j] - out[i])
        return ga

    local = locals()
    return {name: local[name] for name in _KERNEL_NAMES}


# ---------------------------------------------------------------------------
# backend selection

_ACTIVE = None
_NUMBA_CACHE = None


def _resolve_default():
    req = os.environ.get("UMAL_BACKEND", "").strip().lower()
    if req == "numpy":
        return "numpy"
    if req == "numba":
        return "numba"
    if req:
        raise ValueError(f"UMAL_BACKEND must be 'numba' or 'numpy', got {req!r}")
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


def set_backend(name):
    """Bind the named kernel set ("numba" or "numpy") module-wide."""
    global _ACTIVE, _NUMBA_CACHE
    if name == "numpy":
        impls = _NUMPY_IMPLS
    elif name == "numba":
        if _NUMBA_CACHE is None:
            _NUMBA_CACHE = _build_numba_impls()
        impls = _NUMBA_CACHE
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    for key, fn in impls.items():
        globals()[key] = fn
    _ACTIVE = name
    return name


def active_backend():
    return _ACTIVE


set_backend(_resolve_default())
