"""Dense float64 tensors with a reverse-mode computation tape.

Just enough autodiff for dense ReLU trunks and log-domain mixture losses:
matrix multiply, broadcast arithmetic, relu/softplus, exp/log, row-wise
softmax and logsumexp, concat/slice/repeat, reductions, and fused
log-density primitives whose forward/backward pairs live in
:mod:`umal.kernels`.

Ops record onto the innermost active :class:`Tape` whenever their output
depends on a tensor with ``requires_grad``; with no tape active they are
plain forward computations.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    """Row-major float64 array with an optional same-shape gradient slot."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad=False):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(np.asarray(self.values).item())

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of forward primitives.

    Nodes are appended in execution order, so walking the list backwards
    visits every node after all of its consumers.  Confine a tape to one
    thread for the duration of its forward/backward pass.
    """

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self._nodes)


def _record(out, backward):
    if _TAPES and out.requires_grad:
        _TAPES[-1]._nodes.append((out, backward))


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _accum(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backprop(tape, loss):
    """Replay ``tape`` backwards from a scalar ``loss``.

    Gradients accumulate into the ``grad`` slot of every tensor on the path
    from the parameters to the loss; callers read them off the parameter
    tensors afterwards.
    """
    if not isinstance(loss, Tensor) or loss.values.size != 1:
        raise ValueError("backprop needs a scalar loss tensor")
    loss.grad = np.ones_like(loss.values)
    for out, backward in reversed(tape._nodes):
        if out.grad is not None:
            backward(out.grad)


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting; backward un-broadcasts)

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.values + b.values, a.requires_grad or b.requires_grad)

    def backward(g):
        _accum(a, _unbroadcast(g, a.values.shape))
        _accum(b, _unbroadcast(g, b.values.shape))

    _record(out, backward)
    return out


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.values - b.values, a.requires_grad or b.requires_grad)

    def backward(g):
        _accum(a, _unbroadcast(g, a.values.shape))
        _accum(b, _unbroadcast(-g, b.values.shape))

    _record(out, backward)
    return out


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.values * b.values, a.requires_grad or b.requires_grad)

    def backward(g):
        _accum(a, _unbroadcast(g * b.values, a.values.shape))
        _accum(b, _unbroadcast(g * a.values, b.values.shape))

    _record(out, backward)
    return out


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.values / b.values, a.requires_grad or b.requires_grad)

    def backward(g):
        _accum(a, _unbroadcast(g / b.values, a.values.shape))
        _accum(b, _unbroadcast(-g * a.values / (b.values * b.values), b.values.shape))

    _record(out, backward)
    return out


def neg(a):
    a = _wrap(a)
    out = Tensor(-a.values, a.requires_grad)

    def backward(g):
        _accum(a, -g)

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.values.shape[1] != b.values.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: {a.values.shape} @ {b.values.shape}"
        )
    out = Tensor(a.values @ b.values, a.requires_grad or b.requires_grad)

    def backward(g):
        _accum(a, g @ b.values.T)
        _accum(b, a.values.T @ g)

    _record(out, backward)
    return out


def reshape(x, shape):
    x = _wrap(x)
    out = Tensor(np.reshape(x.values, shape), x.requires_grad)

    def backward(g):
        _accum(x, np.reshape(g, x.values.shape))

    _record(out, backward)
    return out


def repeat_rows(x, n):
    """Repeat each leading-axis entry ``n`` times (row k*n+t is source row k)."""
    if n < 1:
        raise ValueError("repeat count must be >= 1")
    x = _wrap(x)
    out = Tensor(np.repeat(x.values, n, axis=0), x.requires_grad)

    def backward(g):
        _accum(x, g.reshape((x.values.shape[0], n) + x.values.shape[1:]).sum(axis=1))

    _record(out, backward)
    return out


def concat_cols(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ValueError("concat_cols expects 2-D operands")
    wa = a.values.shape[1]
    out = Tensor(
        np.concatenate([a.values, b.values], axis=1),
        a.requires_grad or b.requires_grad,
    )

    def backward(g):
        _accum(a, g[:, :wa])
        _accum(b, g[:, wa:])

    _record(out, backward)
    return out


def column(x, j):
    """Extract column ``j`` of a 2-D tensor as a 1-D tensor."""
    x = _wrap(x)
    out = Tensor(x.values[:, j], x.requires_grad)

    def backward(g):
        gx = np.zeros_like(x.values)
        gx[:, j] = g
        _accum(x, gx)

    _record(out, backward)
    return out


def slice_cols(x, j0, j1):
    x = _wrap(x)
    out = Tensor(x.values[:, j0:j1], x.requires_grad)

    def backward(g):
        gx = np.zeros_like(x.values)
        gx[:, j0:j1] = g
        _accum(x, gx)

    _record(out, backward)
    return out


def sum_all(x):
    x = _wrap(x)
    out = Tensor(np.sum(x.values), x.requires_grad)

    def backward(g):
        _accum(x, np.broadcast_to(g, x.values.shape))

    _record(out, backward)
    return out


def mean_all(x):
    x = _wrap(x)
    out = Tensor(np.mean(x.values), x.requires_grad)

    def backward(g):
        _accum(x, np.broadcast_to(g / x.values.size, x.values.shape))

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# nonlinearities

def relu(x):
    x = _wrap(x)
    out = Tensor(np.maximum(x.values, 0.0), x.requires_grad)
    mask = x.values > 0.0

    def backward(g):
        _accum(x, g * mask)

    _record(out, backward)
    return out


def softplus(x):
    """Overflow-safe log(1 + exp(x)).

    Accepts a Tensor (tape-recorded) or plain floats/arrays; the result is
    strictly positive for any finite input.
    """
    if not isinstance(x, Tensor):
        arr = np.asarray(x, dtype=np.float64)
        out = kernels.softplus_fwd(np.ascontiguousarray(arr.ravel())).reshape(arr.shape)
        return float(out) if arr.ndim == 0 else out
    flat = np.ascontiguousarray(x.values.ravel())
    out = Tensor(kernels.softplus_fwd(flat).reshape(x.values.shape), x.requires_grad)

    def backward(g):
        _accum(
            x,
            kernels.softplus_bwd(flat, np.ascontiguousarray(g.ravel())).reshape(
                x.values.shape
            ),
        )

    _record(out, backward)
    return out


def exp(x):
    x = _wrap(x)
    out = Tensor(np.exp(x.values), x.requires_grad)

    def backward(g):
        _accum(x, g * out.values)

    _record(out, backward)
    return out


def log(x):
    x = _wrap(x)
    out = Tensor(np.log(x.values), x.requires_grad)

    def backward(g):
        _accum(x, g / x.values)

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# row-wise reductions

def logsumexp_rows(x):
    """Max-shifted log-sum-exp over the last axis of a 2-D tensor."""
    x = _wrap(x)
    if x.values.ndim != 2:
        raise ValueError("logsumexp_rows expects a 2-D tensor")
    vals = kernels.logsumexp_rows_fwd(np.ascontiguousarray(x.values))
    out = Tensor(vals, x.requires_grad)

    def backward(g):
        _accum(
            x,
            kernels.logsumexp_rows_bwd(
                np.ascontiguousarray(x.values), out.values, np.ascontiguousarray(g)
            ),
        )

    _record(out, backward)
    return out


def softmax_rows(x):
    """Max-shifted softmax over the last axis of a 2-D tensor."""
    x = _wrap(x)
    if x.values.ndim != 2:
        raise ValueError("softmax_rows expects a 2-D tensor")
    shifted = x.values - np.max(x.values, axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=1, keepdims=True)
    out = Tensor(s, x.requires_grad)

    def backward(g):
        inner = np.sum(g * s, axis=1, keepdims=True)
        _accum(x, s * (g - inner))

    _record(out, backward)
    return out


def log_softmax_rows(x):
    x = _wrap(x)
    lse = logsumexp_rows(x)
    return sub(x, reshape(lse, (x.values.shape[0], 1)))


# ---------------------------------------------------------------------------
# fused log-density primitives (y and tau enter as constants)

def _fused_two_param(fwd, bwd, y, p1, p2, extra=None):
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
    p1, p2 = _wrap(p1), _wrap(p2)
    shape = p1.values.shape
    yf = np.ascontiguousarray(np.broadcast_to(y, shape).ravel())
    f1 = np.ascontiguousarray(p1.values.ravel())
    f2 = np.ascontiguousarray(p2.values.ravel())
    if extra is not None:
        ef = np.ascontiguousarray(np.broadcast_to(extra, shape).ravel())
        args = (yf, f1, f2, ef)
    else:
        args = (yf, f1, f2)
    out = Tensor(fwd(*args).reshape(shape), p1.requires_grad or p2.requires_grad)

    def backward(g):
        g1, g2 = bwd(*args, np.ascontiguousarray(g.ravel()))
        _accum(p1, g1.reshape(shape))
        _accum(p2, g2.reshape(shape))

    _record(out, backward)
    return out


def ald_logpdf(y, mu, b, tau):
    """log density of an asymmetric Laplacian, elementwise over the batch.

    ``y`` and ``tau`` are constants; gradients flow to ``mu`` and ``b``.
    The indicator 1[y < mu] is held fixed in the backward pass (the density
    is continuous at y = mu, with a pinball-style kink).
    """
    tau = np.asarray(tau, dtype=np.float64)
    return _fused_two_param(
        kernels.ald_logpdf_fwd, kernels.ald_logpdf_bwd, y, mu, b, extra=tau
    )


def normal_logpdf(y, mu, sigma):
    return _fused_two_param(
        kernels.normal_logpdf_fwd, kernels.normal_logpdf_bwd, y, mu, sigma
    )


def laplace_logpdf(y, mu, b):
    return _fused_two_param(
        kernels.laplace_logpdf_fwd, kernels.laplace_logpdf_bwd, y, mu, b
    )


def pinball_values(y, mu, tau):
    """Asymmetric absolute error (y - mu)(tau - 1[y < mu]), elementwise."""
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
    mu = _wrap(mu)
    shape = mu.values.shape
    yf = np.ascontiguousarray(np.broadcast_to(y, shape).ravel())
    tf = np.ascontiguousarray(
        np.broadcast_to(np.asarray(tau, dtype=np.float64), shape).ravel()
    )
    mf = np.ascontiguousarray(mu.values.ravel())
    out = Tensor(kernels.pinball_fwd(yf, mf, tf).reshape(shape), mu.requires_grad)

    def backward(g):
        _accum(
            mu,
            kernels.pinball_bwd(yf, mf, tf, np.ascontiguousarray(g.ravel())).reshape(
                shape
            ),
        )

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# plain scalar/vector helpers (no tape)

def logsumexp(v):
    """log sum exp of a non-empty vector, computed with the max-shift trick."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("logsumexp of an empty vector")
    m = np.max(v)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))
