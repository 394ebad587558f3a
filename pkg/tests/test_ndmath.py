"""Tape correctness: finite-difference checks and numeric edge cases."""

import math

import numpy as np
import pytest

from umal import ndmath as nd

from conftest import finite_difference_grads, max_relative_error, tape_grads

# frozen scalar logsumexp oracle (mpmath, 50 digits, direct summation)
LSE_V = (-1.0, 0.5, 3.25, -7.5)
LSE_ORACLE = 3.3253055424095734


def test_scalar_logsumexp_examples():
    assert nd.logsumexp(np.array([3.7])) == 3.7
    assert nd.logsumexp(np.array([0.0, 0.0])) == pytest.approx(math.log(2.0), abs=1e-15)
    big = nd.logsumexp(np.array([1000.0, 1000.0]))
    assert big == pytest.approx(1000.0 + math.log(2.0), abs=1e-12)
    assert nd.logsumexp(np.array(LSE_V)) == pytest.approx(LSE_ORACLE, abs=1e-14)
    with pytest.raises(ValueError):
        nd.logsumexp(np.array([]))


def test_scalar_logsumexp_shift_invariance(rng):
    v = rng.normal(0.0, 3.0, 50)
    base = nd.logsumexp(v)
    for c in (-1e4, -1.0, 1.0, 1e4):
        assert nd.logsumexp(v + c) - c == pytest.approx(base, abs=1e-9)


def test_softplus_stays_finite_and_positive():
    x = nd.Tensor(np.array([-745.0, -100.0, 0.0, 100.0, 745.0]))
    out = nd.softplus(x).values
    assert np.all(np.isfinite(out))
    assert np.all(out > 0.0)
    assert out[2] == pytest.approx(math.log(2.0), abs=1e-15)
    assert out[3] == pytest.approx(100.0, abs=1e-12)


def test_backprop_simple_square():
    w = nd.Tensor(np.array([3.0]), requires_grad=True)
    with nd.Tape() as tape:
        loss = nd.sum_all(nd.mul(w, w))
        nd.backprop(tape, loss)
    assert loss.values.item() == 9.0
    assert w.grad[0] == pytest.approx(6.0, abs=1e-12)


def test_backprop_requires_scalar_loss():
    w = nd.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with nd.Tape() as tape:
        out = nd.mul(w, w)
        with pytest.raises(ValueError):
            nd.backprop(tape, out)


def test_logsumexp_rows_equal_inputs_split_gradient():
    x = nd.Tensor(np.array([[2.0, 2.0]]), requires_grad=True)
    with nd.Tape() as tape:
        loss = nd.sum_all(nd.logsumexp_rows(x))
        nd.backprop(tape, loss)
    assert loss.values.item() == pytest.approx(2.0 + math.log(2.0), abs=1e-12)
    assert np.allclose(x.grad, [[0.5, 0.5]], atol=1e-12)


def test_broadcast_gradient_unreduces_correctly():
    a = nd.Tensor(np.ones((3, 4)), requires_grad=True)
    b = nd.Tensor(np.arange(4.0), requires_grad=True)
    with nd.Tape() as tape:
        loss = nd.sum_all(nd.mul(nd.add(a, b), nd.Tensor(np.full((3, 4), 2.0))))
        nd.backprop(tape, loss)
    assert a.grad.shape == (3, 4)
    assert b.grad.shape == (4,)
    assert np.allclose(a.grad, 2.0)
    assert np.allclose(b.grad, 6.0)  # summed over the broadcast axis


def _fd_check(build_loss, params, tol=1e-6):
    _, analytic = tape_grads(build_loss, params)

    def plain(arrays):
        tensors = [nd.Tensor(p) for p in arrays]
        return build_loss(tensors).values.item()

    numeric = finite_difference_grads(plain, [p.copy() for p in params])
    assert max_relative_error(analytic, numeric) < tol


def test_fd_matmul_bias_relu_chain(rng):
    w = rng.normal(0.0, 0.7, (3, 4))
    b = rng.normal(0.0, 0.7, 4)
    x = rng.normal(0.0, 1.0, (5, 3))

    def build(ps):
        h = nd.relu(nd.add(nd.matmul(nd.Tensor(x), ps[0]), ps[1]))
        return nd.mean_all(nd.mul(h, h))

    _fd_check(build, [w, b])


def test_fd_softplus_exp_log_chain(rng):
    v = rng.normal(0.0, 1.0, 6)

    def build(ps):
        s = nd.softplus(ps[0])
        return nd.mean_all(nd.log(nd.add(nd.exp(nd.neg(s)), nd.Tensor(np.full(6, 0.5)))))

    _fd_check(build, [v])


def test_fd_fused_ald_logpdf(rng):
    n = 40
    y = rng.normal(0.0, 2.0, n)
    tau = rng.uniform(0.05, 0.95, n)
    mu = rng.normal(0.0, 1.0, n)
    raw = rng.normal(0.0, 0.5, n)
    # keep y - mu away from zero: the fused kernel kinks there
    mu = np.where(np.abs(y - mu) < 0.2, mu + 0.5, mu)

    def build(ps):
        b = nd.softplus(ps[1])
        return nd.neg(nd.mean_all(nd.ald_logpdf(y, ps[0], b, tau)))

    _fd_check(build, [mu, raw])


def test_fd_fused_normal_laplace_pinball(rng):
    n = 30
    y = rng.normal(0.0, 2.0, n)
    tau = rng.uniform(0.05, 0.95, n)
    mu = rng.normal(4.0, 1.0, n)  # offset keeps |y - mu| off the kink
    raw = rng.normal(0.0, 0.5, n)

    def normal_build(ps):
        return nd.neg(nd.mean_all(nd.normal_logpdf(y, ps[0], nd.softplus(ps[1]))))

    def laplace_build(ps):
        return nd.neg(nd.mean_all(nd.laplace_logpdf(y, ps[0], nd.softplus(ps[1]))))

    def pinball_build(ps):
        return nd.mean_all(nd.pinball_values(y, ps[0], tau))

    _fd_check(normal_build, [mu.copy(), raw])
    _fd_check(laplace_build, [mu.copy(), raw])
    _fd_check(pinball_build, [mu.copy()])


def test_fd_logsumexp_softmax_rows(rng):
    a = rng.normal(0.0, 2.0, (6, 5))
    weights = rng.normal(0.0, 1.0, (6, 5))

    def lse_build(ps):
        return nd.mean_all(nd.logsumexp_rows(ps[0]))

    def lsm_build(ps):
        return nd.mean_all(nd.mul(nd.log_softmax_rows(ps[0]), nd.Tensor(weights)))

    _fd_check(lse_build, [a.copy()])
    _fd_check(lsm_build, [a.copy()])


def test_fd_repeat_concat_column_ops(rng):
    x = rng.normal(0.0, 1.0, (4, 2))
    tau = rng.uniform(0.1, 0.9, 12)

    def build(ps):
        rep = nd.repeat_rows(ps[0], 3)
        both = nd.concat_cols(rep, nd.Tensor(tau.reshape(-1, 1)))
        return nd.mean_all(nd.mul(nd.column(both, 0), nd.column(both, 2)))

    _fd_check(build, [x])


def test_forward_is_deterministic(rng):
    w = rng.normal(0.0, 1.0, (8, 8))
    x = rng.normal(0.0, 1.0, (16, 8))
    a = nd.matmul(nd.Tensor(x), nd.Tensor(w)).values
    b = nd.matmul(nd.Tensor(x), nd.Tensor(w)).values
    assert np.array_equal(a, b)
