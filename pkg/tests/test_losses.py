"""Loss definitions against frozen high-precision oracles and invariants.

Frozen constants come from offline 50-digit direct summation (mpmath).
"""

import math

import numpy as np
import pytest

from umal import ndmath as nd
from umal.losses import (
    TauBatch,
    head_loss,
    independent_ald_nll,
    independent_qr_loss,
    mdn_nll,
    pinball,
    single_nll,
    umal_nll,
)

U_Y = np.array([0.3, -1.2])
U_TAU = (0.1, 0.3, 0.5, 0.7, 0.9)
U_MU = ((0.1, 0.2, 0.0, -0.3, 0.5), (-1.0, -1.4, -0.9, -1.1, -1.3))
U_B = ((0.4, 0.3, 0.8, 0.5, 0.6), (0.7, 0.2, 0.3, 0.9, 0.4))
UMAL_NLL_ORACLE = 1.1390244361592903
IND_ALD_NLL_ORACLE = 1.343415487364448

MDN_Y = np.array([0.45, -2.1])
MDN_LOGITS = ((0.3, -0.2, 0.1), (-1.0, 0.5, 0.2))
MDN_MUS = ((-0.5, 0.6, 1.5), (-2.0, -1.0, 0.0))
MDN_SCALES = ((0.7, 0.4, 1.2), (0.3, 0.8, 0.5))
MDN_NORMAL_NLL_ORACLE = 1.1651042444579445
MDN_LAPLACE_NLL_ORACLE = 1.278909064047969

SINGLE_Y = np.array([0.2, -1.1, 3.4])
SINGLE_MU = np.array([0.0, -1.5, 3.0])
SINGLE_SCALE = np.array([0.8, 0.5, 1.1])
SINGLE_NORMAL_NLL_ORACLE = 0.7844002500078423
SINGLE_LAPLACE_NLL_ORACLE = 0.8906991177487897


def _umal_inputs():
    mu = nd.Tensor(np.array(U_MU).ravel())
    b = nd.Tensor(np.array(U_B).ravel())
    tb = TauBatch(np.tile(U_TAU, 2), 5)
    return mu, b, tb


def test_pinball_examples():
    # over-estimation is charged (1 - tau), under-estimation tau
    assert pinball(np.array([2.0]), nd.Tensor(np.array([0.0])), 0.25).values.item() == 0.5
    assert pinball(np.array([-2.0]), nd.Tensor(np.array([0.0])), 0.25).values.item() == 1.5
    assert pinball(np.array([1.0]), nd.Tensor(np.array([1.0])), 0.7).values.item() == 0.0
    with pytest.raises(ValueError):
        pinball(np.array([1.0]), nd.Tensor(np.array([0.0])), 0.0)
    with pytest.raises(ValueError):
        pinball(np.array([1.0]), nd.Tensor(np.array([0.0])), 1.0)


def test_single_nll_matches_frozen_oracle():
    got_n = single_nll("normal", SINGLE_Y, nd.Tensor(SINGLE_MU), nd.Tensor(SINGLE_SCALE))
    got_l = single_nll("laplace", SINGLE_Y, nd.Tensor(SINGLE_MU), nd.Tensor(SINGLE_SCALE))
    assert got_n.values.item() == pytest.approx(SINGLE_NORMAL_NLL_ORACLE, abs=1e-13)
    assert got_l.values.item() == pytest.approx(SINGLE_LAPLACE_NLL_ORACLE, abs=1e-13)


def test_single_nll_closed_form_at_center():
    n = 8
    y = np.full(n, 1.7)
    mu = nd.Tensor(np.full(n, 1.7))
    one = nd.Tensor(np.ones(n))
    lap = single_nll("laplace", y, mu, one).values.item()
    norm = single_nll("normal", y, mu, one).values.item()
    assert lap == pytest.approx(math.log(2.0), abs=1e-14)
    assert norm == pytest.approx(0.5 * math.log(2.0 * math.pi), abs=1e-14)


def test_mdn_nll_matches_frozen_oracle():
    mus = nd.Tensor(np.array(MDN_MUS))
    scales = nd.Tensor(np.array(MDN_SCALES))
    logits = nd.Tensor(np.array(MDN_LOGITS))
    got_n = mdn_nll(MDN_Y, mus, scales, logits, "normal")
    got_l = mdn_nll(MDN_Y, mus, scales, logits, "laplace")
    assert got_n.values.item() == pytest.approx(MDN_NORMAL_NLL_ORACLE, abs=1e-13)
    assert got_l.values.item() == pytest.approx(MDN_LAPLACE_NLL_ORACLE, abs=1e-13)


def test_mdn_single_component_collapses_to_single_nll():
    y = SINGLE_Y
    mus = nd.Tensor(SINGLE_MU.reshape(-1, 1))
    scales = nd.Tensor(SINGLE_SCALE.reshape(-1, 1))
    logits = nd.Tensor(np.zeros((3, 1)))
    for kind, ref in (("normal", SINGLE_NORMAL_NLL_ORACLE), ("laplace", SINGLE_LAPLACE_NLL_ORACLE)):
        got = mdn_nll(y, mus, scales, logits, kind).values.item()
        assert got == pytest.approx(ref, abs=1e-13)


def test_mdn_identical_components_collapse(rng):
    n, m = 6, 4
    y = rng.normal(0.0, 1.0, n)
    mu = rng.normal(0.0, 1.0, n)
    sc = rng.uniform(0.3, 2.0, n)
    logits = rng.normal(0.0, 1.0, (n, m))  # any weights; components identical
    got = mdn_nll(
        y,
        nd.Tensor(np.repeat(mu[:, None], m, axis=1)),
        nd.Tensor(np.repeat(sc[:, None], m, axis=1)),
        nd.Tensor(logits),
        "normal",
    ).values.item()
    ref = single_nll("normal", y, nd.Tensor(mu), nd.Tensor(sc)).values.item()
    assert got == pytest.approx(ref, abs=1e-12)


def test_mdn_rejects_empty_mixture():
    with pytest.raises(ValueError):
        mdn_nll(
            np.array([0.0]),
            nd.Tensor(np.zeros((1, 0))),
            nd.Tensor(np.zeros((1, 0))),
            nd.Tensor(np.zeros((1, 0))),
            "normal",
        )


def test_umal_nll_matches_frozen_oracle():
    mu, b, tb = _umal_inputs()
    got = umal_nll(U_Y, mu, b, tb).values.item()
    assert got == pytest.approx(UMAL_NLL_ORACLE, abs=1e-13)


def test_independent_ald_nll_matches_frozen_oracle():
    mu, b, tb = _umal_inputs()
    got = independent_ald_nll(U_Y, mu, b, tb).values.item()
    assert got == pytest.approx(IND_ALD_NLL_ORACLE, abs=1e-13)


def test_single_draw_bound_is_bitwise_equal(rng):
    """At n_tau = 1 the independent objective equals the mixture objective."""
    for trial in range(20):
        n = int(rng.integers(1, 9))
        y = rng.normal(0.0, 2.0, n)
        mu = nd.Tensor(rng.normal(0.0, 2.0, n))
        b = nd.Tensor(rng.uniform(0.1, 2.0, n))
        tb = TauBatch(rng.uniform(0.05, 0.95, n), 1)
        a = umal_nll(y, mu, b, tb).values.item()
        c = independent_ald_nll(y, mu, b, tb).values.item()
        assert a == c


def test_jensen_gap_is_nonnegative(rng):
    for trial in range(200):
        n_tau = int(rng.choice([1, 2, 5, 100]))
        n = int(rng.integers(1, 7))
        y = rng.normal(0.0, 2.0, n)
        mu = nd.Tensor(rng.normal(0.0, 2.0, n * n_tau))
        b = nd.Tensor(rng.uniform(0.05, 2.0, n * n_tau))
        tb = TauBatch(rng.uniform(0.01, 0.99, n * n_tau), n_tau)
        gap = (
            independent_ald_nll(y, mu, b, tb).values.item()
            - umal_nll(y, mu, b, tb).values.item()
        )
        assert gap >= -1e-12
        if n_tau == 1:
            assert gap == 0.0


def test_independent_qr_loss_nested_loop_oracle(rng):
    n, n_tau = 5, 4
    y = rng.normal(0.0, 2.0, n)
    mu_arr = rng.normal(0.0, 2.0, n * n_tau)
    taus = rng.uniform(0.05, 0.95, n * n_tau)
    ref = 0.0
    for i in range(n):
        for t in range(n_tau):
            k = i * n_tau + t
            diff = y[i] - mu_arr[k]
            ref += max(taus[k] * diff, (taus[k] - 1.0) * diff)
    ref /= n * n_tau
    got = independent_qr_loss(y, nd.Tensor(mu_arr), TauBatch(taus, n_tau)).values.item()
    assert got == pytest.approx(ref, abs=1e-13)


def test_losses_are_translation_invariant(rng):
    """Shifting y and every location by the same constant changes nothing."""
    mu, b, tb = _umal_inputs()
    shift = 13.75
    mu_s = nd.Tensor(mu.values + shift)
    base_u = umal_nll(U_Y, mu, b, tb).values.item()
    base_i = independent_ald_nll(U_Y, mu, b, tb).values.item()
    assert umal_nll(U_Y + shift, mu_s, b, tb).values.item() == pytest.approx(base_u, abs=1e-12)
    assert independent_ald_nll(U_Y + shift, mu_s, b, tb).values.item() == pytest.approx(
        base_i, abs=1e-12
    )


def test_losses_stay_finite_in_extreme_tails():
    y = np.array([1000.0])
    mu = nd.Tensor(np.array([0.0]))
    b = nd.Tensor(np.array([0.01]))
    tb = TauBatch(np.array([0.5]), 1)
    val = umal_nll(y, mu, b, tb).values.item()
    assert np.isfinite(val) and val > 1e4


def test_tau_batch_validation():
    with pytest.raises(ValueError):
        TauBatch(np.array([0.5, 0.5, 0.5]), 2)  # length not a multiple
    with pytest.raises(ValueError):
        TauBatch(np.array([0.5]), 0)
    with pytest.raises(ValueError):
        TauBatch(np.array([1.5]), 1)
    tb = TauBatch(np.array([0.25, 0.5, 0.3, 0.7]), 2)
    assert tb.batch_size == 2 and tb.n_tau == 2


def test_head_loss_dispatch_matches_direct_calls():
    mu, b, tb = _umal_inputs()
    outputs = {"mu": mu, "b": b}
    assert head_loss("umal", U_Y, outputs, tb).values.item() == pytest.approx(
        UMAL_NLL_ORACLE, abs=1e-13
    )
    assert head_loss("independent_ald", U_Y, outputs, tb).values.item() == pytest.approx(
        IND_ALD_NLL_ORACLE, abs=1e-13
    )
    qr_out = {"mu": mu}
    direct = independent_qr_loss(U_Y, mu, tb).values.item()
    assert head_loss("independent_qr", U_Y, qr_out, tb).values.item() == direct
    single = {"mu": nd.Tensor(SINGLE_MU), "scale": nd.Tensor(SINGLE_SCALE)}
    assert head_loss("single_normal", SINGLE_Y, single).values.item() == pytest.approx(
        SINGLE_NORMAL_NLL_ORACLE, abs=1e-13
    )
    point = {"mu": nd.Tensor(np.array([0.0]))}
    assert head_loss("point_qr", np.array([2.0]), point).values.item() == 1.0
    with pytest.raises(ValueError):
        head_loss("umal", U_Y, outputs, None)
    with pytest.raises(ValueError):
        head_loss("no_such_head", U_Y, outputs, tb)
