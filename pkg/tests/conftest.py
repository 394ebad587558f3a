"""Shared fixtures and helpers for the umal test suite."""

import numpy as np
import pytest

from umal import ndmath as nd
from umal.model import Model, ModelSpec


def finite_difference_grads(loss_fn, params, h=1e-6):
    """Central finite differences of a scalar loss over a list of arrays.

    loss_fn takes the parameter list and returns a float; the step is scaled
    by max(1, |theta|) per entry.
    """
    grads = [np.zeros_like(p) for p in params]
    for k, p in enumerate(params):
        flat = p.ravel()
        gflat = grads[k].ravel()
        for j in range(flat.size):
            orig = flat[j]
            step = h * max(1.0, abs(orig))
            flat[j] = orig + step
            up = loss_fn(params)
            flat[j] = orig - step
            down = loss_fn(params)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * step)
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def tape_grads(build_loss, params):
    """Run a taped forward pass and return (loss value, gradient arrays)."""
    tensors = [nd.Tensor(p.copy(), requires_grad=True) for p in params]
    with nd.Tape() as tape:
        loss = build_loss(tensors)
        nd.backprop(tape, loss)
    return loss.values.item(), [t.grad.copy() for t in tensors]


def tiny_model(head, input_dim=1, hidden=(4,), m=1, seed=0, scale=0.5):
    """Small random-weight model for evaluation tests."""
    spec = ModelSpec(head=head, input_dim=input_dim, hidden_widths=hidden, m=m)
    model = Model.initialize(spec, np.random.default_rng(seed))
    model.set_weights([w * scale for w in model.copy_weights()])
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
