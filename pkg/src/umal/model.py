"""Network construction: dense ReLU trunk, output heads, tau expansion.

A model is a stack of dense layers (ReLU on all but the last) whose final
width P is fixed by the head kind, plus a head-specific postprocessing of
the raw outputs: scales pass through softplus with a 1e-6 floor, mixture
weights through a row softmax, locations stay raw.

The tau-conditioned heads (independent_qr, independent_ald, umal) consume
one extra input column carrying tau; ``expand_with_tau`` builds that layout
by repeating each input row n_tau times.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import ndmath as nd
from .dists import TAU_MAX, TAU_MIN
from .losses import TauBatch

HEAD_KINDS = (
    "point_qr",
    "single_normal",
    "single_laplace",
    "mdn_normal",
    "mdn_laplace",
    "independent_qr",
    "independent_ald",
    "umal",
)

TAU_CONDITIONED_HEADS = ("independent_qr", "independent_ald", "umal")

# layer widths from the reference experiments: a 4-layer stack for the
# synthetic benchmark, a 6-layer stack for the tabular price datasets
PRESET_WIDTHS = {
    "synthetic": (120, 60, 10),
    "rpf": (120, 120, 60, 60, 10),
}


def _draw_taus(count, rng):
    return np.clip(rng.uniform(0.0, 1.0, count), TAU_MIN, TAU_MAX)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: head kind, input width, trunk widths.

    m is the component count for the mdn_* heads and must stay 1 otherwise.
    """

    head: str
    input_dim: int
    hidden_widths: tuple = (120, 60, 10)
    m: int = 1

    def __post_init__(self):
        if self.head not in HEAD_KINDS:
            raise ValueError(f"unknown head kind: {self.head!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must all be >= 1")
        if self.m < 1:
            raise ValueError("component count m must be >= 1")
        if self.m != 1 and not self.head.startswith("mdn_"):
            raise ValueError(f"head {self.head!r} does not take mixture components")

    @property
    def tau_conditioned(self):
        return self.head in TAU_CONDITIONED_HEADS

    @property
    def p(self):
        """Output-layer width implied by the head kind."""
        if self.head in ("point_qr", "independent_qr"):
            return 1
        if self.head in ("single_normal", "single_laplace"):
            return 2
        if self.head in ("independent_ald", "umal"):
            return 2
        return 3 * self.m

    @property
    def trunk_input_dim(self):
        return self.input_dim + 1 if self.tau_conditioned else self.input_dim

    @property
    def layer_dims(self):
        """(fan_in, fan_out) per dense layer, trunk first."""
        widths = [self.trunk_input_dim, *self.hidden_widths, self.p]
        return list(zip(widths[:-1], widths[1:]))

    def to_dict(self):
        return {
            "head": self.head,
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "m": self.m,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            head=d["head"],
            input_dim=int(d["input_dim"]),
            hidden_widths=tuple(d["hidden_widths"]),
            m=int(d.get("m", 1)),
        )


def expand_with_tau(x, n_tau, tau_source, rng=None):
    """Repeat rows and append a tau column, Algorithm-1 style.

    x is [bs, F]; row k*n_tau + t of the result carries original row k and
    tau_t.  tau_source is either the string "uniform_random" (needs rng) or
    an explicit sequence of length n_tau (tiled per sample) or bs*n_tau
    (used as laid out).  Returns (expanded [bs*n_tau, F+1], TauBatch).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("x must be a non-empty 2-D batch")
    n_tau = int(n_tau)
    if n_tau < 1:
        raise ValueError("n_tau must be >= 1")
    bs = x.shape[0]
    if isinstance(tau_source, str):
        if tau_source != "uniform_random":
            raise ValueError(f"unknown tau source: {tau_source!r}")
        if rng is None:
            raise ValueError("uniform_random tau source needs an rng")
        taus = _draw_taus(bs * n_tau, rng)
    else:
        taus = np.asarray(tau_source, dtype=np.float64).ravel()
        if not (np.all(taus > 0.0) and np.all(taus < 1.0)):
            raise ValueError("explicit tau values must lie in (0, 1)")
        taus = np.clip(taus, TAU_MIN, TAU_MAX)
        if taus.size == n_tau:
            taus = np.tile(taus, bs)
        elif taus.size != bs * n_tau:
            raise ValueError(
                f"explicit tau list must have length {n_tau} or {bs * n_tau}, "
                f"got {taus.size}"
            )
    expanded = np.concatenate(
        [np.repeat(x, n_tau, axis=0), taus[:, None]], axis=1
    )
    return np.ascontiguousarray(expanded), TauBatch(taus, n_tau)


class Model:
    """A trunk plus head with concrete weights.

    params is the flat list [W1, b1, W2, b2, ...]; preprocessing carries the
    ingestion metadata needed to rebuild feature matrices from raw CSVs.
    Weights are mutated only by training; evaluation is read-only.
    """

    def __init__(self, spec, params, preprocessing=None):
        expected = spec.layer_dims
        if len(params) != 2 * len(expected):
            raise ValueError(
                f"expected {2 * len(expected)} parameter tensors, got {len(params)}"
            )
        for i, (fan_in, fan_out) in enumerate(expected):
            if params[2 * i].values.shape != (fan_in, fan_out):
                raise ValueError(
                    f"layer {i} weight shape {params[2 * i].values.shape} "
                    f"!= {(fan_in, fan_out)}"
                )
            if params[2 * i + 1].values.shape != (fan_out,):
                raise ValueError(f"layer {i} bias shape mismatch")
        self.spec = spec
        self.params = params
        self.preprocessing = preprocessing

    @classmethod
    def initialize(cls, spec, rng):
        """Glorot-uniform weights, zero biases."""
        params = []
        for fan_in, fan_out in spec.layer_dims:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, (fan_in, fan_out))
            params.append(nd.Tensor(w, requires_grad=True))
            params.append(nd.Tensor(np.zeros(fan_out), requires_grad=True))
        return cls(spec, params)

    def forward(self, x):
        """Run the trunk and head postprocessing; returns a dict of tensors.

        Keys by head: point/quantile heads -> mu; single heads -> mu, scale;
        mixture heads -> mus, scales, logits, alpha; umal-style heads ->
        mu, b.  Records on the active tape when one is open.
        """
        if not isinstance(x, nd.Tensor):
            x = nd.Tensor(np.asarray(x, dtype=np.float64))
        if x.values.ndim != 2 or x.values.shape[1] != self.spec.trunk_input_dim:
            raise ValueError(
                f"input width {x.values.shape} does not match expected "
                f"[n, {self.spec.trunk_input_dim}]"
            )
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = nd.add(nd.matmul(h, self.params[2 * i]), self.params[2 * i + 1])
            if i < n_layers - 1:
                h = nd.relu(h)
        head = self.spec.head
        if head in ("point_qr", "independent_qr"):
            return {"mu": nd.column(h, 0)}
        if head in ("single_normal", "single_laplace"):
            scale = nd.add(nd.softplus(nd.column(h, 1)), 1e-6)
            return {"mu": nd.column(h, 0), "scale": scale}
        if head in ("independent_ald", "umal"):
            b = nd.add(nd.softplus(nd.column(h, 1)), 1e-6)
            return {"mu": nd.column(h, 0), "b": b}
        m = self.spec.m
        mus = nd.slice_cols(h, 0, m)
        scales = nd.add(nd.softplus(nd.slice_cols(h, m, 2 * m)), 1e-6)
        logits = nd.slice_cols(h, 2 * m, 3 * m)
        return {
            "mus": mus,
            "scales": scales,
            "logits": logits,
            "alpha": nd.softmax_rows(logits),
        }

    def forward_arrays(self, x):
        """Forward pass returning plain arrays (no tape interaction)."""
        return {k: v.values for k, v in self.forward(x).items()}

    def copy_weights(self):
        return [p.values.copy() for p in self.params]

    def set_weights(self, arrays):
        if len(arrays) != len(self.params):
            raise ValueError("weight list length mismatch")
        for p, a in zip(self.params, arrays):
            if p.values.shape != a.shape:
                raise ValueError("weight shape mismatch")
            p.values = np.ascontiguousarray(a, dtype=np.float64)

    def to_json_dict(self):
        return {
            "format": "umal-model-v1",
            "spec": self.spec.to_dict(),
            "weights": [
                {"shape": list(p.values.shape), "data": p.values.ravel().tolist()}
                for p in self.params
            ],
            "preprocessing": self.preprocessing,
        }

    @classmethod
    def from_json_dict(cls, d):
        spec = ModelSpec.from_dict(d["spec"])
        params = []
        for entry in d["weights"]:
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            params.append(nd.Tensor(arr, requires_grad=True))
        return cls(spec, params, preprocessing=d.get("preprocessing"))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))
