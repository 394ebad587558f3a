"""Datasets: the synthetic benchmark generator, CSV ingestion, and splits.

The synthetic generator draws x ~ U(0,1) and picks y from one of four
region-dependent distributions; its exact closed-form density and CDF are
exposed so calibration code can be checked against the ground truth.

Tabular ingestion reads RFC-4180 CSV with a header row and a JSON schema
assigning each column a role: target, numeric, numeric_minmax (scaled to
[0,1] with training-split statistics), categorical (one-hot plus an <UNK>
column for unseen levels), or drop.  Columns absent from the schema are
dropped.  The fitted preprocessing metadata is serializable and can be
reapplied to a raw file to reproduce the feature matrix bit-exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

UNK = "<UNK>"

# region boundaries on x; points exactly on a boundary fall left
_REGION_EDGES = np.array([0.21, 0.47, 0.61])
# region 4: three equiprobable uniforms given as (location, width)
_MIX_LO = np.array([8.0, 1.0, -4.5])
_MIX_HI = np.array([8.5, 4.0, -3.0])


class IngestionError(Exception):
    """Structured data-loading failure naming the offending row/column."""


@dataclass
class Dataset:
    """Feature matrix, targets, and the preprocessing that produced them."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list
    target_name: str
    preprocessing: dict | None = None

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64).ravel()
        if self.X.ndim != 2:
            raise ValueError("X must be 2-D")
        n, f = self.X.shape
        if n < 1 or f < 1 or len(self.y) != n:
            raise ValueError(f"inconsistent dataset shape: X {self.X.shape}, y {self.y.shape}")
        if len(self.feature_names) != f:
            raise ValueError("feature_names length does not match X width")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]


@dataclass
class Split:
    """Disjoint train/val/test row indices covering the whole dataset."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        joined = np.concatenate([self.train, self.val, self.test])
        if len(np.unique(joined)) != len(joined):
            raise ValueError("split indices overlap")
        if len(joined) and not np.array_equal(np.sort(joined), np.arange(len(joined))):
            raise ValueError("split indices do not cover 0..n-1")


def _regions(x):
    """Region index 0..3 per sample; boundary values belong to the left region."""
    return np.searchsorted(_REGION_EDGES, x, side="left")


def _wedge_width(x):
    """Upper bound of the region-3 uniform: linear from 1 at x=0.47 to 10 at x=0.61."""
    return 1.0 + 9.0 * (x - 0.47) / 0.14


def generate_synthetic(n=3800, seed=0):
    """The four-region synthetic benchmark.

    x ~ U(0,1); y by region: x <= 0.21 -> Beta(0.5, 1); x <= 0.47 ->
    Normal(3cos x - 2, |3cos x - 2|); x <= 0.61 -> U(0, g(x)) with g
    rising linearly from 1 to 10; otherwise one of three equiprobable
    uniforms on [8, 8.5], [1, 4], [-4.5, -3].
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    region = _regions(x)
    y = np.empty(n)

    mask = region == 0
    y[mask] = rng.beta(0.5, 1.0, mask.sum())

    mask = region == 1
    mu = 3.0 * np.cos(x[mask]) - 2.0
    y[mask] = rng.normal(mu, np.abs(mu))

    mask = region == 2
    y[mask] = rng.uniform(0.0, 1.0, mask.sum()) * _wedge_width(x[mask])

    mask = region == 3
    comp = rng.integers(0, 3, mask.sum())
    y[mask] = rng.uniform(_MIX_LO[comp], _MIX_HI[comp])

    return Dataset(x[:, None], y, ["x"], "y")


def true_logpdf(x, y):
    """Exact log p(y|x) of the synthetic generator."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    region = _regions(x)
    out = np.full(x.shape, -np.inf)

    with np.errstate(divide="ignore"):
        mask = region == 0
        inside = mask & (y > 0.0) & (y <= 1.0)
        out[inside] = np.log(0.5) - 0.5 * np.log(y[inside])

        mask = region == 1
        mu = 3.0 * np.cos(x[mask]) - 2.0
        sigma = np.abs(mu)
        z = (y[mask] - mu) / sigma
        out[mask] = -np.log(sigma) - 0.5 * np.log(2.0 * np.pi) - 0.5 * z * z

        mask = region == 2
        g = _wedge_width(x[mask])
        inside = np.zeros_like(out, dtype=bool)
        inside[mask] = (y[mask] >= 0.0) & (y[mask] <= g)
        out[inside] = -np.log(_wedge_width(x[inside]))

        mask = region == 3
        dens = np.zeros(mask.sum())
        for lo, hi in zip(_MIX_LO, _MIX_HI):
            dens += ((y[mask] >= lo) & (y[mask] <= hi)) / (3.0 * (hi - lo))
        out[mask] = np.log(dens)

    return out


def true_cdf(x, y):
    """Exact conditional CDF of the synthetic generator."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    region = _regions(x)
    out = np.empty(x.shape)

    mask = region == 0
    out[mask] = np.sqrt(np.clip(y[mask], 0.0, 1.0))

    mask = region == 1
    mu = 3.0 * np.cos(x[mask]) - 2.0
    out[mask] = ndtr((y[mask] - mu) / np.abs(mu))

    mask = region == 2
    out[mask] = np.clip(y[mask] / _wedge_width(x[mask]), 0.0, 1.0)

    mask = region == 3
    acc = np.zeros(mask.sum())
    for lo, hi in zip(_MIX_LO, _MIX_HI):
        acc += np.clip((y[mask] - lo) / (hi - lo), 0.0, 1.0) / 3.0
    out[mask] = acc

    return out


def split_dataset(n, fractions, seed):
    """Seeded shuffle then contiguous (train, val, test) partition."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, val, test)")
    if any(f < 0.0 for f in fractions):
        raise ValueError("fractions must be nonnegative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, expected 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(n * fractions[0] + 1e-9)
    n_val = int(n * fractions[1] + 1e-9)
    return Split(perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :])


def dataset_to_csv(dataset, path):
    """Write features plus target with a header row; floats keep full precision."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*dataset.feature_names, dataset.target_name])
        for row, target in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def read_csv_rows(path):
    """Header and string rows of a CSV file; structural errors are ingestion errors."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise IngestionError(f"{path}: empty file") from None
            rows = list(reader)
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    width = len(header)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise IngestionError(
                f"{path}: row {i + 1} has {len(row)} cells, header has {width}"
            )
    return header, rows


def default_schema(header):
    """Fallback schema: last column is the target, the rest are numeric."""
    return {"target": header[-1], "numeric": list(header[:-1])}


def _parse_float(value, row_idx, col_name):
    try:
        parsed = float(value)
    except ValueError:
        raise IngestionError(
            f"row {row_idx + 1}, column {col_name!r}: cannot parse {value!r} as a number"
        ) from None
    if not np.isfinite(parsed):
        raise IngestionError(
            f"row {row_idx + 1}, column {col_name!r}: non-finite value {value!r}"
        )
    return parsed


def _check_schema(header, schema):
    if "target" not in schema or not schema["target"]:
        raise IngestionError("schema must name a target column")
    allowed = {"target", "categorical", "numeric", "minmax", "drop"}
    unknown = sorted(set(schema) - allowed)
    if unknown:
        raise IngestionError(
            f"unknown schema keys {unknown}; expected a subset of {sorted(allowed)}"
        )
    roles = {}
    for role in ("categorical", "numeric", "minmax", "drop"):
        for name in schema.get(role, []):
            if name in roles:
                raise IngestionError(f"column {name!r} assigned two roles")
            roles[name] = role
    target = schema["target"]
    if target in roles:
        raise IngestionError(f"target column {target!r} also has role {roles[target]}")
    for name in [target, *roles]:
        if name not in header:
            raise IngestionError(f"schema column {name!r} not present in header")
    return roles


def fit_preprocessing(header, rows, schema, train_indices=None):
    """Derive per-column encoders from the training rows only.

    Returns metadata: column plan in header order (dropped and unlisted
    columns excluded), category level lists, and min/max statistics.
    """
    roles = _check_schema(header, schema)
    fit_rows = range(len(rows)) if train_indices is None else np.asarray(train_indices)
    columns = []
    for j, name in enumerate(header):
        if name == schema["target"]:
            continue
        role = roles.get(name, "drop")
        if role == "drop":
            continue
        if role == "categorical":
            levels = sorted({rows[i][j] for i in fit_rows})
            columns.append({"name": name, "role": role, "levels": levels})
        elif role == "minmax":
            values = [_parse_float(rows[i][j], i, name) for i in fit_rows]
            columns.append(
                {"name": name, "role": role, "min": min(values), "max": max(values)}
            )
        else:
            columns.append({"name": name, "role": "numeric"})
    feature_names = []
    for col in columns:
        if col["role"] == "categorical":
            feature_names.extend(f"{col['name']}={lvl}" for lvl in col["levels"])
            feature_names.append(f"{col['name']}={UNK}")
        else:
            feature_names.append(col["name"])
    return {
        "target": schema["target"],
        "columns": columns,
        "feature_names": feature_names,
    }


def apply_preprocessing(header, rows, meta, require_target=True):
    """Encode raw rows with fitted metadata; returns (X, y or None).

    Reapplying the same metadata to the same file reproduces X bit-exactly.
    """
    col_index = {name: j for j, name in enumerate(header)}
    for col in meta["columns"]:
        if col["name"] not in col_index:
            raise IngestionError(f"column {col['name']!r} missing from file")
    target = meta["target"]
    has_target = target in col_index
    if require_target and not has_target:
        raise IngestionError(f"missing target column {target!r}")

    n = len(rows)
    X = np.zeros((n, len(meta["feature_names"])))
    for i, row in enumerate(rows):
        k = 0
        for col in meta["columns"]:
            raw = row[col_index[col["name"]]]
            if col["role"] == "categorical":
                levels = col["levels"]
                width = len(levels) + 1
                try:
                    X[i, k + levels.index(raw)] = 1.0
                except ValueError:
                    X[i, k + width - 1] = 1.0
                k += width
            elif col["role"] == "minmax":
                value = _parse_float(raw, i, col["name"])
                span = col["max"] - col["min"]
                X[i, k] = (value - col["min"]) / span if span > 0.0 else 0.0
                k += 1
            else:
                X[i, k] = _parse_float(raw, i, col["name"])
                k += 1
    y = None
    if has_target:
        tj = col_index[target]
        y = np.array([_parse_float(row[tj], i, target) for i, row in enumerate(rows)])
    return X, y


def load_tabular(path, schema=None, train_indices=None):
    """Read a CSV into a Dataset, fitting preprocessing on the training rows.

    With train_indices omitted, statistics and category levels come from the
    whole file (fine for files that are entirely training data).
    """
    header, rows = read_csv_rows(path)
    if schema is None:
        schema = default_schema(header)
    meta = fit_preprocessing(header, rows, schema, train_indices)
    X, y = apply_preprocessing(header, rows, meta, require_target=True)
    return Dataset(X, y, list(meta["feature_names"]), meta["target"], preprocessing=meta)
