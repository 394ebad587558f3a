"""Command-line entry point for reproducible generation/train/eval runs.

Configuration merging: built-in defaults, then a JSON config file given via
--config, then explicit flags.  Every run prints its effective config and
serializes it next to its outputs, so any artifact can be replayed exactly
from the directory it lives in.

Exit codes: 0 success, 1 usage error, 2 data/ingestion error, 3 training or
evaluation failure (non-finite numbers), 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    IngestionError,
    apply_preprocessing,
    dataset_to_csv,
    default_schema,
    fit_preprocessing,
    generate_synthetic,
    load_tabular,
    read_csv_rows,
    split_dataset,
)
from .eval import (
    CALIBRATION_NOTE,
    EvaluationError,
    PredictConfig,
    calibration_curve,
    compute_metrics,
    export_densities,
    pit_values,
    test_loglik,
)
from .model import HEAD_KINDS, Model, ModelSpec, PRESET_WIDTHS
from .train import TrainConfig, TrainingDiverged, train_model, write_training_log

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAIN = 3
EXIT_IO = 4

# the full benchmark row set: label, head kind, mixture size
BENCH_ROWS = (
    ("normal", "single_normal", 1),
    ("laplace", "single_laplace", 1),
    ("independent_qr", "independent_qr", 1),
    ("mdn_normal_m2", "mdn_normal", 2),
    ("mdn_normal_m3", "mdn_normal", 3),
    ("mdn_normal_m4", "mdn_normal", 4),
    ("mdn_normal_m10", "mdn_normal", 10),
    ("mdn_laplace_m2", "mdn_laplace", 2),
    ("mdn_laplace_m3", "mdn_laplace", 3),
    ("mdn_laplace_m4", "mdn_laplace", 4),
    ("mdn_laplace_m10", "mdn_laplace", 10),
    ("independent_ald", "independent_ald", 1),
    ("umal", "umal", 1),
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _parse_widths(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(w) for w in text)
    if text in PRESET_WIDTHS:
        return PRESET_WIDTHS[text]
    try:
        return tuple(int(part) for part in str(text).split(","))
    except ValueError:
        raise _UsageError(f"cannot parse hidden widths {text!r}") from None


def _parse_fractions(text):
    if isinstance(text, (list, tuple)):
        parts = [float(f) for f in text]
    else:
        try:
            parts = [float(p) for p in str(text).split(",")]
        except ValueError:
            raise _UsageError(f"cannot parse split fractions {text!r}") from None
    if len(parts) != 3:
        raise _UsageError("split must give three fractions train,val,test")
    return tuple(parts)


def _load_json_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise _UsageError(f"invalid JSON in {path}: {exc}") from exc


def _merge_config(defaults, args):
    merged = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = _load_json_file(args.config)
        for key, value in file_cfg.items():
            if key in ("command",):
                continue
            if key not in defaults:
                raise _UsageError(f"unknown config key {key!r}")
            merged[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _require(cfg, *keys):
    for key in keys:
        if cfg.get(key) in (None, ""):
            raise _UsageError(f"missing required option --{key.replace('_', '-')}")


def _announce(command, cfg):
    print(f"effective config [{command}]: {json.dumps(cfg, sort_keys=True)}")


def _write_run_config(directory, command, cfg):
    payload = {"command": command, **cfg}
    with open(Path(directory) / "run_config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_sidecar_config(out_path, command, cfg):
    side = Path(str(out_path) + ".run_config.json")
    with open(side, "w", encoding="utf-8") as fh:
        json.dump({"command": command, **cfg}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_schema(cfg, header):
    schema = cfg.get("schema")
    if schema is None:
        return default_schema(header)
    if isinstance(schema, str):
        return _load_json_file(schema)
    return schema


def _predict_config(cfg):
    count = int(cfg["sel_tau"])
    if count < 1:
        raise _UsageError("sel-tau count must be >= 1")
    return PredictConfig(
        sel_tau=np.linspace(0.005, 0.995, count), grid_size=int(cfg["grid_size"])
    )


def _dataset_for_model(model, data_path, cfg):
    """Rebuild the feature matrix a model was trained on from a raw CSV."""
    header, rows = read_csv_rows(data_path)
    if model.preprocessing is not None:
        meta = model.preprocessing
        X, y = apply_preprocessing(header, rows, meta, require_target=True)
        return Dataset(X, y, list(meta["feature_names"]), meta["target"], meta)
    return load_tabular(data_path, _resolve_schema(cfg, header))


# ---------------------------------------------------------------------------
# subcommands

SYNTH_DEFAULTS = {"n": 3800, "seed": 0, "out": None}


def _cmd_synth_gen(args):
    cfg = _merge_config(SYNTH_DEFAULTS, args)
    _require(cfg, "out")
    _announce("synth-gen", cfg)
    dataset = generate_synthetic(int(cfg["n"]), int(cfg["seed"]))
    dataset_to_csv(dataset, cfg["out"])
    _write_sidecar_config(cfg["out"], "synth-gen", cfg)
    print(f"wrote {dataset.n} rows to {cfg['out']}")
    return EXIT_OK


TRAIN_DEFAULTS = {
    "data": None,
    "schema": None,
    "head": None,
    "hidden": "synthetic",
    "m": 1,
    "learning_rate": 1e-3,
    "batch_size": 256,
    "n_tau": 100,
    "max_epochs": 3000,
    "patience": 200,
    "optimizer": "adam",
    "seed": 0,
    "split": "0.4,0.1,0.5",
    "split_seed": None,
    "init_from": None,
    "out": None,
}


def _train_one(data_path, schema, fractions, split_seed, head, m, widths, tc,
               init_from=None, init_weights=None):
    """Shared train pipeline: ingest, split, fit; returns (model, log, split, dataset).

    Warm starts: init_from names a serialized donor model on disk (checked
    for matching layer dimensions), init_weights passes donor weight arrays
    directly (the bench path reusing its independent_ald row in memory).
    """
    header, rows = read_csv_rows(data_path)
    split = split_dataset(len(rows), fractions, split_seed)
    dataset = load_tabular(data_path, schema, train_indices=split.train)
    spec = ModelSpec(head, input_dim=dataset.n_features, hidden_widths=widths, m=m)
    if init_from is not None:
        donor = Model.load(init_from)
        if donor.spec.layer_dims != spec.layer_dims:
            raise _UsageError(
                f"--init-from model has layer dimensions {donor.spec.layer_dims}, "
                f"incompatible with head {head!r} at {spec.layer_dims}"
            )
        init_weights = donor.copy_weights()
    model, log = train_model(spec, dataset, split, tc, init_weights=init_weights)
    model.preprocessing = dataset.preprocessing
    return model, log, split, dataset


def _cmd_train(args):
    cfg = _merge_config(TRAIN_DEFAULTS, args)
    _require(cfg, "data", "head", "out")
    if cfg["head"] not in HEAD_KINDS:
        raise _UsageError(f"unknown head {cfg['head']!r}")
    _announce("train", cfg)
    header, _ = read_csv_rows(cfg["data"])
    schema = _resolve_schema(cfg, header)
    fractions = _parse_fractions(cfg["split"])
    split_seed = cfg["split_seed"] if cfg["split_seed"] is not None else cfg["seed"]
    tc = TrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        batch_size=int(cfg["batch_size"]),
        n_tau=int(cfg["n_tau"]),
        max_epochs=int(cfg["max_epochs"]),
        patience=int(cfg["patience"]),
        seed=int(cfg["seed"]),
        optimizer=cfg["optimizer"],
    )
    model, log, split, _ = _train_one(
        cfg["data"], schema, fractions, int(split_seed),
        cfg["head"], int(cfg["m"]), _parse_widths(cfg["hidden"]), tc,
        init_from=cfg["init_from"] or None,
    )
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    model.save(outdir / "model.json")
    write_training_log(log, outdir / "training_log.csv")
    cfg["schema"] = schema
    _write_run_config(outdir, "train", cfg)
    best = min(row["val_nll"] for row in log)
    print(
        f"trained {cfg['head']} for {len(log)} epochs; best val NLL {best:.6f}; "
        f"model at {outdir / 'model.json'}"
    )
    return EXIT_OK


EVAL_DEFAULTS = {
    "model": None,
    "data": None,
    "schema": None,
    "split": "0.4,0.1,0.5",
    "split_seed": None,
    "seed": 0,
    "sel_tau": 100,
    "grid_size": 500,
    "out": None,
}


def _cmd_eval(args):
    cfg = _merge_config(EVAL_DEFAULTS, args)
    _require(cfg, "model", "data", "out")
    _announce("eval", cfg)
    model = Model.load(cfg["model"])
    dataset = _dataset_for_model(model, cfg["data"], cfg)
    fractions = _parse_fractions(cfg["split"])
    split_seed = cfg["split_seed"] if cfg["split_seed"] is not None else cfg["seed"]
    split = split_dataset(dataset.n, fractions, int(split_seed))
    pc = _predict_config(cfg)
    metrics = compute_metrics(model, dataset, split, pc)
    curve = calibration_curve(pit_values(model, dataset, split, pc))
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(outdir / "calibration.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {CALIBRATION_NOTE}\n")
        fh.write("theta,empirical\n")
        for theta, emp in zip(curve.thetas, curve.empirical):
            fh.write(f"{float(theta)!r},{float(emp)!r}\n")
    _write_run_config(outdir, "eval", cfg)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return EXIT_OK


PREDICT_DEFAULTS = {
    "model": None,
    "data": None,
    "rows": "all",
    "sel_tau": 100,
    "grid_size": 500,
    "out": None,
}


def _parse_rows(text, n):
    if text == "all":
        return list(range(n))
    if ":" in text:
        lo, hi = text.split(":", 1)
        lo = int(lo) if lo else 0
        hi = int(hi) if hi else n
        return list(range(max(lo, 0), min(hi, n)))
    try:
        rows = [int(p) for p in text.split(",")]
    except ValueError:
        raise _UsageError(f"cannot parse row selection {text!r}") from None
    for r in rows:
        if not 0 <= r < n:
            raise _UsageError(f"row {r} out of range 0..{n - 1}")
    return rows


def _cmd_predict(args):
    cfg = _merge_config(PREDICT_DEFAULTS, args)
    _require(cfg, "model", "data", "out")
    _announce("predict", cfg)
    model = Model.load(cfg["model"])
    header, rows_csv = read_csv_rows(cfg["data"])
    if model.preprocessing is not None:
        X, _ = apply_preprocessing(header, rows_csv, model.preprocessing, require_target=False)
    else:
        schema = default_schema(header)
        meta = fit_preprocessing(header, rows_csv, schema)
        X, _ = apply_preprocessing(header, rows_csv, meta, require_target=False)
    selection = _parse_rows(str(cfg["rows"]), X.shape[0])
    pc = _predict_config(cfg)
    export_densities(model, X[selection], pc, cfg["out"], ids=selection)
    _write_sidecar_config(cfg["out"], "predict", cfg)
    print(f"wrote {len(selection)} density rows to {cfg['out']}")
    return EXIT_OK


BENCH_DEFAULTS = {
    "data": None,
    "schema": None,
    "seeds": 10,
    "seed": 0,
    "hidden": "synthetic",
    "learning_rate": 1e-3,
    "batch_size": 256,
    "n_tau": 100,
    "max_epochs": 3000,
    "patience": 200,
    "optimizer": "adam",
    "split": "0.4,0.1,0.5",
    "sel_tau": 100,
    "grid_size": 500,
    "out": None,
}


def _bench_seed_worker(payload):
    """Train and score every benchmark row for one seed (one process).

    The umal row warm-starts from this seed's independent_ald row (trained
    just before it in the table order): the independent objective places
    mu(x, tau) on the conditional quantiles, and the mixture objective then
    sharpens the scales.  Trained from a cold Glorot start instead, the
    umal mixture tends to collapse onto one broad component.
    """
    (data_path, schema, fractions, seed, widths, tc_dict, pc_dict) = payload
    pc = PredictConfig.from_dict(pc_dict)
    results = []
    donor_weights = {}
    for label, head, m in BENCH_ROWS:
        tc = TrainConfig(**{**tc_dict, "seed": seed})
        started = time.perf_counter()
        model, log, split, dataset = _train_one(
            data_path, schema, fractions, seed, head, m, widths, tc,
            init_weights=donor_weights.get("independent_ald") if head == "umal" else None,
        )
        if head == "independent_ald":
            donor_weights[head] = model.copy_weights()
        total, mean = test_loglik(model, dataset, split, pc)
        results.append(
            {
                "model": label,
                "seed": seed,
                "total_loglik": total,
                "mean_loglik": mean,
                "epochs": len(log),
                "seconds": round(time.perf_counter() - started, 3),
            }
        )
        print(
            f"[bench] seed {seed} {label}: total {total:.2f} "
            f"({len(log)} epochs, {results[-1]['seconds']:.1f}s)",
            flush=True,
        )
    return results


def _cmd_bench(args):
    cfg = _merge_config(BENCH_DEFAULTS, args)
    _require(cfg, "data", "out")
    _announce("bench", cfg)
    header, _ = read_csv_rows(cfg["data"])
    schema = _resolve_schema(cfg, header)
    fractions = _parse_fractions(cfg["split"])
    widths = _parse_widths(cfg["hidden"])
    tc_dict = {
        "learning_rate": float(cfg["learning_rate"]),
        "batch_size": int(cfg["batch_size"]),
        "n_tau": int(cfg["n_tau"]),
        "max_epochs": int(cfg["max_epochs"]),
        "patience": int(cfg["patience"]),
        "optimizer": cfg["optimizer"],
    }
    pc_dict = _predict_config(cfg).to_dict()
    seeds = [int(cfg["seed"]) + i for i in range(int(cfg["seeds"]))]
    payloads = [
        (cfg["data"], schema, fractions, seed, widths, tc_dict, pc_dict)
        for seed in seeds
    ]

    workers = int(os.environ.get("UMAL_THREADS", "1") or "1")
    if workers > 1 and len(payloads) > 1:
        import multiprocessing

        with multiprocessing.get_context("fork").Pool(min(workers, len(payloads))) as pool:
            per_seed = pool.map(_bench_seed_worker, payloads)
    else:
        per_seed = [_bench_seed_worker(p) for p in payloads]
    runs = [row for seed_rows in per_seed for row in seed_rows]

    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "bench_runs.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("model,seed,total_loglik,mean_loglik,epochs,seconds\n")
        for row in runs:
            fh.write(
                f"{row['model']},{row['seed']},{row['total_loglik']!r},"
                f"{row['mean_loglik']!r},{row['epochs']},{row['seconds']}\n"
            )

    table = []
    for label, _, _ in BENCH_ROWS:
        totals = np.array([r["total_loglik"] for r in runs if r["model"] == label])
        std = float(np.std(totals, ddof=1)) if totals.size > 1 else 0.0
        table.append((label, float(np.mean(totals)), std))
    with open(outdir / "bench_table.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("model,mean_total_loglik,std_total_loglik\n")
        for label, mean, std in table:
            fh.write(f"{label},{mean!r},{std!r}\n")
    lines = [f"{'model':<18} {'mean total loglik':>18} {'std':>10}"]
    for label, mean, std in table:
        lines.append(f"{label:<18} {mean:>18.2f} {std:>10.2f}")
    text = "\n".join(lines) + "\n"
    with open(outdir / "bench_table.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    _write_run_config(outdir, "bench", cfg)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly and dispatch

def _add_common(sub):
    sub.add_argument("--config", help="JSON config file; flags override its keys")


def build_parser():
    parser = _Parser(prog="umal", description=__doc__)
    subs = parser.add_subparsers(dest="command")

    p = subs.add_parser("synth-gen", help="write the synthetic benchmark CSV")
    _add_common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_synth_gen)

    p = subs.add_parser("train", help="train one model head on a CSV dataset")
    _add_common(p)
    p.add_argument("--data", "--dataset", dest="data")
    p.add_argument("--schema", help="JSON schema file assigning column roles")
    p.add_argument("--head", choices=HEAD_KINDS)
    p.add_argument("--hidden", help="comma widths or preset (synthetic, rpf)")
    p.add_argument("--m", type=int, help="mixture components for mdn heads")
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--n-tau", dest="n_tau", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--seed", type=int)
    p.add_argument("--split", help="train,val,test fractions")
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument(
        "--init-from", dest="init_from",
        help="model.json to warm-start from (must match layer dimensions)",
    )
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("eval", help="score a trained model on a test split")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--data", "--dataset", dest="data")
    p.add_argument("--schema")
    p.add_argument("--split")
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sel-tau", dest="sel_tau", type=int, help="inference tau count")
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("predict", help="export density grids for input rows")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--data", "--dataset", dest="data")
    p.add_argument("--rows", help='"all", "a:b", or comma-separated ids')
    p.add_argument("--sel-tau", dest="sel_tau", type=int)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=_cmd_predict)

    p = subs.add_parser("bench", help="train and score the full model table")
    _add_common(p)
    p.add_argument("--data", "--dataset", dest="data")
    p.add_argument("--schema")
    p.add_argument("--seeds", type=int, help="number of seeds (base..base+k-1)")
    p.add_argument("--seed", type=int, help="base seed; also drives each split")
    p.add_argument("--hidden")
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--n-tau", dest="n_tau", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--split")
    p.add_argument("--sel-tau", dest="sel_tau", type=int)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IngestionError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, EvaluationError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except FileNotFoundError as exc:
        print(f"i/o error: missing file {exc.filename}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
