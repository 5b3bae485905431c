"""Command-line pipeline: generate data, train, explain, evaluate, bench.

Every command resolves its parameters from built-in defaults, then an
optional JSON config file (``--config``), then explicit flags, in that
order of increasing precedence.  The resolved parameter set is written
as JSON next to the command's outputs so any run can be replayed.  Logs
go to stderr; files hold the data.  On failure every file this run
created is removed and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
import time

import numpy as np

from .autograd import ContractError, ShapeError
from .cam import compute_dcam, export_dcam_csv, export_dcam_json, export_heatmap_ppm
from .metrics import MetricsError, classification_accuracy, explanation_report
from .networks import (
    FAMILIES,
    ArchitectureSpec,
    ModelFormatError,
    build_model,
    load_model,
    save_model,
)
from .series import MultivariateSeries, SeriesFormatError, load_series_csv
from .synth import SynthConfig, SynthError, export_dataset, generate, import_dataset, merge_as_test, split
from .training import TrainConfig, TrainingError, train, write_training_log

_ERRORS = (
    ContractError,
    ShapeError,
    MetricsError,
    ModelFormatError,
    SeriesFormatError,
    SynthError,
    TrainingError,
    OSError,
    json.JSONDecodeError,
    ValueError,
)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


class _Outputs:
    """Tracks files and directories created by this run for rollback."""

    def __init__(self):
        self.paths: list[str] = []

    def claim(self, path: str) -> str:
        self.paths.append(path)
        return path

    def rollback(self) -> None:
        for path in reversed(self.paths):
            if os.path.isdir(path):
                shutil.rmtree(path, ignore_errors=True)
            elif os.path.exists(path):
                os.remove(path)


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < flags; unknown config keys are errors."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as fh:
            loaded = json.load(fh)
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise ValueError(f"unknown config keys {unknown}; expected a subset of {sorted(defaults)}")
        resolved.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _write_resolved(command: str, resolved: dict, path: str, outputs: _Outputs) -> None:
    with open(outputs.claim(path), "w") as fh:
        json.dump({"command": command, **resolved}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in str(text).split(","))
    except ValueError:
        raise ValueError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise ValueError("expected at least one integer")
    return values


def _arch_spec(resolved: dict, class_count: int) -> ArchitectureSpec:
    return ArchitectureSpec(
        family=resolved["arch"],
        conv_filters=_int_list(resolved["filters"]),
        kernel_time_width=_int_list(resolved["widths"]),
        use_batchnorm=bool(resolved["batchnorm"]),
        class_count=class_count,
    )


# ---------------------------------------------------------------- gen-data

_GEN_DEFAULTS = {
    "dataset_type": "type1",
    "dimensions": 10,
    "length": 400,
    "instances_per_class": 60,
    "test_per_class": 20,
    "pattern_length": 64,
    "injected_dimensions": 2,
    "noise_scale": 0.1,
    "train_fraction": 0.8,
    "seed": 0,
}


def _cmd_gen_data(args, outputs: _Outputs) -> None:
    resolved = _resolve(args, _GEN_DEFAULTS)
    if os.path.exists(args.out):
        raise ValueError(f"output directory {args.out!r} already exists")
    cfg = SynthConfig(
        D=resolved["dimensions"],
        n=resolved["length"],
        instances_per_class=resolved["instances_per_class"],
        pattern_length=resolved["pattern_length"],
        injected_dimension_count=resolved["injected_dimensions"],
        noise_scale=resolved["noise_scale"],
        dataset_type=resolved["dataset_type"],
        seed=resolved["seed"],
    )
    data = split(generate(cfg), train_fraction=resolved["train_fraction"], seed=resolved["seed"])
    if resolved["test_per_class"] > 0:
        # fresh pool on a shifted stream so test draws never repeat train draws
        test_cfg = dataclasses.replace(
            cfg, instances_per_class=resolved["test_per_class"], seed=resolved["seed"] + 9973
        )
        data = merge_as_test(data, generate(test_cfg))
    outputs.claim(args.out)
    export_dataset(data, args.out)
    _write_resolved("gen-data", resolved, os.path.join(args.out, "run_config.json"), outputs)

    masked = [s.mask.mean() for s in data.instances if s.mask is not None and s.mask.any()]
    counts = data.class_counts()
    _log(f"dataset: {args.out}")
    _log(f"  type={cfg.dataset_type} D={cfg.D} n={cfg.n}")
    _log(f"  class sizes: {dict(sorted(counts.items()))}")
    _log(
        f"  splits: train={len(data.train_idx)} val={len(data.val_idx)} test={len(data.test_idx)}"
    )
    _log(f"  mask prevalence (positive instances): {float(np.mean(masked)) if masked else 0.0:.4f}")


# ------------------------------------------------------------------- train

_TRAIN_DEFAULTS = {
    "arch": "dcnn",
    "filters": "16,32,32",
    "widths": "3,3,3",
    "batchnorm": True,
    "learning_rate": 1e-3,
    "batch_size": 16,
    "max_epochs": 200,
    "patience": 20,
    "validation_fraction": 0.2,
    "seed": 0,
}


def _cmd_train(args, outputs: _Outputs) -> None:
    resolved = _resolve(args, _TRAIN_DEFAULTS)
    data = import_dataset(args.dataset)
    train_set = data.train_set()
    val_set = data.val_set()
    if not train_set:
        raise TrainingError(f"dataset {args.dataset!r} has an empty train split")
    spec = _arch_spec(resolved, class_count=len(data.class_counts()))
    model = build_model(spec, input_dims=data.config.D, seed=resolved["seed"])
    cfg = TrainConfig(
        learning_rate=resolved["learning_rate"],
        batch_size=resolved["batch_size"],
        max_epochs=resolved["max_epochs"],
        early_stop_patience=resolved["patience"],
        validation_fraction=resolved["validation_fraction"],
        seed=resolved["seed"],
    )
    log_path = outputs.claim(args.out + ".log.csv")
    train(model, train_set, cfg, validation=val_set or None, log_path=log_path)
    save_model(model, outputs.claim(args.out))
    _write_resolved("train", resolved, args.out + ".config.json", outputs)

    train_acc = classification_accuracy(model, train_set)
    _log(f"model: {args.out} ({spec.family}, filters={spec.conv_filters})")
    _log(f"  epochs run: {len(model.training_log)}")
    _log(f"  final C-acc train: {train_acc:.4f}")
    if val_set:
        _log(f"  final C-acc val:   {classification_accuracy(model, val_set):.4f}")


# ----------------------------------------------------------------- explain

_EXPLAIN_DEFAULTS = {
    "class_id": 1,
    "k": 100,
    "seed": 0,
    "workers": 1,
    "only_correct": False,
    "cell": 4,
}


def _cmd_explain(args, outputs: _Outputs) -> None:
    resolved = _resolve(args, _EXPLAIN_DEFAULTS)
    model = load_model(args.model)
    series = load_series_csv(args.instance)
    if series.dimensions == 1:
        _log("warning: single-dimension series; the dimension-wise map is identically zero")
    result = compute_dcam(
        model,
        series,
        resolved["class_id"],
        k=resolved["k"],
        seed=resolved["seed"],
        workers=resolved["workers"],
        only_correct=bool(resolved["only_correct"]),
    )
    prefix = args.out
    export_dcam_csv(result.dcam, outputs.claim(prefix + ".csv"))
    # heatmap colors are min-max normalized for display; CSV/JSON stay raw
    export_heatmap_ppm(result.dcam, outputs.claim(prefix + ".ppm"), cell=resolved["cell"])
    export_dcam_json(
        result,
        outputs.claim(prefix + ".json"),
        class_label=resolved["class_id"],
        k=resolved["k"],
        seed=resolved["seed"],
    )
    _write_resolved("explain", resolved, prefix + ".config.json", outputs)
    hits = int(round(result.ng_ratio * resolved["k"]))
    _log(f"explained {args.instance} -> {prefix}.{{csv,ppm,json}}")
    _log(f"  n_g/k = {result.ng_ratio:.4f} ({hits}/{resolved['k']})")


# -------------------------------------------------------------------- eval

_EVAL_DEFAULTS = {
    "method": "dcam",
    "class_id": 1,
    "k": 100,
    "seed": 0,
    "workers": 1,
    "include_misclassified": False,
}


def _cmd_eval(args, outputs: _Outputs) -> None:
    resolved = _resolve(args, _EVAL_DEFAULTS)
    model = load_model(args.model)
    data = import_dataset(args.dataset)
    report = explanation_report(
        model,
        data,
        resolved["method"],
        k=resolved["k"],
        seed=resolved["seed"],
        workers=resolved["workers"],
        target_class=resolved["class_id"],
        require_correct=not resolved["include_misclassified"],
    )
    report.to_json(outputs.claim(args.out))
    _write_resolved("eval", resolved, args.out + ".config.json", outputs)

    _log(f"report: {args.out} (method={report.method})")
    _log(f"  C-acc on test split: {report.c_acc:.4f}")
    _log(f"  scored instances: {report.scored_instances}")
    if report.mean_dr_acc is not None:
        _log(f"  mean Dr-acc: {report.mean_dr_acc:.4f}")
        _log(f"  random baseline: {report.random_baseline:.4f}")
    else:
        _log("  mean Dr-acc: n/a (no scored instances)")
    if report.ng_ratio_mean is not None:
        _log(
            f"  n_g/k mean={report.ng_ratio_mean:.4f}"
            f" min={report.ng_ratio_min:.4f} max={report.ng_ratio_max:.4f}"
        )


# ------------------------------------------------------------------- bench

_BENCH_DEFAULTS = {
    "dims": "10,20",
    "lengths": "100,200",
    "ks": "16,32",
    "repeats": 5,
    "filters": "16,32,32",
    "widths": "3,3,3",
    "seed": 0,
    "workers": 1,
}


def _bench_combos(dims, lengths, ks):
    """One-axis sweeps from the base point (first entry of each list)."""
    base = (dims[0], lengths[0], ks[0])
    combos = [base]
    combos += [(d, base[1], base[2]) for d in dims[1:]]
    combos += [(base[0], n, base[2]) for n in lengths[1:]]
    combos += [(base[0], base[1], k) for k in ks[1:]]
    seen, unique = set(), []
    for combo in combos:
        if combo not in seen:
            seen.add(combo)
            unique.append(combo)
    return unique


def _cmd_bench(args, outputs: _Outputs) -> None:
    resolved = _resolve(args, _BENCH_DEFAULTS)
    dims = _int_list(resolved["dims"])
    lengths = _int_list(resolved["lengths"])
    ks = _int_list(resolved["ks"])
    if resolved["repeats"] < 1:
        raise ValueError("repeats must be >= 1")
    rng = np.random.default_rng(resolved["seed"])

    combos = []
    for d, n, k in _bench_combos(dims, lengths, ks):
        spec = ArchitectureSpec(
            family="dcnn",
            conv_filters=_int_list(resolved["filters"]),
            kernel_time_width=_int_list(resolved["widths"]),
            class_count=2,
        )
        model = build_model(spec, input_dims=d, seed=resolved["seed"])
        series = MultivariateSeries(rng.standard_normal((d, n)))
        compute_dcam(model, series, 1, k=min(k, 4), seed=0, workers=resolved["workers"])  # warmup
        combos.append((d, n, k, model, series, []))

    # round-robin over combos per repeat so machine-speed drift during the
    # run spreads evenly instead of biasing whichever combo ran first
    for repeat in range(resolved["repeats"]):
        for d, n, k, model, series, times in combos:
            start = time.perf_counter()
            compute_dcam(model, series, 1, k=k, seed=repeat, workers=resolved["workers"])
            times.append(time.perf_counter() - start)
    for d, n, k, _, _, times in combos:
        _log(f"  D={d} n={n} k={k}: median {float(np.median(times)):.4f}s over {len(times)} runs")

    with open(outputs.claim(args.out), "w") as fh:
        fh.write("D,n,k,repeat,seconds\n")
        for d, n, k, _, _, times in combos:
            for repeat, seconds in enumerate(times):
                fh.write(f"{d},{n},{k},{repeat},{seconds!r}\n")
    _write_resolved("bench", resolved, args.out + ".config.json", outputs)
    _log(f"timings: {args.out} ({len(combos) * resolved['repeats']} rows)")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dimcam",
        description="Train convolutional classifiers on multivariate series and "
        "explain them with dimension-wise class activation maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="JSON file with defaults for this command's flags")

    g = sub.add_parser("gen-data", help="generate a synthetic labeled dataset directory")
    add_config(g)
    g.add_argument("--out", required=True, help="dataset directory to create")
    g.add_argument("--dataset-type", choices=["type1", "type2"], dest="dataset_type")
    g.add_argument("--dimensions", type=int)
    g.add_argument("--length", type=int)
    g.add_argument("--instances-per-class", type=int, dest="instances_per_class")
    g.add_argument("--test-per-class", type=int, dest="test_per_class")
    g.add_argument("--pattern-length", type=int, dest="pattern_length")
    g.add_argument("--injected-dimensions", type=int, dest="injected_dimensions")
    g.add_argument("--noise-scale", type=float, dest="noise_scale")
    g.add_argument("--train-fraction", type=float, dest="train_fraction")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="fit a classifier on a dataset directory")
    add_config(t)
    t.add_argument("--dataset", required=True, help="dataset directory from gen-data")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--arch", choices=list(FAMILIES))
    t.add_argument("--filters", help="comma list, e.g. 16,32,32")
    t.add_argument("--widths", help="comma list of kernel time widths")
    t.add_argument("--no-batchnorm", action="store_false", dest="batchnorm", default=None)
    t.add_argument("--learning-rate", type=float, dest="learning_rate")
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--max-epochs", type=int, dest="max_epochs")
    t.add_argument("--patience", type=int)
    t.add_argument("--validation-fraction", type=float, dest="validation_fraction")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("explain", help="dimension-wise map for one instance CSV")
    add_config(e)
    e.add_argument("--model", required=True, help="model file from train")
    e.add_argument("--instance", required=True, help="series CSV to explain")
    e.add_argument("--out", required=True, help="output prefix for .csv/.ppm/.json")
    e.add_argument("--class-id", type=int, dest="class_id")
    e.add_argument("-k", "--k", type=int, dest="k", help="permutations to sample (default 100)")
    e.add_argument("--seed", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--only-correct", action="store_true", dest="only_correct", default=None)
    e.add_argument("--cell", type=int, help="heatmap pixels per cell")
    e.set_defaults(func=_cmd_explain)

    v = sub.add_parser("eval", help="score an explanation method over a dataset's test split")
    add_config(v)
    v.add_argument("--model", required=True)
    v.add_argument("--dataset", required=True)
    v.add_argument("--out", required=True, help="report JSON to write")
    v.add_argument("--method", choices=["cam", "ccam", "dcam"])
    v.add_argument("--class-id", type=int, dest="class_id")
    v.add_argument("-k", "--k", type=int, dest="k")
    v.add_argument("--seed", type=int)
    v.add_argument("--workers", type=int)
    v.add_argument(
        "--include-misclassified",
        action="store_true",
        dest="include_misclassified",
        default=None,
    )
    v.set_defaults(func=_cmd_eval)

    b = sub.add_parser("bench", help="wall-time sweeps of the map computation")
    add_config(b)
    b.add_argument("--out", required=True, help="timing CSV to write")
    b.add_argument("--dims", help="comma list; first value is the base point")
    b.add_argument("--lengths", help="comma list; first value is the base point")
    b.add_argument("--ks", help="comma list; first value is the base point")
    b.add_argument("--repeats", type=int)
    b.add_argument("--filters")
    b.add_argument("--widths")
    b.add_argument("--seed", type=int)
    b.add_argument("--workers", type=int)
    b.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    outputs = _Outputs()
    try:
        args.func(args, outputs)
    except _ERRORS as exc:
        outputs.rollback()
        _log(f"error: {exc}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
