"""Classification accuracy, explanation ranking quality, and report
assembly for whole dataset splits.

The explanation metric ranks every cell of a D x n score map against a
boolean ground-truth mask and takes the average precision: the mean,
over positive cells, of the precision at that cell's rank.  No
interpolation.  Equal scores rank in stable row-major cell order, which
pins the metric down to a single deterministic value.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .cam import compute_cam, compute_ccam, compute_dcam
from .networks import Model, predict_label
from .synth import LabeledDataset

__all__ = [
    "ExplanationReport",
    "MetricsError",
    "PrCurve",
    "broadcast_univariate",
    "classification_accuracy",
    "dr_acc",
    "explanation_report",
    "export_pr_curve_csv",
    "global_explanation_stats",
    "pr_curve",
]


class MetricsError(ValueError):
    pass


def _ranked_hits(scores, mask) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if scores.shape != mask.shape:
        raise MetricsError(f"scores shape {scores.shape} != mask shape {mask.shape}")
    flat_scores = scores.ravel()
    flat_mask = mask.ravel()
    if not flat_mask.any():
        raise MetricsError("mask has no positive cells")
    if np.isnan(flat_scores).any():
        raise MetricsError("scores contain NaN")
    order = np.argsort(-flat_scores, kind="stable")
    return flat_mask[order]


def dr_acc(scores, mask) -> float:
    """Average precision of the score ranking against the mask."""
    hits = _ranked_hits(scores, mask)
    ranks = np.flatnonzero(hits) + 1
    tp = np.arange(1, len(ranks) + 1)
    return float((tp / ranks).mean())


@dataclass(frozen=True)
class PrCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    average_precision: float


def pr_curve(scores, mask) -> PrCurve:
    """Precision/recall at every distinct score threshold, descending."""
    hits = _ranked_hits(scores, mask)
    flat = np.asarray(scores, dtype=np.float64).ravel()
    ordered = np.sort(flat)[::-1]
    # last index of each distinct threshold's tie group
    boundary = np.flatnonzero(np.diff(ordered) != 0)
    cuts = np.append(boundary, len(ordered) - 1)
    cum = np.cumsum(hits)
    total = int(cum[-1])
    precision = cum[cuts] / (cuts + 1)
    recall = cum[cuts] / total
    return PrCurve(
        thresholds=ordered[cuts],
        precision=precision,
        recall=recall,
        average_precision=dr_acc(scores, mask),
    )


def export_pr_curve_csv(curve: PrCurve, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,precision,recall\n")
        for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
            fh.write(f"{t!r},{p!r},{r!r}\n")


def broadcast_univariate(values: np.ndarray, d: int) -> np.ndarray:
    """Tile a length-n explanation to (d, n) for mask scoring."""
    values = np.asarray(values)
    if values.ndim != 1:
        raise MetricsError(f"expected a 1-d map, got shape {values.shape}")
    return np.broadcast_to(values, (d, values.shape[0])).copy()


def classification_accuracy(model: Model, instances) -> float:
    instances = list(instances)
    if not instances:
        raise MetricsError("empty evaluation split")
    correct = sum(1 for s in instances if predict_label(model, s) == s.class_label)
    return correct / len(instances)


def global_explanation_stats(maps, segments=None) -> dict:
    """Aggregate per-dimension activation statistics across instances.

    ``maps`` holds (D, n) arrays (or objects with a ``dcam`` field).
    Returns quartiles of each dimension's per-instance maximum, plus the
    mean activation per (dimension, segment) when ``segments`` is given
    as (name, start, end) triples.
    """
    arrays = [np.asarray(getattr(m, "dcam", m), dtype=np.float64) for m in maps]
    if not arrays:
        raise MetricsError("need at least one explanation map")
    d = arrays[0].shape[0]
    if any(a.ndim != 2 or a.shape[0] != d for a in arrays):
        raise MetricsError("explanation maps disagree on dimension count")
    maxima = np.stack([a.max(axis=1) for a in arrays])  # instances x D
    quartiles = np.percentile(maxima, [0, 25, 50, 75, 100], axis=0)
    out = {
        "instances": len(arrays),
        "per_dimension_max": {
            "min": quartiles[0].tolist(),
            "q1": quartiles[1].tolist(),
            "median": quartiles[2].tolist(),
            "q3": quartiles[3].tolist(),
            "max": quartiles[4].tolist(),
        },
    }
    if segments is not None:
        seg_means = {}
        for name, start, end in segments:
            if not (0 <= start < end):
                raise MetricsError(f"segment {name!r} has invalid bounds ({start}, {end})")
            seg_means[str(name)] = np.mean(
                [a[:, start:end].mean(axis=1) for a in arrays], axis=0
            ).tolist()
        out["per_segment_mean"] = seg_means
    return out


@dataclass
class ExplanationReport:
    method: str
    c_acc: float
    per_instance: list[dict]
    scored_instances: int
    mean_dr_acc: float | None
    random_baseline: float | None
    ng_ratio_mean: float | None = None
    ng_ratio_min: float | None = None
    ng_ratio_max: float | None = None

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _univariate_cam(model: Model, instance, class_id) -> np.ndarray:
    """Single-series activation map, collapsing grid rows when present."""
    values = compute_cam(model, instance, class_id).values
    return values if values.ndim == 1 else values.mean(axis=0)


def explanation_report(
    model: Model,
    dataset: LabeledDataset,
    method: str,
    k: int = 100,
    seed: int = 0,
    workers: int = 1,
    target_class: int = 1,
    require_correct: bool = True,
) -> ExplanationReport:
    """Score one explanation method over a dataset's test split.

    C-acc covers every test instance.  Ranking quality is computed on
    target-class instances (those carrying ground-truth masks), by
    default only the correctly classified ones.  Each scored instance
    uses permutation seed ``seed + position`` so samples differ across
    instances while the whole report stays reproducible.
    """
    if method not in ("cam", "ccam", "dcam"):
        raise MetricsError(f"unknown method {method!r}")
    test = dataset.test_set()
    if not test:
        raise MetricsError("dataset has no test split")
    c_acc = classification_accuracy(model, test)

    per_instance = []
    dr_values = []
    prevalences = []
    ng_ratios = []
    for pos, inst in enumerate(test):
        if inst.class_label != target_class:
            continue
        if inst.mask is None or not inst.mask.any():
            raise MetricsError(f"test instance {pos} lacks a ground-truth mask")
        predicted = predict_label(model, inst)
        entry = {
            "test_position": pos,
            "label": inst.class_label,
            "predicted": predicted,
            "prevalence": float(inst.mask.mean()),
            "dr_acc": None,
            "ng_ratio": None,
        }
        if predicted == target_class or not require_correct:
            if method == "dcam":
                result = compute_dcam(
                    model, inst, target_class, k=k, seed=seed + pos, workers=workers
                )
                score_map = result.dcam
                entry["ng_ratio"] = result.ng_ratio
                ng_ratios.append(result.ng_ratio)
            elif method == "ccam":
                score_map = compute_ccam(model, inst, target_class).values
            else:
                score_map = broadcast_univariate(
                    _univariate_cam(model, inst, target_class), inst.dimensions
                )
            entry["dr_acc"] = dr_acc(score_map, inst.mask)
            dr_values.append(entry["dr_acc"])
            prevalences.append(entry["prevalence"])
        per_instance.append(entry)

    report = ExplanationReport(
        method=method,
        c_acc=c_acc,
        per_instance=per_instance,
        scored_instances=len(dr_values),
        mean_dr_acc=float(np.mean(dr_values)) if dr_values else None,
        random_baseline=float(np.mean(prevalences)) if prevalences else None,
    )
    if ng_ratios:
        report.ng_ratio_mean = float(np.mean(ng_ratios))
        report.ng_ratio_min = float(np.min(ng_ratios))
        report.ng_ratio_max = float(np.max(ng_ratios))
    return report
