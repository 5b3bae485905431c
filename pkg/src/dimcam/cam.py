"""Activation-map readout and the permutation-averaged dimension-wise map.

The pipeline for the cube families:

  1. sample k dimension permutations from one seed
  2. per permutation: build the cube, run the network, take the class
     activation grid (dense-weight combination of the last conv maps)
  3. re-index each grid into (dimension, position, time) coordinates
  4. average the k tensors elementwise (mbar), tracking how many
     permutations the model classified correctly (n_g)
  5. final map: variance of mbar across positions, scaled by the
     per-timestamp global mean mu

Permutations are processed in fixed-size chunks; chunk partial sums are
merged in sample order, so any worker count reproduces the same bits.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .networks import CUBE_FAMILIES, Model, ModelFormatError, forward_batch, forward_logits, prepare_input
from .series import MultivariateSeries, Permutation, build_cube, idx_rows, sample_permutations

__all__ = [
    "ActivationMap",
    "DcamResult",
    "MTensor",
    "average_maps_exact",
    "compute_cam",
    "compute_ccam",
    "compute_dcam",
    "dcam_from_mbar",
    "export_dcam_csv",
    "export_dcam_json",
    "export_heatmap_ppm",
    "m_transform",
    "mu_series",
]

# permutations evaluated per forward batch; fixed so the arithmetic (and
# therefore the bits) never depends on the worker count
CHUNK = 8


@dataclass(frozen=True)
class ActivationMap:
    """Weighted filter-map combination for one class: (n,) or (D, n)."""

    class_id: int
    values: np.ndarray


@dataclass(frozen=True)
class MTensor:
    """Averaged re-indexed maps: values[d, p, t], shape (D, D, n)."""

    values: np.ndarray
    contributing_permutations: int
    correctly_classified: int

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[0] != v.shape[1]:
            raise ValueError(f"expected (D, D, n), got {v.shape}")
        if not (0 <= self.correctly_classified <= self.contributing_permutations):
            raise ValueError("correctly_classified must lie in [0, k]")


@dataclass(frozen=True)
class DcamResult:
    dcam: np.ndarray
    mbar: MTensor
    mu: np.ndarray
    ng_ratio: float


def _class_column(model: Model, class_label) -> tuple[int, np.ndarray]:
    if "dense.w" not in model.weights:
        raise ModelFormatError("model has no dense readout head")
    if model.class_labels:
        class_idx = model.label_index(class_label)
    else:
        class_idx = int(class_label)
        if not (0 <= class_idx < model.spec.class_count):
            raise ModelFormatError(f"class index {class_idx} out of range")
    return class_idx, model.weights["dense.w"].data[:, class_idx].astype(np.float64)


def compute_cam(model: Model, obj, class_label) -> ActivationMap:
    """Dense-weight combination of the last conv maps, unnormalized.

    Values come out as (n,) for the cnn family and (D, n) for the grid
    families, aligned index-for-index with the input timestamps.
    """
    _, wcol = _class_column(model, class_label)
    _, acts = forward_logits(model, obj)
    values = np.tensordot(wcol, acts.astype(np.float64), axes=([0], [0]))
    return ActivationMap(class_id=class_label, values=values)


def compute_ccam(model: Model, obj, class_label) -> ActivationMap:
    if model.spec.family != "ccnn":
        raise ModelFormatError(f"per-dimension map needs a ccnn model, got {model.spec.family}")
    return compute_cam(model, obj, class_label)


def m_transform(cam_grid: np.ndarray, perm: Permutation) -> np.ndarray:
    """Re-index a (D, n) row-wise grid into (dimension, position, time).

    out[d, p] is the cam row that held dimension d at column position p,
    so it is pure gather with no arithmetic.
    """
    cam_grid = np.asarray(cam_grid)
    d = perm.size
    if cam_grid.ndim != 2 or cam_grid.shape[0] != d:
        raise ValueError(f"cam grid must be ({d}, n), got {cam_grid.shape}")
    return cam_grid[idx_rows(perm)]


def mu_series(mbar) -> np.ndarray:
    """Per-timestamp mean over all D^2 (dimension, position) entries."""
    values = mbar.values if isinstance(mbar, MTensor) else np.asarray(mbar)
    return values.mean(axis=(0, 1))


def dcam_from_mbar(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(dcam, mu) from an averaged (D, D, n) tensor.

    dcam[d, t] is the population variance of values[d, :, t] scaled by
    mu[t]; a dimension whose rows agree across positions scores zero.
    """
    values = np.asarray(values, dtype=np.float64)
    mu = values.mean(axis=(0, 1))
    return values.var(axis=1) * mu[None, :], mu


def average_maps_exact(maps) -> np.ndarray:
    """Order-insensitive elementwise mean of (D, D, n) tensors.

    Sorts the stack per cell before summing, so any relabeling of the
    inputs yields bit-identical output.  Meant for tests and small k;
    the engine's streaming merge is the production path.
    """
    stack = np.stack([np.asarray(m, dtype=np.float64) for m in maps])
    return np.sort(stack, axis=0).sum(axis=0) / stack.shape[0]


def _dcam_chunk(model, series, perms, class_idx, wcol, only_correct):
    """Partial sum over one chunk: (sum of m-tensors, n_g, used count)."""
    d, n = series.dimensions, series.length
    xb = np.stack([prepare_input(model, build_cube(series, p)) for p in perms]).astype(np.float32)
    logits, acts = forward_batch(model, Tensor(xb, dtype=np.float32), training=False)
    preds = np.argmax(logits.data, axis=1)
    part = np.zeros((d, d, n), dtype=np.float64)
    ng = 0
    used = 0
    for i, perm in enumerate(perms):
        correct = preds[i] == class_idx
        ng += int(correct)
        if only_correct and not correct:
            continue
        cam_grid = np.tensordot(wcol, acts.data[i].astype(np.float64), axes=([0], [0]))
        part += cam_grid[idx_rows(perm)]
        used += 1
    return part, ng, used


def compute_dcam(
    model: Model,
    series: MultivariateSeries,
    class_label,
    k: int = 100,
    seed: int = 0,
    workers: int = 1,
    only_correct: bool = False,
) -> DcamResult:
    """Full dimension-wise map for one instance.

    mbar averages over all k sampled permutations by default; n_g counts
    the correctly classified ones (argmax ties resolve to the lowest
    class index).  ``only_correct=True`` restricts the average to those
    n_g permutations instead.  ``workers`` parallelizes over chunks
    without changing any output bit.
    """
    if model.spec.family not in CUBE_FAMILIES:
        raise ModelFormatError(f"dimension-wise map needs a cube-family model, got {model.spec.family}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    d, n = series.dimensions, series.length
    if d != model.input_dims:
        raise ModelFormatError(f"series has {d} dimensions, model expects {model.input_dims}")
    class_idx, wcol = _class_column(model, class_label)

    perms = sample_permutations(d, k, seed)
    chunks = [perms[i : i + CHUNK] for i in range(0, k, CHUNK)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(lambda c: _dcam_chunk(model, series, c, class_idx, wcol, only_correct), chunks)
            )
    else:
        parts = [_dcam_chunk(model, series, c, class_idx, wcol, only_correct) for c in chunks]

    total = np.zeros((d, d, n), dtype=np.float64)
    ng = 0
    used = 0
    for part, chunk_ng, chunk_used in parts:  # sample order, fixed by seed
        total += part
        ng += chunk_ng
        used += chunk_used
    mbar_values = total / used if used else total
    mbar = MTensor(values=mbar_values, contributing_permutations=k, correctly_classified=ng)
    dcam, mu = dcam_from_mbar(mbar_values)
    return DcamResult(dcam=dcam, mbar=mbar, mu=mu, ng_ratio=ng / k)


def export_dcam_csv(values: np.ndarray, path: str) -> None:
    """One CSV row per dimension, repr-exact floats."""
    values = np.atleast_2d(np.asarray(values))
    with open(path, "w") as fh:
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def export_dcam_json(result: DcamResult, path: str, class_label, k: int, seed: int) -> None:
    payload = {
        "class_id": class_label,
        "k": k,
        "seed": seed,
        "n_g": result.mbar.correctly_classified,
        "ng_ratio": result.ng_ratio,
        "dimensions": int(result.dcam.shape[0]),
        "length": int(result.dcam.shape[1]),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# two-stop linear colormap: dark blue for the minimum, warm yellow for the max
_CMAP_LOW = np.array([13, 8, 135], dtype=np.float64)
_CMAP_HIGH = np.array([240, 249, 33], dtype=np.float64)


def export_heatmap_ppm(values: np.ndarray, path: str, cell: int = 4) -> None:
    """Binary PPM heatmap; rows are dimensions, columns timestamps.

    Values are min-max scaled for display only.  ``cell`` scales each
    matrix entry to a cell x cell pixel block so small maps stay visible.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    norm = np.zeros_like(values) if span == 0.0 else (values - lo) / span
    rgb = _CMAP_LOW[None, None, :] + norm[:, :, None] * (_CMAP_HIGH - _CMAP_LOW)[None, None, :]
    pixels = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    pixels = np.repeat(np.repeat(pixels, cell, axis=0), cell, axis=1)
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
