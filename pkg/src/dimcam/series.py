"""Multivariate series, dimension permutations, and the rotation-cube
input encoding.

A series T with D dimensions is expanded into a D x D x n cube where row r
holds the permuted dimensions rotated so that the bottom row (index D-1)
is the permuted order itself and each row above rotates left by one:

    cells[r][c] = S[(c + D - 1 - r) % D],   S = T reordered by the permutation

Every dimension therefore appears in every column position exactly once
across rows, and ``idx`` recovers the unique row holding a given original
dimension at a given position in O(1).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "InputCube",
    "MultivariateSeries",
    "Permutation",
    "SeriesFormatError",
    "build_cube",
    "idx",
    "load_series_csv",
    "mask_sidecar_path",
    "sample_permutations",
    "save_series_csv",
]


class SeriesFormatError(ValueError):
    """Malformed series data, on disk or in memory."""


def _frozen_array(values, dtype=None) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MultivariateSeries:
    """A D x n real-valued series with an optional label and cell mask."""

    values: np.ndarray
    class_label: int | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        values = _frozen_array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise SeriesFormatError(f"series values must be D x n with D,n >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise SeriesFormatError("series values must be finite")
        object.__setattr__(self, "values", values)
        if self.mask is not None:
            mask = _frozen_array(self.mask, dtype=bool)
            if mask.shape != values.shape:
                raise SeriesFormatError(
                    f"mask shape {mask.shape} does not match values shape {values.shape}"
                )
            object.__setattr__(self, "mask", mask)

    @property
    def dimensions(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Permutation:
    """Dimension ordering: pi[r] is the original dimension placed at slot r."""

    pi: np.ndarray

    def __post_init__(self):
        pi = _frozen_array(self.pi, dtype=np.int64)
        if pi.ndim != 1 or pi.size < 1:
            raise SeriesFormatError(f"permutation must be a 1-d array, got shape {pi.shape}")
        d = pi.size
        if not np.array_equal(np.sort(pi), np.arange(d)):
            raise SeriesFormatError(f"not a bijection on 0..{d - 1}: {pi.tolist()}")
        object.__setattr__(self, "pi", pi)

    @classmethod
    def identity(cls, d: int) -> "Permutation":
        return cls(np.arange(d))

    @property
    def size(self) -> int:
        return self.pi.size

    def inverse(self) -> np.ndarray:
        """inv[dim] = slot where original dimension dim sits."""
        inv = np.empty(self.pi.size, dtype=np.int64)
        inv[self.pi] = np.arange(self.pi.size)
        return inv


@dataclass(frozen=True)
class InputCube:
    """Rotation cube: cells has shape (D rows, D slots, n timestamps)."""

    cells: np.ndarray
    source_permutation: Permutation

    def __post_init__(self):
        cells = np.asarray(self.cells)
        d = self.source_permutation.size
        if cells.ndim != 3 or cells.shape[0] != d or cells.shape[1] != d:
            raise SeriesFormatError(f"cube cells must be (D, D, n) with D={d}, got {cells.shape}")


def _rotation_rows(d: int) -> np.ndarray:
    """rows[r, c] = index into the permuted order held at cell (r, c)."""
    r = np.arange(d)[:, None]
    c = np.arange(d)[None, :]
    return (c + d - 1 - r) % d


def build_cube(series: MultivariateSeries, perm: Permutation) -> InputCube:
    """Expand a series into its rotation cube under one permutation."""
    d = series.dimensions
    if perm.size != d:
        raise SeriesFormatError(f"permutation length {perm.size} does not match D={d}")
    permuted = series.values[perm.pi]
    cells = permuted[_rotation_rows(d)]
    return InputCube(cells=cells, source_permutation=perm)


def idx(dim: int, pos: int, perm: Permutation, d: int) -> int:
    """Row of the cube holding original dimension ``dim`` at column ``pos``."""
    if not (0 <= dim < d and 0 <= pos < d):
        raise SeriesFormatError(f"dim={dim}, pos={pos} out of range for D={d}")
    if perm.size != d:
        raise SeriesFormatError(f"permutation length {perm.size} does not match D={d}")
    return int((d - 1 + pos - perm.inverse()[dim]) % d)


def idx_rows(perm: Permutation) -> np.ndarray:
    """Vectorized idx: out[dim, pos] = cube row of (dim, pos)."""
    d = perm.size
    inv = perm.inverse()
    return (d - 1 + np.arange(d)[None, :] - inv[:, None]) % d


def sample_permutations(d: int, k: int, seed: int) -> list[Permutation]:
    """Draw k i.i.d. uniform permutations of 0..d-1, reproducible from seed.

    Uses an explicit Fisher-Yates shuffle so the draw sequence is pinned
    to this implementation rather than to numpy's permutation internals.
    """
    if d < 1:
        raise SeriesFormatError(f"D must be >= 1, got {d}")
    if k < 1:
        raise SeriesFormatError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(k):
        pi = np.arange(d)
        for i in range(d - 1, 0, -1):
            j = int(rng.integers(0, i + 1))
            pi[i], pi[j] = pi[j], pi[i]
        out.append(Permutation(pi))
    return out


def mask_sidecar_path(path: str) -> str:
    """foo.csv -> foo.mask.csv (extension-preserving sidecar naming)."""
    root, ext = os.path.splitext(path)
    return f"{root}.mask{ext or '.csv'}"


def save_series_csv(series: MultivariateSeries, path: str) -> None:
    """One CSV row per dimension; repr-exact float formatting.

    A boolean mask, when present, lands in the ``.mask.csv`` sidecar as
    0/1 cells of the same shape.
    """
    with open(path, "w") as fh:
        for row in series.values:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")
    if series.mask is not None:
        with open(mask_sidecar_path(path), "w") as fh:
            for row in series.mask:
                fh.write(",".join("1" if v else "0" for v in row))
                fh.write("\n")


def _parse_rows(path: str) -> list[list[float]]:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise SeriesFormatError(
                    f"{path}: row {lineno} has {len(cells)} cells, expected {width}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise SeriesFormatError(f"{path}: row {lineno}: non-numeric cell ({exc})") from exc
    if not rows:
        raise SeriesFormatError(f"{path}: no data rows")
    return rows


def load_series_csv(path: str, class_label: int | None = None) -> MultivariateSeries:
    """Load a series CSV, picking up the mask sidecar when it exists."""
    values = np.array(_parse_rows(path), dtype=np.float64)
    mask = None
    side = mask_sidecar_path(path)
    if os.path.exists(side):
        mask_values = np.array(_parse_rows(side))
        if mask_values.shape != values.shape:
            raise SeriesFormatError(
                f"{side}: mask shape {mask_values.shape} does not match series {values.shape}"
            )
        mask = mask_values != 0
    return MultivariateSeries(values=values, class_label=class_label, mask=mask)
