"""Synthetic two-class benchmarks with ground-truth discriminance masks.

Background signal: per dimension, a sum of 2 to 4 low-frequency sinusoids
with random amplitude and phase plus Gaussian noise.  Injected pattern:
a damped oscillation burst, clearly faster than any background component,
rescaled to the background's own amplitude and blended in with a short
linear crossfade at the window edges.

Two dataset flavors:

  type1  class 0 is pure background; class 1 carries bursts in
         injected_dimension_count random dimensions at independent
         random positions.  Discriminance = which dimensions have bursts.
  type2  both classes carry bursts in random dimensions; class 0 places
         them at mutually non-overlapping positions, class 1 at one
         shared position.  Discriminance = co-location only, so any
         per-dimension marginal looks identical across classes.

Masks mark the injected cells of the discriminant class (class 1); the
whole injection window counts, crossfade samples included.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .series import MultivariateSeries, load_series_csv, mask_sidecar_path, save_series_csv

__all__ = [
    "LabeledDataset",
    "SynthConfig",
    "SynthError",
    "export_dataset",
    "generate",
    "import_dataset",
    "merge_as_test",
    "split",
]


class SynthError(ValueError):
    pass


# pattern shape: damped sine, unit standard deviation before rescaling
PATTERN_PERIOD = 6.0
PATTERN_DECAY = 2.5
PATTERN_GAIN = 3.0
CROSSFADE = 5
BACKGROUND_COMPONENTS = (2, 4)  # inclusive range of sinusoid count
BACKGROUND_CYCLES = (1.0, 5.0)  # cycles over the full series length
BACKGROUND_AMPLITUDE = (0.5, 1.0)


@dataclass(frozen=True)
class SynthConfig:
    D: int = 10
    n: int = 400
    instances_per_class: int = 60
    pattern_length: int = 64
    injected_dimension_count: int = 2
    noise_scale: float = 0.1
    dataset_type: str = "type1"
    seed: int = 0

    def __post_init__(self):
        if self.dataset_type not in ("type1", "type2"):
            raise SynthError(f"dataset_type must be type1 or type2, got {self.dataset_type!r}")
        if self.D < 1 or self.n < 1 or self.instances_per_class < 1:
            raise SynthError("D, n and instances_per_class must be >= 1")
        if not (0 < self.pattern_length < self.n):
            raise SynthError(
                f"pattern_length must lie in (0, n); got {self.pattern_length} with n={self.n}"
            )
        if not (1 <= self.injected_dimension_count <= self.D):
            raise SynthError("injected_dimension_count must lie in [1, D]")
        if self.dataset_type == "type2" and self.injected_dimension_count * self.pattern_length > self.n:
            raise SynthError("type2 needs injected_dimension_count * pattern_length <= n")
        if self.noise_scale < 0:
            raise SynthError("noise_scale must be non-negative")


@dataclass
class LabeledDataset:
    instances: list[MultivariateSeries]
    train_idx: list[int] = field(default_factory=list)
    val_idx: list[int] = field(default_factory=list)
    test_idx: list[int] = field(default_factory=list)
    config: SynthConfig | None = None
    test_config: SynthConfig | None = None

    def __post_init__(self):
        seen: set[int] = set()
        for name in ("train_idx", "val_idx", "test_idx"):
            idx = [int(i) for i in getattr(self, name)]
            setattr(self, name, idx)
            for i in idx:
                if not (0 <= i < len(self.instances)):
                    raise SynthError(f"{name} entry {i} out of range")
                if i in seen:
                    raise SynthError(f"index {i} assigned to more than one split")
                seen.add(i)

    def train_set(self) -> list[MultivariateSeries]:
        return [self.instances[i] for i in self.train_idx]

    def val_set(self) -> list[MultivariateSeries]:
        return [self.instances[i] for i in self.val_idx]

    def test_set(self) -> list[MultivariateSeries]:
        return [self.instances[i] for i in self.test_idx]

    def class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for s in self.instances:
            counts[s.class_label] = counts.get(s.class_label, 0) + 1
        return counts


def _pattern_template(length: int) -> np.ndarray:
    j = np.arange(length, dtype=np.float64)
    burst = np.exp(-PATTERN_DECAY * j / length) * np.sin(2.0 * np.pi * j / PATTERN_PERIOD)
    return burst / burst.std()


def _background(rng, d: int, n: int, noise_scale: float) -> np.ndarray:
    t = np.arange(n, dtype=np.float64) / n
    values = np.empty((d, n), dtype=np.float64)
    for dim in range(d):
        components = int(rng.integers(BACKGROUND_COMPONENTS[0], BACKGROUND_COMPONENTS[1] + 1))
        signal = np.zeros(n, dtype=np.float64)
        for _ in range(components):
            amp = rng.uniform(*BACKGROUND_AMPLITUDE)
            cycles = rng.uniform(*BACKGROUND_CYCLES)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            signal += amp * np.sin(2.0 * np.pi * cycles * t + phase)
        values[dim] = signal + noise_scale * rng.standard_normal(n)
    return values


def _inject(values: np.ndarray, dim: int, start: int, template: np.ndarray) -> None:
    length = len(template)
    window = values[dim, start : start + length]
    scale = PATTERN_GAIN * max(window.std(), 1e-12)
    burst = scale * template
    weight = np.ones(length)
    ramp = min(CROSSFADE, length // 2)
    if ramp > 0:
        weight[:ramp] = np.linspace(0.0, 1.0, ramp)
        weight[-ramp:] = np.linspace(1.0, 0.0, ramp)
    values[dim, start : start + length] = (1.0 - weight) * window + weight * burst


def _non_overlapping_starts(rng, count: int, n: int, length: int) -> np.ndarray:
    """Uniform draw of ``count`` pairwise non-overlapping window starts."""
    free = n - count * length
    offsets = np.sort(rng.integers(0, free + 1, size=count))
    return offsets + np.arange(count) * length


def _injection_plan(rng, cfg: SynthConfig, class_label: int) -> list[tuple[int, int]]:
    """(dimension, window start) pairs for one instance.

    type1: class 0 gets nothing; class 1 gets independent positions.
    type2: class 0 gets pairwise non-overlapping positions, class 1 one
    shared position.
    """
    x = cfg.injected_dimension_count
    high = cfg.n - cfg.pattern_length + 1
    if cfg.dataset_type == "type1":
        if class_label == 0:
            return []
        dims = rng.choice(cfg.D, size=x, replace=False)
        return [(int(d), int(rng.integers(0, high))) for d in dims]
    dims = rng.choice(cfg.D, size=x, replace=False)
    if class_label == 0:
        starts = _non_overlapping_starts(rng, x, cfg.n, cfg.pattern_length)
        return [(int(d), int(s)) for d, s in zip(dims, starts)]
    start = int(rng.integers(0, high))
    return [(int(d), start) for d in dims]


def generate(cfg: SynthConfig) -> LabeledDataset:
    """Build the instance pool; every index starts in the train split."""
    rng = np.random.default_rng(cfg.seed)
    template = _pattern_template(cfg.pattern_length)
    instances: list[MultivariateSeries] = []

    for class_label in (0, 1):
        for _ in range(cfg.instances_per_class):
            values = _background(rng, cfg.D, cfg.n, cfg.noise_scale)
            mask = np.zeros((cfg.D, cfg.n), dtype=bool)
            for dim, start in _injection_plan(rng, cfg, class_label):
                _inject(values, dim, start, template)
                if class_label == 1:
                    mask[dim, start : start + cfg.pattern_length] = True
            instances.append(
                MultivariateSeries(values=values, class_label=class_label, mask=mask)
            )

    return LabeledDataset(instances=instances, train_idx=list(range(len(instances))), config=cfg)


def split(dataset: LabeledDataset, train_fraction: float = 0.8, seed: int = 0) -> LabeledDataset:
    """Stratified train/val split over the non-test instances."""
    if not (0.0 < train_fraction < 1.0):
        raise SynthError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    pool = sorted(set(range(len(dataset.instances))) - set(dataset.test_idx))
    by_class: dict[int, list[int]] = {}
    for i in pool:
        by_class.setdefault(dataset.instances[i].class_label, []).append(i)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for cls in sorted(by_class):
        members = np.array(by_class[cls])
        members = members[rng.permutation(len(members))]
        n_train = int(round(train_fraction * len(members)))
        n_train = min(max(n_train, 1), len(members))
        train_idx.extend(members[:n_train].tolist())
        val_idx.extend(members[n_train:].tolist())
    return LabeledDataset(
        instances=dataset.instances,
        train_idx=sorted(train_idx),
        val_idx=sorted(val_idx),
        test_idx=list(dataset.test_idx),
        config=dataset.config,
        test_config=dataset.test_config,
    )


def merge_as_test(dataset: LabeledDataset, test_pool: LabeledDataset) -> LabeledDataset:
    """Append another pool's instances as this dataset's test split."""
    offset = len(dataset.instances)
    return LabeledDataset(
        instances=list(dataset.instances) + list(test_pool.instances),
        train_idx=list(dataset.train_idx),
        val_idx=list(dataset.val_idx),
        test_idx=[offset + i for i in range(len(test_pool.instances))],
        config=dataset.config,
        test_config=test_pool.config,
    )


def _config_to_dict(cfg: SynthConfig | None):
    return None if cfg is None else asdict(cfg)


def _config_from_dict(d) -> SynthConfig | None:
    return None if d is None else SynthConfig(**d)


def export_dataset(dataset: LabeledDataset, directory: str) -> None:
    """manifest.json plus one CSV (and mask sidecar) per instance."""
    os.makedirs(directory, exist_ok=True)
    names = []
    for i, inst in enumerate(dataset.instances):
        name = f"instance_{i:04d}.csv"
        names.append(name)
        to_save = inst
        if inst.mask is None:
            to_save = MultivariateSeries(
                values=inst.values,
                class_label=inst.class_label,
                mask=np.zeros_like(inst.values, dtype=bool),
            )
        save_series_csv(to_save, os.path.join(directory, name))
    manifest = {
        "format": "dimcam-dataset",
        "version": 1,
        "config": _config_to_dict(dataset.config),
        "test_config": _config_to_dict(dataset.test_config),
        "labels": [int(s.class_label) for s in dataset.instances],
        "splits": {
            "train": dataset.train_idx,
            "val": dataset.val_idx,
            "test": dataset.test_idx,
        },
        "instances": names,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def import_dataset(directory: str) -> LabeledDataset:
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise SynthError(f"{directory}: no manifest.json")
    manifest = json.load(open(manifest_path))
    if manifest.get("format") != "dimcam-dataset":
        raise SynthError(f"{manifest_path}: not a dataset manifest")
    names = manifest["instances"]
    labels = manifest["labels"]
    if len(names) != len(labels):
        raise SynthError(f"{manifest_path}: {len(names)} instances but {len(labels)} labels")
    instances = []
    for name, label in zip(names, labels):
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            raise SynthError(f"{directory}: manifest lists missing file {name}")
        if not os.path.exists(mask_sidecar_path(path)):
            raise SynthError(f"{directory}: missing mask file for {name}")
        instances.append(load_series_csv(path, class_label=int(label)))
    return LabeledDataset(
        instances=instances,
        train_idx=manifest["splits"]["train"],
        val_idx=manifest["splits"]["val"],
        test_idx=manifest["splits"]["test"],
        config=_config_from_dict(manifest.get("config")),
        test_config=_config_from_dict(manifest.get("test_config")),
    )
