"""The four classifier architectures and their forward passes.

Families and input layouts (batch axis first, conv layout B, C, H, W):

  cnn      raw series, one channel per dimension:        (B, D, 1, n)
  ccnn     raw series as a single-channel image:         (B, 1, D, n)
  dcnn     rotation cube, one channel per column slot:   (B, D, D, n)
  dresnet  same input as dcnn, residual blocks

All kernels have height 1, so in the grid families the D cube rows stay
spatially independent while every kernel mixes all channels.  Every
family ends in global average pooling followed by one dense layer, which
is what makes the activation-map readout well defined.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import autograd
from .autograd import Tensor, add, batchnorm, conv2d_rowwise, global_avg_pool, matmul, relu, reshape
from .series import InputCube, MultivariateSeries, Permutation, build_cube

__all__ = [
    "ArchitectureSpec",
    "Model",
    "ModelFormatError",
    "build_model",
    "default_spec",
    "forward_batch",
    "forward_logits",
    "load_model",
    "prepare_input",
    "save_model",
]

FAMILIES = ("cnn", "ccnn", "dcnn", "dresnet")
GRID_FAMILIES = ("ccnn", "dcnn", "dresnet")
CUBE_FAMILIES = ("dcnn", "dresnet")


class ModelFormatError(ValueError):
    """Invalid architecture description or corrupted model file."""


@dataclass(frozen=True)
class ArchitectureSpec:
    """Hyperparameters defining one network.

    For cnn/ccnn/dcnn, conv_filters and kernel_time_width run per layer.
    For dresnet, conv_filters runs per block and kernel_time_width per
    layer inside each block (every block shares the width schedule).
    """

    family: str
    conv_filters: tuple[int, ...]
    kernel_time_width: tuple[int, ...]
    use_batchnorm: bool = True
    class_count: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelFormatError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        object.__setattr__(self, "kernel_time_width", tuple(int(w) for w in self.kernel_time_width))
        if not self.conv_filters or min(self.conv_filters) < 1:
            raise ModelFormatError(f"conv_filters must be positive, got {self.conv_filters}")
        if not self.kernel_time_width or min(self.kernel_time_width) < 1:
            raise ModelFormatError(f"kernel widths must be positive, got {self.kernel_time_width}")
        if self.family != "dresnet" and len(self.conv_filters) != len(self.kernel_time_width):
            raise ModelFormatError(
                f"{self.family}: need one kernel width per layer, got "
                f"{len(self.conv_filters)} filters vs {len(self.kernel_time_width)} widths"
            )
        if self.class_count < 2:
            raise ModelFormatError("class_count must be at least 2")


def default_spec(family: str, class_count: int = 2) -> ArchitectureSpec:
    """Stock configuration per family."""
    if family == "dresnet":
        return ArchitectureSpec(
            family=family,
            conv_filters=(64, 64, 128),
            kernel_time_width=(8, 5, 3),
            class_count=class_count,
        )
    return ArchitectureSpec(
        family=family,
        conv_filters=(64, 128, 256, 256, 256),
        kernel_time_width=(3, 3, 3, 3, 3),
        class_count=class_count,
    )


@dataclass
class Model:
    spec: ArchitectureSpec
    input_dims: int
    weights: dict[str, Tensor]
    class_labels: list[int] = field(default_factory=list)
    training_log: list[dict] = field(default_factory=list)

    def label_index(self, class_label) -> int:
        try:
            return self.class_labels.index(class_label)
        except ValueError:
            raise ModelFormatError(
                f"class {class_label!r} not among model labels {self.class_labels}"
            ) from None


def _in_channels(spec: ArchitectureSpec, d: int) -> int:
    return 1 if spec.family == "ccnn" else d


def _he_uniform(rng, shape, fan_in, dtype):
    limit = float(np.sqrt(6.0 / fan_in))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def _bn_params(weights, prefix, f, dtype):
    weights[f"{prefix}.gamma"] = Tensor(np.ones(f, dtype=dtype), requires_grad=True)
    weights[f"{prefix}.beta"] = Tensor(np.zeros(f, dtype=dtype), requires_grad=True)
    weights[f"{prefix}.running_mean"] = Tensor(np.zeros(f, dtype=dtype))
    weights[f"{prefix}.running_var"] = Tensor(np.ones(f, dtype=dtype))


def build_model(spec: ArchitectureSpec, input_dims: int, seed: int = 0) -> Model:
    """Initialize weights: He-uniform conv/dense, zero biases, unit batchnorm."""
    if input_dims < 1:
        raise ModelFormatError(f"input_dims must be >= 1, got {input_dims}")
    rng = np.random.default_rng(seed)
    dtype = autograd.default_dtype()
    weights: dict[str, Tensor] = {}
    c = _in_channels(spec, input_dims)

    if spec.family == "dresnet":
        for b, f in enumerate(spec.conv_filters):
            for j, ell in enumerate(spec.kernel_time_width):
                cin = c if j == 0 else f
                weights[f"block{b}.conv{j}.w"] = _he_uniform(rng, (f, cin, 1, ell), cin * ell, dtype)
                weights[f"block{b}.conv{j}.b"] = Tensor(np.zeros(f, dtype=dtype), requires_grad=True)
                if spec.use_batchnorm:
                    _bn_params(weights, f"block{b}.bn{j}", f, dtype)
            if c != f:
                weights[f"block{b}.shortcut.w"] = _he_uniform(rng, (f, c, 1, 1), c, dtype)
                weights[f"block{b}.shortcut.b"] = Tensor(np.zeros(f, dtype=dtype), requires_grad=True)
                if spec.use_batchnorm:
                    _bn_params(weights, f"block{b}.shortcut_bn", f, dtype)
            c = f
    else:
        for i, (f, ell) in enumerate(zip(spec.conv_filters, spec.kernel_time_width)):
            if spec.family == "cnn":
                shape = (f, c, ell)  # stored 3-d, reshaped to height-1 kernels on use
            else:
                shape = (f, c, 1, ell)
            weights[f"conv{i}.w"] = _he_uniform(rng, shape, c * ell, dtype)
            weights[f"conv{i}.b"] = Tensor(np.zeros(f, dtype=dtype), requires_grad=True)
            if spec.use_batchnorm:
                _bn_params(weights, f"bn{i}", f, dtype)
            c = f

    weights["dense.w"] = _he_uniform(rng, (c, spec.class_count), c, dtype)
    weights["dense.b"] = Tensor(np.zeros(spec.class_count, dtype=dtype), requires_grad=True)
    return Model(spec=spec, input_dims=input_dims, weights=weights)


def prepare_input(model: Model, obj) -> np.ndarray:
    """Shape one instance into the (C, H, W) layout of the model family.

    Accepts a MultivariateSeries, an InputCube (cube families only), or a
    bare array already shaped (D, n) / (D, D, n) accordingly.  For cube
    families a series is encoded with the identity permutation.
    """
    family = model.spec.family
    d = model.input_dims

    if family in CUBE_FAMILIES:
        if isinstance(obj, MultivariateSeries):
            obj = build_cube(obj, Permutation.identity(obj.dimensions))
        cells = obj.cells if isinstance(obj, InputCube) else np.asarray(obj)
        if cells.shape[:2] != (d, d):
            raise ModelFormatError(f"expected a ({d}, {d}, n) cube, got {cells.shape}")
        # rows x slots x time -> channels (slots) x rows x time
        return np.ascontiguousarray(cells.transpose(1, 0, 2))

    values = obj.values if isinstance(obj, MultivariateSeries) else np.asarray(obj)
    if values.ndim != 2 or values.shape[0] != d:
        raise ModelFormatError(f"expected a ({d}, n) series, got {values.shape}")
    if family == "cnn":
        return values[:, None, :]
    return values[None, :, :]


def _conv_block(weights, prefix, a, use_bn, training, bn_prefix):
    w = weights[f"{prefix}.w"]
    if w.data.ndim == 3:
        f, c, ell = w.data.shape
        w = reshape(w, (f, c, 1, ell))
    a = conv2d_rowwise(a, w, weights[f"{prefix}.b"])
    if use_bn:
        a = batchnorm(
            a,
            weights[f"{bn_prefix}.gamma"],
            weights[f"{bn_prefix}.beta"],
            weights[f"{bn_prefix}.running_mean"],
            weights[f"{bn_prefix}.running_var"],
            training,
        )
    return a


def forward_batch(model: Model, xb: Tensor, training: bool = False) -> tuple[Tensor, Tensor]:
    """Run a (B, C, H, W) batch; returns (logits, last conv activations).

    The returned activations are post-ReLU, i.e. exactly the maps the
    activation-map readout combines.
    """
    spec = model.spec
    weights = model.weights
    a = xb
    if spec.family == "dresnet":
        for b in range(len(spec.conv_filters)):
            identity = a
            for j in range(len(spec.kernel_time_width)):
                a = _conv_block(weights, f"block{b}.conv{j}", a, spec.use_batchnorm, training, f"block{b}.bn{j}")
                if j + 1 < len(spec.kernel_time_width):
                    a = relu(a)
            if f"block{b}.shortcut.w" in weights:
                identity = _conv_block(
                    weights, f"block{b}.shortcut", identity, spec.use_batchnorm, training, f"block{b}.shortcut_bn"
                )
            a = relu(add(a, identity))
    else:
        for i in range(len(spec.conv_filters)):
            a = _conv_block(weights, f"conv{i}", a, spec.use_batchnorm, training, f"bn{i}")
            a = relu(a)
    pooled = global_avg_pool(a)
    logits = add(matmul(pooled, weights["dense.w"]), weights["dense.b"])
    return logits, a


def forward_logits(model: Model, obj) -> tuple[np.ndarray, np.ndarray]:
    """Inference on one instance.

    Returns (logits, activations) as numpy arrays; activations are
    (F, n) for the cnn family and (F, D, n) for the grid families.
    """
    x = prepare_input(model, obj)
    logits, last_a = forward_batch(model, Tensor(x[None], dtype=x.dtype), training=False)
    a = last_a.data[0]
    if model.spec.family == "cnn":
        a = a[:, 0, :]
    return logits.data[0], a


def predict_label(model: Model, obj):
    """Argmax prediction; ties resolve to the lowest class index."""
    logits, _ = forward_logits(model, obj)
    return model.class_labels[int(np.argmax(logits))] if model.class_labels else int(np.argmax(logits))


def _spec_to_dict(spec: ArchitectureSpec) -> dict:
    return {
        "family": spec.family,
        "conv_filters": list(spec.conv_filters),
        "kernel_time_width": list(spec.kernel_time_width),
        "use_batchnorm": spec.use_batchnorm,
        "class_count": spec.class_count,
    }


def _spec_from_dict(d: dict) -> ArchitectureSpec:
    return ArchitectureSpec(
        family=d["family"],
        conv_filters=tuple(d["conv_filters"]),
        kernel_time_width=tuple(d["kernel_time_width"]),
        use_batchnorm=bool(d["use_batchnorm"]),
        class_count=int(d["class_count"]),
    )


def save_model(model: Model, path: str) -> None:
    """Header line (JSON manifest) + little-endian float32 weight blob."""
    names = sorted(model.weights)
    manifest = []
    offset = 0
    chunks = []
    for name in names:
        arr = np.ascontiguousarray(model.weights[name].data.astype("<f4"))
        raw = arr.tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    header = {
        "format": "dimcam-model",
        "version": 1,
        "spec": _spec_to_dict(model.spec),
        "input_dims": model.input_dims,
        "class_labels": model.class_labels,
        "training_log": model.training_log,
        "weights": manifest,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_model(path: str) -> Model:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: unreadable model header ({exc})") from exc
    if header.get("format") != "dimcam-model":
        raise ModelFormatError(f"{path}: not a model file")
    if len(blob) != header["blob_bytes"]:
        raise ModelFormatError(
            f"{path}: blob length {len(blob)} disagrees with manifest {header['blob_bytes']}"
        )
    digest = hashlib.sha256(blob).hexdigest()
    if digest != header["blob_sha256"]:
        raise ModelFormatError(f"{path}: checksum mismatch")
    weights = {}
    for entry in header["weights"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape)
        name = entry["name"]
        trainable = not name.endswith((".running_mean", ".running_var"))
        weights[name] = Tensor(arr.copy(), requires_grad=trainable, dtype=np.float32)
    return Model(
        spec=_spec_from_dict(header["spec"]),
        input_dims=int(header["input_dims"]),
        weights=weights,
        class_labels=list(header["class_labels"]),
        training_log=list(header["training_log"]),
    )
