"""Reverse-mode automatic differentiation over dense numpy arrays.

The engine is deliberately small: a ``Tensor`` wraps a numpy array, a
``Graph`` tapes operations eagerly while it is the active context, and
``backward`` replays the tape once, accumulating gradients by node id.
Only the operations needed by the classifier stack are provided.

Storage is float32 by default.  ``set_default_dtype(np.float64)`` switches
new tensors to float64, which finite-difference gradient checks rely on.
Reductions always accumulate in float64 before casting back, so summary
statistics stay stable even in float32 mode.
"""

from __future__ import annotations

import threading

import numpy as np
from numpy.lib.stride_tricks import as_strided

__all__ = [
    "ContractError",
    "Graph",
    "ShapeError",
    "Tensor",
    "add",
    "backward",
    "batchnorm",
    "conv2d_rowwise",
    "default_dtype",
    "forward_op",
    "global_avg_pool",
    "matmul",
    "mean",
    "mul",
    "relu",
    "reshape",
    "set_default_dtype",
    "softmax_cross_entropy",
    "variance",
]


class ShapeError(ValueError):
    """Operation inputs have incompatible shapes."""


class ContractError(ValueError):
    """An operation precondition was violated."""


_state = threading.local()


def _graph_stack() -> list:
    stack = getattr(_state, "graphs", None)
    if stack is None:
        stack = []
        _state.graphs = stack
    return stack


def _active_graph():
    stack = _graph_stack()
    return stack[-1] if stack else None


_DTYPE = threading.local()


def set_default_dtype(dtype) -> None:
    """Set the storage dtype for tensors created afterwards.

    Only float32 and float64 are supported.
    """
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported default dtype {dtype}")
    _DTYPE.value = dtype


def default_dtype() -> np.dtype:
    return getattr(_DTYPE, "value", np.dtype(np.float32))


class Tensor:
    """A dense array plus a requires_grad flag.

    Tensors are plain value holders; the taping state lives in the active
    ``Graph``.  The same leaf tensor may therefore participate in many
    graphs over its lifetime (one per training step).
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else default_dtype())
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("op", "parent_ids", "requires_grad", "grad_fn")

    def __init__(self, op, parent_ids, requires_grad, grad_fn):
        self.op = op
        self.parent_ids = parent_ids
        self.requires_grad = requires_grad
        self.grad_fn = grad_fn


class Graph:
    """Eager tape.  Use as a context manager around the forward pass.

    While active, every op that sees at least one grad-requiring input
    records a node.  Outside any graph the ops are plain numpy functions,
    which keeps inference cheap and thread safe.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._tensor_ids: dict[int, int] = {}
        self._id_to_tensor: dict[int, Tensor] = {}

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _graph_stack()
        if not stack or stack[-1] is not self:
            raise ContractError("graph context exited out of order")
        stack.pop()

    def _ensure_leaf(self, t: Tensor) -> int:
        nid = self._tensor_ids.get(id(t))
        if nid is None:
            nid = len(self._nodes)
            self._nodes.append(_Node("leaf", (), t.requires_grad, None))
            self._tensor_ids[id(t)] = nid
            self._id_to_tensor[nid] = t
        return nid

    def _record(self, op, out: Tensor, parents, grad_fn) -> None:
        parent_ids = tuple(self._ensure_leaf(p) for p in parents)
        nid = len(self._nodes)
        self._nodes.append(_Node(op, parent_ids, out.requires_grad, grad_fn))
        self._tensor_ids[id(out)] = nid
        self._id_to_tensor[nid] = out

    def node_id(self, t: Tensor) -> int:
        nid = self._tensor_ids.get(id(t))
        if nid is None:
            raise ContractError("tensor was not recorded in this graph")
        return nid


def _maybe_record(op, out: Tensor, parents, grad_fn_builder) -> Tensor:
    graph = _active_graph()
    if graph is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        graph._record(op, out, parents, grad_fn_builder())
    return out


def backward(graph: Graph, loss: Tensor) -> dict[int, np.ndarray]:
    """Walk the tape once and return gradients keyed by node id.

    The loss must be a scalar recorded in ``graph``.  Every grad-requiring
    leaf gets an entry, zero-filled when the loss does not depend on it.
    """
    loss_id = graph.node_id(loss)
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {loss_id: np.ones_like(loss.data)}
    for nid in range(loss_id, -1, -1):
        node = graph._nodes[nid]
        g = grads.get(nid)
        if g is None or node.grad_fn is None:
            continue
        parent_grads = node.grad_fn(g)
        for pid, pg in zip(node.parent_ids, parent_grads):
            if pg is None or not graph._nodes[pid].requires_grad:
                continue
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    for nid, node in enumerate(graph._nodes):
        if node.op == "leaf" and node.requires_grad and nid not in grads:
            grads[nid] = np.zeros_like(graph._id_to_tensor[nid].data)
    return grads


def grad_for(graph: Graph, grads: dict[int, np.ndarray], t: Tensor) -> np.ndarray:
    """Look up the gradient of a tensor in a backward result."""
    return grads[graph.node_id(t)]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap(arr: np.ndarray) -> Tensor:
    """Wrap an op result without casting, preserving the computed dtype."""
    arr = np.asarray(arr)
    return Tensor(arr, dtype=arr.dtype)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _wrap(a.data + b.data)

    def build():
        ash, bsh = a.data.shape, b.data.shape
        return lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh))

    return _maybe_record("add", out, (a, b), build)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _wrap(a.data * b.data)

    def build():
        ad, bd = a.data, b.data
        return lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))

    return _maybe_record("mul", out, (a, b), build)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.data.shape} vs {b.data.shape}")
    out = _wrap(a.data @ b.data)

    def build():
        ad, bd = a.data, b.data
        return lambda g: (g @ bd.T, ad.T @ g)

    return _maybe_record("matmul", out, (a, b), build)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = _wrap(np.maximum(x.data, 0))

    def build():
        # Subgradient at exactly zero is taken as zero.
        positive = x.data > 0
        return lambda g: (g * positive,)

    return _maybe_record("relu", out, (x,), build)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        out = _wrap(x.data.reshape(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.data.shape} to {shape}") from exc

    def build():
        orig = x.data.shape
        return lambda g: (g.reshape(orig),)

    return _maybe_record("reshape", out, (x,), build)


def _normalize_axes(axes, ndim) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(sorted(a % ndim for a in axes))
    if len(set(axes)) != len(axes):
        raise ContractError(f"duplicate reduction axes {axes}")
    return axes


def mean(x, axes=None) -> Tensor:
    """Arithmetic mean over ``axes`` (all axes when None).

    Accumulates in float64 regardless of storage dtype.
    """
    x = _as_tensor(x)
    ax = _normalize_axes(axes, x.data.ndim)
    out = _wrap(x.data.mean(axis=ax, dtype=np.float64).astype(x.data.dtype))

    def build():
        shape = x.data.shape
        count = int(np.prod([shape[a] for a in ax])) if ax else 1
        expand = tuple(1 if i in ax else s for i, s in enumerate(shape))

        def fn(g):
            return (np.broadcast_to(g.reshape(expand), shape) / count,)

        return fn

    return _maybe_record("mean", out, (x,), build)


def variance(x, axes=None) -> Tensor:
    """Population variance over ``axes`` (all axes when None)."""
    x = _as_tensor(x)
    ax = _normalize_axes(axes, x.data.ndim)
    out = _wrap(x.data.var(axis=ax, dtype=np.float64).astype(x.data.dtype))

    def build():
        shape = x.data.shape
        count = int(np.prod([shape[a] for a in ax])) if ax else 1
        expand = tuple(1 if i in ax else s for i, s in enumerate(shape))
        mu = x.data.mean(axis=ax, dtype=np.float64, keepdims=True).astype(x.data.dtype)
        centered = x.data - mu

        def fn(g):
            return (np.broadcast_to(g.reshape(expand), shape) * centered * (2.0 / count),)

        return fn

    return _maybe_record("variance", out, (x,), build)


def global_avg_pool(x) -> Tensor:
    """Mean over the trailing two axes of a (B, C, H, W) tensor."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (B, C, H, W), got {x.data.shape}")
    out = _wrap(x.data.mean(axis=(2, 3), dtype=np.float64).astype(x.data.dtype))

    def build():
        b, c, h, w = x.data.shape

        def fn(g):
            return (np.broadcast_to(g[:, :, None, None], (b, c, h, w)) / (h * w),)

        return fn

    return _maybe_record("global_avg_pool", out, (x,), build)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross entropy of row-wise softmax against integer labels.

    ``logits`` is (B, K); ``labels`` is a length-B integer vector.  The
    log-sum-exp is shifted by the row max for stability.
    """
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be (B, K), got {logits.data.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.data.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.data.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractError("labels must be integers")
    k = logits.data.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"label out of range for {k} classes")

    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    b = z.shape[0]
    losses = lse[:, 0] - z[np.arange(b), labels]
    out = _wrap(np.asarray(losses.mean(), dtype=logits.data.dtype))

    def build():
        probs = np.exp(z - lse)

        def fn(g):
            grad = probs.copy()
            grad[np.arange(b), labels] -= 1.0
            grad *= float(g) / b
            return (grad.astype(logits.data.dtype), None)

        return fn

    labels_t = Tensor(labels.astype(np.int64), dtype=np.int64)
    graph = _active_graph()
    if graph is not None and logits.requires_grad:
        out.requires_grad = True
        graph._record("softmax_cross_entropy", out, (logits, labels_t), build())
    return out


def _conv_cols(xp: np.ndarray, width: int) -> np.ndarray:
    """im2col over the trailing axis: (B, C, H, Wp) -> (B*H*Wo, C*width)."""
    b, c, h, wp = xp.shape
    wo = wp - width + 1
    s0, s1, s2, s3 = xp.strides
    patches = as_strided(xp, (b, c, h, wo, width), (s0, s1, s2, s3, s3))
    return np.ascontiguousarray(patches.transpose(0, 2, 3, 1, 4)).reshape(b * h * wo, c * width)


def conv2d_rowwise(x, w, bias=None, padding=None) -> Tensor:
    """Correlate kernels of height 1 along the time axis of every row.

    ``x`` is (B, C, H, W), ``w`` is (F, C, 1, L), ``bias`` is (F,).  Each
    output element mixes all C channels but exactly one row, so rows never
    exchange information.  ``padding`` is a (left, right) pair of zeros
    added along W; the default splits L-1 as (floor((L-1)/2), ceil((L-1)/2))
    which preserves W for every L (asymmetric when L is even).  Stride is
    fixed at 1.  Implemented as im2col plus one matrix product.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4:
        raise ShapeError(f"conv input must be (B, C, H, W), got {x.data.shape}")
    if w.data.ndim != 4 or w.data.shape[2] != 1:
        raise ShapeError(f"conv kernel must be (F, C, 1, L), got {w.data.shape}")
    bsz, c, h, width_in = x.data.shape
    f, wc, _, ell = w.data.shape
    if wc != c:
        raise ShapeError(f"kernel channels {wc} do not match input channels {c}")
    if ell < 1:
        raise ContractError("kernel width must be at least 1")
    if padding is None:
        padding = ((ell - 1) // 2, ell - 1 - (ell - 1) // 2)
    pl, pr = int(padding[0]), int(padding[1])
    if pl < 0 or pr < 0:
        raise ContractError(f"padding must be non-negative, got {padding}")
    if width_in + pl + pr < ell:
        raise ShapeError(f"kernel width {ell} exceeds padded input length {width_in + pl + pr}")

    if bias is not None:
        bias = _as_tensor(bias)
        if bias.data.shape != (f,):
            raise ShapeError(f"bias must be ({f},), got {bias.data.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (0, 0), (pl, pr)))
    wo = width_in + pl + pr - ell + 1
    cols = _conv_cols(xp, ell)
    flat = cols @ w.data.reshape(f, c * ell).T
    out_data = flat.reshape(bsz, h, wo, f).transpose(0, 3, 1, 2)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    out = _wrap(np.ascontiguousarray(out_data))

    def build():
        wd = w.data

        def fn(g):
            # g: (B, F, H, Wo).  Weight grad is one gemm against the saved
            # columns; input grad is a full correlation with the kernel
            # reversed along L, realised as a second im2col gemm.
            gcols = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * h * wo, f)
            gw = (gcols.T @ cols).reshape(f, c, 1, ell).astype(wd.dtype)
            gpad = np.pad(g, ((0, 0), (0, 0), (0, 0), (ell - 1, ell - 1)))
            gc = _conv_cols(gpad, ell)
            wrev = np.ascontiguousarray(wd[:, :, 0, ::-1].transpose(0, 2, 1)).reshape(f * ell, c)
            gxp = (gc @ wrev).reshape(bsz, h, width_in + pl + pr, c).transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gxp[:, :, :, pl:pl + width_in])
            if bias is None:
                return (gx, gw)
            gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(wd.dtype)
            return (gx, gw, gb)

        return fn

    parents = (x, w) if bias is None else (x, w, bias)
    return _maybe_record("conv2d_rowwise", out, parents, build)


def batchnorm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5) -> Tensor:
    """Per-channel batch normalization for (B, C, H, W) tensors.

    Training mode normalizes with batch statistics over (B, H, W) and
    updates the running buffers in place with the given momentum.  The
    batch variance is the population variance.  Inference mode uses the
    frozen running buffers and is a pure affine map.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm input must be (B, C, H, W), got {x.data.shape}")
    c = x.data.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.data.shape != (c,):
            raise ShapeError(f"{name} must be ({c},), got {t.data.shape}")
    rm = running_mean.data if isinstance(running_mean, Tensor) else np.asarray(running_mean)
    rv = running_var.data if isinstance(running_var, Tensor) else np.asarray(running_var)
    if rm.shape != (c,) or rv.shape != (c,):
        raise ShapeError("running buffers must be (C,)")

    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes, dtype=np.float64)
        var = x.data.var(axis=axes, dtype=np.float64)
        rm[...] = (1.0 - momentum) * rm + momentum * mu.astype(rm.dtype)
        rv[...] = (1.0 - momentum) * rv + momentum * var.astype(rv.dtype)
    else:
        mu = rm.astype(np.float64)
        var = rv.astype(np.float64)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]).astype(x.data.dtype)
    out = _wrap(xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None])

    def build():
        n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        istd = inv_std.astype(x.data.dtype)

        def fn(g):
            gb = g.sum(axis=axes, dtype=np.float64).astype(x.data.dtype)
            gg = (g * xhat).sum(axis=axes, dtype=np.float64).astype(x.data.dtype)
            gxhat = g * gamma.data[None, :, None, None]
            if not training:
                gx = gxhat * istd[None, :, None, None]
                return (gx, gg, gb)
            # Batch statistics depend on x, so fold their contributions in.
            sum_gxhat = gxhat.sum(axis=axes, dtype=np.float64).astype(x.data.dtype)
            sum_gxhat_xhat = (gxhat * xhat).sum(axis=axes, dtype=np.float64).astype(x.data.dtype)
            gx = (istd[None, :, None, None] / n) * (
                n * gxhat
                - sum_gxhat[None, :, None, None]
                - xhat * sum_gxhat_xhat[None, :, None, None]
            )
            return (gx.astype(x.data.dtype), gg, gb)

        return fn

    return _maybe_record("batchnorm", out, (x, gamma, beta), build)


_OPS = {
    "add": add,
    "mul": mul,
    "matmul": matmul,
    "relu": relu,
    "reshape": reshape,
    "mean": mean,
    "variance": variance,
    "global_avg_pool": global_avg_pool,
    "softmax_cross_entropy": softmax_cross_entropy,
    "conv2d_rowwise": conv2d_rowwise,
    "batchnorm": batchnorm,
}


def forward_op(op: str, inputs, **attrs) -> Tensor:
    """Dispatch an op by name.  Unknown names are contract violations."""
    fn = _OPS.get(op)
    if fn is None:
        raise ContractError(f"unknown op {op!r}")
    return fn(*inputs, **attrs)
