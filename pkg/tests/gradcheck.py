"""Central finite-difference gradient oracle.

Kept free of any knowledge of the autograd internals: it perturbs raw
numpy arrays and re-runs a forward closure, so it independently checks
whatever backward() claims.
"""

import numpy as np

from dimcam.autograd import Graph, Tensor, backward, grad_for, mean, mul


def finite_difference(scalar_fn, array, step=1e-3):
    """Central differences of scalar_fn with respect to array, in place."""
    grad = np.zeros_like(array, dtype=np.float64)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + step
        fp = scalar_fn()
        array[idx] = orig - step
        fm = scalar_fn()
        array[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * step)
    return grad


def normalized_max_error(analytic, fd):
    """Max absolute difference scaled by max(1, largest gradient entry)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    scale = max(1.0, np.abs(fd).max(), np.abs(analytic).max())
    return float(np.abs(analytic - fd).max() / scale)


def check_op_gradients(fn, tensors, step=1e-3, seed=0):
    """Compare backward() against finite differences for one op closure.

    fn maps the given Tensors to an output Tensor.  A fixed random
    cogradient turns the output into a scalar so every output element
    constrains the check.  Returns the worst normalized error over all
    grad-requiring inputs.
    """
    rng = np.random.default_rng(seed)
    probe = fn(*tensors)
    if probe.data.size == 1:
        cograd = None
    else:
        cograd = Tensor(rng.standard_normal(probe.data.shape), dtype=np.float64)

    def loss_value():
        out = fn(*tensors)
        if cograd is None:
            return float(out.data.reshape(()))
        return float((out.data.astype(np.float64) * cograd.data).mean())

    with Graph() as graph:
        out = fn(*tensors)
        loss = out if cograd is None else mean(mul(out, cograd))
        grads = backward(graph, loss)

    worst = 0.0
    for t in tensors:
        if not t.requires_grad:
            continue
        fd = finite_difference(loss_value, t.data, step=step)
        worst = max(worst, normalized_max_error(grad_for(graph, grads, t), fd))
    return worst


DIFFERENTIABLE_OPS = [
    "add",
    "mul",
    "matmul",
    "relu",
    "reshape",
    "mean",
    "variance",
    "global_avg_pool",
    "softmax_cross_entropy",
    "conv2d_rowwise",
    "batchnorm",
]


def random_op_case(op, rng):
    """Build (fn, tensors) with randomized float64 shapes for one op."""
    from dimcam import autograd

    def t(shape, scale=1.0):
        return Tensor(scale * rng.standard_normal(shape), requires_grad=True, dtype=np.float64)

    if op in ("add", "mul"):
        m, n = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        b_shape = (m, n) if rng.random() < 0.5 else (1, n)
        fn = autograd.add if op == "add" else autograd.mul
        return fn, [t((m, n)), t(b_shape)]
    if op == "matmul":
        m, k, n = (int(rng.integers(1, 6)) for _ in range(3))
        return autograd.matmul, [t((m, k)), t((k, n))]
    if op == "relu":
        shape = tuple(int(rng.integers(1, 5)) for _ in range(int(rng.integers(1, 4))))
        x = rng.standard_normal(shape)
        # keep samples away from the kink so finite differences are valid
        x = x + 0.25 * np.sign(x)
        x[x == 0] = 0.3
        return autograd.relu, [Tensor(x, requires_grad=True, dtype=np.float64)]
    if op == "reshape":
        m, n = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        return (lambda x: autograd.reshape(x, (m * n,))), [t((m, n))]
    if op in ("mean", "variance"):
        ndim = int(rng.integers(1, 4))
        shape = tuple(int(rng.integers(2, 5)) for _ in range(ndim))
        axes = tuple(i for i in range(ndim) if rng.random() < 0.5) or None
        base = autograd.mean if op == "mean" else autograd.variance
        return (lambda x: base(x, axes=axes)), [t(shape)]
    if op == "global_avg_pool":
        shape = (
            int(rng.integers(1, 4)),
            int(rng.integers(1, 4)),
            int(rng.integers(1, 4)),
            int(rng.integers(1, 6)),
        )
        return autograd.global_avg_pool, [t(shape)]
    if op == "softmax_cross_entropy":
        b, k = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        labels = rng.integers(0, k, size=b)
        return (lambda logits: autograd.softmax_cross_entropy(logits, labels)), [t((b, k))]
    if op == "conv2d_rowwise":
        bsz, c, h = (int(rng.integers(1, 4)) for _ in range(3))
        f = int(rng.integers(1, 4))
        ell = int(rng.integers(1, 5))
        w = int(rng.integers(ell, ell + 8))
        args = [t((bsz, c, h, w)), t((f, c, 1, ell))]
        if rng.random() < 0.5:
            args.append(t((f,)))
        return autograd.conv2d_rowwise, args
    if op == "batchnorm":
        c = int(rng.integers(1, 4))
        shape = (4, c, int(rng.integers(1, 3)), int(rng.integers(2, 6)))
        training = bool(rng.random() < 0.5)
        rm = rng.standard_normal(c)
        rv = rng.uniform(0.5, 2.0, c)

        def fn(x, gamma, beta):
            return autograd.batchnorm(x, gamma, beta, rm.copy(), rv.copy(), training=training)

        return fn, [t(shape), t((c,), scale=0.5), t((c,))]
    raise ValueError(f"no case generator for op {op!r}")
