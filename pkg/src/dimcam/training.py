"""Minibatch training: Adam, cross-entropy, early stopping on validation
loss, deterministic from a single seed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Graph, Tensor, backward, grad_for, softmax_cross_entropy
from .networks import Model, forward_batch, prepare_input
from .series import MultivariateSeries

__all__ = ["Adam", "TrainConfig", "TrainingError", "train", "write_training_log"]


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 200
    early_stop_patience: int = 20
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.validation_fraction < 1.0):
            raise TrainingError(
                f"validation_fraction must be in (0, 1), got {self.validation_fraction}"
            )
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise TrainingError("batch_size, max_epochs and early_stop_patience must be >= 1")
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")


class Adam:
    """Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in sorted(grads):
            g = grads[name]
            p = params[name]
            m = self._m.setdefault(name, np.zeros_like(p.data))
            v = self._v.setdefault(name, np.zeros_like(p.data))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            mhat = m / bc1
            vhat = v / bc2
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _label_indices(model: Model, dataset) -> np.ndarray:
    return np.array([model.class_labels.index(s.class_label) for s in dataset], dtype=np.int64)


def _stack_inputs(model: Model, dataset) -> np.ndarray:
    return np.stack([prepare_input(model, s) for s in dataset]).astype(np.float32)


def _evaluate(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int) -> tuple[float, float]:
    """(mean loss, accuracy) in inference mode."""
    total_loss = 0.0
    correct = 0
    for start in range(0, len(x), batch_size):
        xb = Tensor(x[start : start + batch_size])
        yb = y[start : start + batch_size]
        logits, _ = forward_batch(model, xb, training=False)
        loss = softmax_cross_entropy(logits, yb)
        total_loss += float(loss.data) * len(yb)
        correct += int((np.argmax(logits.data, axis=1) == yb).sum())
    return total_loss / len(x), correct / len(x)


def _stratified_split(labels: np.ndarray, holdout_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split; every class keeps at least one train
    instance, and classes with two or more get at least one holdout."""
    train_idx, hold_idx = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(len(members))]
        n_hold = int(round(holdout_fraction * len(members)))
        if len(members) >= 2:
            n_hold = min(max(n_hold, 1), len(members) - 1)
        else:
            n_hold = 0
        hold_idx.extend(members[:n_hold])
        train_idx.extend(members[n_hold:])
    return np.sort(np.array(train_idx, dtype=int)), np.sort(np.array(hold_idx, dtype=int))


def train(
    model: Model,
    dataset: list[MultivariateSeries],
    cfg: TrainConfig,
    validation: list[MultivariateSeries] | None = None,
    epoch_callback=None,
    log_path: str | None = None,
) -> Model:
    """Fit the model in place and return it holding the best-validation
    weights seen during the run.

    When no explicit validation list is given, a stratified slice of
    ``validation_fraction`` is carved out of ``dataset``.  The training
    log records one entry per epoch.  ``epoch_callback(model, entry)``
    fires after each epoch, before early stopping is evaluated.
    """
    if not dataset:
        raise TrainingError("dataset is empty")
    raw_labels = {s.class_label for s in dataset}
    if None in raw_labels:
        raise TrainingError("every training instance needs a class_label")
    labels = sorted(raw_labels)
    if len(labels) < 2:
        raise TrainingError(f"need at least 2 classes, got {labels}")
    if not model.class_labels:
        model.class_labels = [int(l) for l in labels]

    rng = np.random.default_rng(cfg.seed)
    if validation is None:
        y_all = np.array([labels.index(s.class_label) for s in dataset])
        train_pick, val_pick = _stratified_split(y_all, cfg.validation_fraction, rng)
        val_set = [dataset[i] for i in val_pick]
        train_set = [dataset[i] for i in train_pick]
    else:
        train_set, val_set = list(dataset), list(validation)
    if not val_set:
        raise TrainingError("validation split is empty; provide more data or a validation list")

    x_train = _stack_inputs(model, train_set)
    y_train = _label_indices(model, train_set)
    x_val = _stack_inputs(model, val_set)
    y_val = _label_indices(model, val_set)

    trainable = {n: t for n, t in model.weights.items() if t.requires_grad}
    adam = Adam(cfg.learning_rate)
    best_loss = np.inf
    best_weights = None
    patience_left = cfg.early_stop_patience

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x_train))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            pick = order[start : start + cfg.batch_size]
            xb = Tensor(x_train[pick])
            yb = y_train[pick]
            with Graph() as graph:
                logits, _ = forward_batch(model, xb, training=True)
                loss = softmax_cross_entropy(logits, yb)
                grads = backward(graph, loss)
            by_name = {n: grad_for(graph, grads, t) for n, t in trainable.items()}
            adam.step(trainable, by_name)
            epoch_loss += float(loss.data) * len(pick)
        val_loss, val_acc = _evaluate(model, x_val, y_val, cfg.batch_size)
        entry = {
            "epoch": epoch,
            "train_loss": epoch_loss / len(x_train),
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        model.training_log.append(entry)
        if epoch_callback is not None:
            epoch_callback(model, entry)
        if val_loss < best_loss - 1e-12:
            best_loss = val_loss
            best_weights = {n: t.data.copy() for n, t in model.weights.items()}
            patience_left = cfg.early_stop_patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break

    if best_weights is not None:
        for name, data in best_weights.items():
            model.weights[name].data = data
    if log_path:
        write_training_log(model.training_log, log_path)
    return model


def write_training_log(log: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,val_acc\n")
        for e in log:
            fh.write(f"{e['epoch']},{e['train_loss']!r},{e['val_loss']!r},{e['val_acc']!r}\n")
