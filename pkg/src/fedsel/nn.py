"""Small softmax classifier: multinomial logistic regression with an optional tanh hidden layer.

Parameters live in one flat float64 vector so that aggregation and distance
computations can treat every model uniformly. Layout:

    hidden_dim == 0:  W (input_dim x N, row-major), b (N)
    hidden_dim  > 0:  W1 (input_dim x H), b1 (H), W2 (H x N), b2 (N)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedsel import kernels

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    num_classes: int
    hidden_dim: int = 0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.hidden_dim < 0:
            raise ValueError(f"hidden_dim must be >= 0, got {self.hidden_dim}")

    @property
    def num_params(self) -> int:
        d, n, h = self.input_dim, self.num_classes, self.hidden_dim
        if h == 0:
            return d * n + n
        return d * h + h + h * n + n


@dataclass(frozen=True)
class ModelParams:
    arch: Architecture
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != self.arch.num_params:
            raise ValueError(
                f"weight vector has shape {w.shape}, expected ({self.arch.num_params},)"
            )
        if not np.all(np.isfinite(w)):
            raise ValueError("model weights contain NaN or Inf")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def unpack(self) -> list[np.ndarray]:
        """Return read-only views of the weight blocks in layout order."""
        return _unpack(self.arch, self.weights)


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError(
                f"labels length {y.shape} does not match {x.shape[0]} feature rows"
            )
        if y.size and y.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def check_classes(self, num_classes: int) -> None:
        if len(self) and self.labels.max() >= num_classes:
            raise ValueError(
                f"label {int(self.labels.max())} out of range for {num_classes} classes"
            )


@dataclass(frozen=True)
class UnlabeledDataset:
    features: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        object.__setattr__(self, "features", x)

    def __len__(self) -> int:
        return self.features.shape[0]


def _unpack(arch: Architecture, w: np.ndarray) -> list[np.ndarray]:
    d, n, h = arch.input_dim, arch.num_classes, arch.hidden_dim
    if h == 0:
        return [w[: d * n].reshape(d, n), w[d * n :]]
    o1 = d * h
    o2 = o1 + h
    o3 = o2 + h * n
    return [w[:o1].reshape(d, h), w[o1:o2], w[o2:o3].reshape(h, n), w[o3:]]


def init_params(arch: Architecture, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(arch, rng.uniform(-0.05, 0.05, size=arch.num_params))


def zero_params(arch: Architecture) -> ModelParams:
    return ModelParams(arch, np.zeros(arch.num_params))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_width(arch: Architecture, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ValueError(
            f"feature matrix shape {x.shape} incompatible with input_dim={arch.input_dim}"
        )
    return x


def logits(params: ModelParams, features: np.ndarray) -> np.ndarray:
    x = _check_width(params.arch, features)
    blocks = params.unpack()
    if params.arch.hidden_dim == 0:
        w, b = blocks
        return x @ w + b
    w1, b1, w2, b2 = blocks
    return np.tanh(x @ w1 + b1) @ w2 + b2


def forward_probs(params: ModelParams, features: np.ndarray) -> np.ndarray:
    return softmax(logits(params, features))


def _require_nonempty(data) -> None:
    if len(data) == 0:
        raise ValueError("dataset is empty")


def ce_loss(params: ModelParams, data: LabeledDataset) -> float:
    """Mean cross-entropy of the true class, with probabilities floored at 1e-12."""
    _require_nonempty(data)
    data.check_classes(params.arch.num_classes)
    p = forward_probs(params, data.features)
    p_true = p[np.arange(len(data)), data.labels]
    return float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))


def predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. lowest-class tie-break
    return np.argmax(forward_probs(params, features), axis=1)


def accuracy(params: ModelParams, data: LabeledDataset) -> float:
    _require_nonempty(data)
    return float(np.mean(predict(params, data.features) == data.labels))


def ce_gradient(params: ModelParams, data: LabeledDataset) -> np.ndarray:
    """Analytic gradient of the (unclamped) mean cross-entropy w.r.t. the flat weights."""
    _require_nonempty(data)
    return _grad(params.arch, params.weights, data.features, data.labels)


def _grad(arch: Architecture, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    m = x.shape[0]
    blocks = _unpack(arch, w)
    if arch.hidden_dim == 0:
        wm, b = blocks
        delta = softmax(x @ wm + b)
        delta[np.arange(m), y] -= 1.0
        delta /= m
        return np.concatenate([(x.T @ delta).ravel(), delta.sum(axis=0)])
    w1, b1, w2, b2 = blocks
    a = np.tanh(x @ w1 + b1)
    delta = softmax(a @ w2 + b2)
    delta[np.arange(m), y] -= 1.0
    delta /= m
    dh = (delta @ w2.T) * (1.0 - a * a)
    return np.concatenate(
        [(x.T @ dh).ravel(), dh.sum(axis=0), (a.T @ delta).ravel(), delta.sum(axis=0)]
    )


def epoch_orders(n: int, epochs: int, seed: int) -> np.ndarray:
    """One seeded permutation of range(n) per epoch, shape (epochs, n)."""
    rng = np.random.default_rng(seed)
    return np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)


def sgd_train(
    params: ModelParams,
    data: LabeledDataset,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
) -> ModelParams:
    """Plain mini-batch SGD on mean cross-entropy. The input params are not modified.

    Each epoch visits the samples in a fresh seeded permutation; the last batch of
    an epoch may be short.
    """
    _require_nonempty(data)
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    arch = params.arch
    data.check_classes(arch.num_classes)
    if data.features.shape[1] != arch.input_dim:
        raise ValueError(
            f"feature width {data.features.shape[1]} != input_dim {arch.input_dim}"
        )
    if lr == 0:
        return params

    orders = epoch_orders(len(data), epochs, seed)
    w = np.array(params.weights, dtype=np.float64)
    if arch.hidden_dim == 0:
        w = kernels.softmax_sgd(
            w, data.features, data.labels, orders, arch.num_classes, batch_size, lr
        )
    else:
        x, y = data.features, data.labels
        for order in orders:
            for start in range(0, len(order), batch_size):
                idx = order[start : start + batch_size]
                w -= lr * _grad(arch, w, x[idx], y[idx])
    return ModelParams(arch, w)
