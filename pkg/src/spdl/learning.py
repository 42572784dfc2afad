"""Models, losses, local stochastic gradients and the SGD update rule.

The trained model is multinomial softmax regression (flattened weight
matrix of shape ``n_classes x n_features``, row-major) or least-squares
regression on the integer label (weight vector of length ``n_features``).
Both are convex, so convergence behaviour is testable at desk scale.
All arithmetic is 64-bit floating point; model parameters and gradients
are plain 1-D ``numpy.float64`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UnsupportedOperationError

SOFTMAX = "softmax-cross-entropy"
LEAST_SQUARES = "least-squares"


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, p), integer labels (n,) in [0, n_classes)."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.ndim != 1:
            raise ValueError("features must be (n, p), labels must be (n,)")
        if features.shape[0] == 0:
            raise ValueError("dataset must be nonempty")
        if features.shape[0] != labels.shape[0]:
            raise ValueError("feature/label count mismatch")
        if not np.isfinite(features).all():
            raise ValueError("features must be finite")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ValueError("labels must lie in [0, n_classes)")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Batch:
    """Positions into a dataset, sampled once per round."""

    indices: np.ndarray

    def __post_init__(self):
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        if indices.ndim != 1 or indices.size == 0:
            raise ValueError("batch must be a nonempty 1-D index array")
        indices.setflags(write=False)
        object.__setattr__(self, "indices", indices)

    @property
    def size(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class LossSpec:
    """Loss family, class count (softmax only) and L2 regularization."""

    kind: str
    n_classes: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if self.kind not in (SOFTMAX, LEAST_SQUARES):
            raise ValueError(f"unknown loss kind: {self.kind!r}")
        if self.kind == SOFTMAX and self.n_classes < 2:
            raise ValueError("softmax loss needs n_classes >= 2")
        if self.l2 < 0:
            raise ValueError("regularization must be nonnegative")

    def dim(self, n_features: int) -> int:
        """Model dimension d for an input of n_features columns."""
        if self.kind == SOFTMAX:
            return self.n_classes * n_features
        return n_features


def softmax_loss(n_classes: int, l2: float = 0.0) -> LossSpec:
    return LossSpec(kind=SOFTMAX, n_classes=n_classes, l2=l2)


def least_squares_loss(l2: float = 0.0) -> LossSpec:
    return LossSpec(kind=LEAST_SQUARES, l2=l2)


def init_model(loss: LossSpec, n_features: int) -> np.ndarray:
    """Shared all-zero starting point (every node initializes identically)."""
    return np.zeros(loss.dim(n_features), dtype=np.float64)


def _check_model(model: np.ndarray, data: Dataset, loss: LossSpec) -> np.ndarray:
    model = np.asarray(model, dtype=np.float64)
    if model.ndim != 1 or model.size != loss.dim(data.n_features):
        raise ConfigurationError(
            f"model dimension {model.size} does not match loss layout "
            f"{loss.dim(data.n_features)}"
        )
    return model


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def compute_loss(model: np.ndarray, data: Dataset, indices: np.ndarray, loss: LossSpec) -> float:
    """Mean loss of the model over the indexed records."""
    model = _check_model(model, data, loss)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot evaluate loss on an empty selection")
    a = data.features[idx]
    y = data.labels[idx]
    reg = 0.5 * loss.l2 * float(model @ model)
    if loss.kind == LEAST_SQUARES:
        r = a @ model - y
        return float(np.mean(0.5 * r * r)) + reg
    w = model.reshape(loss.n_classes, data.n_features)
    logp = _log_softmax(a @ w.T)
    return float(-np.mean(logp[np.arange(idx.size), y])) + reg


def compute_gradient(model: np.ndarray, data: Dataset, batch: Batch, loss: LossSpec) -> np.ndarray:
    """Gradient of the mean loss over the batch; deterministic in its inputs."""
    model = _check_model(model, data, loss)
    idx = batch.indices
    if idx.min() < 0 or idx.max() >= len(data):
        raise ValueError("batch indices out of range for dataset")
    a = data.features[idx]
    y = data.labels[idx]
    if loss.kind == LEAST_SQUARES:
        r = a @ model - y
        grad = (a.T @ r) / idx.size
    else:
        w = model.reshape(loss.n_classes, data.n_features)
        p = np.exp(_log_softmax(a @ w.T))
        p[np.arange(idx.size), y] -= 1.0
        grad = ((p.T @ a) / idx.size).reshape(-1)
    if loss.l2:
        grad = grad + loss.l2 * model
    return np.ascontiguousarray(grad, dtype=np.float64)


def sgd_update(x: np.ndarray, delta: np.ndarray, gamma: float) -> np.ndarray:
    """Componentwise x - gamma * delta."""
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if x.shape != delta.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {delta.shape}")
    if not np.isfinite(gamma):
        raise ValueError("gamma must be finite")
    return x - gamma * delta


def predict(model: np.ndarray, features: np.ndarray, loss: LossSpec) -> np.ndarray:
    """Argmax class per record; ties resolve to the lowest class index."""
    if loss.kind != SOFTMAX:
        raise UnsupportedOperationError("prediction is defined for softmax only")
    n_features = features.shape[1]
    w = np.asarray(model, dtype=np.float64).reshape(loss.n_classes, n_features)
    # np.argmax returns the first maximal index, which is the lowest class.
    return np.argmax(features @ w.T, axis=1)


def test_error(model: np.ndarray, testset: Dataset, loss: LossSpec) -> float:
    """Fraction of wrong predictions on the test set."""
    if loss.kind != SOFTMAX:
        raise UnsupportedOperationError("test_error is defined for softmax only")
    _check_model(model, testset, loss)
    pred = predict(model, testset.features, loss)
    return float(np.mean(pred != testset.labels))


def sample_batch(data: Dataset, size: int, rng: np.random.Generator) -> Batch:
    """Uniform sample without replacement; deterministic under a fixed seed."""
    if not 1 <= size <= len(data):
        raise ValueError(f"batch size {size} out of range 1..{len(data)}")
    return Batch(indices=rng.choice(len(data), size=size, replace=False))
