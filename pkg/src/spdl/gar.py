"""Gradient aggregation rules: Krum, coordinate-wise median, plain average.

Krum scores each input by the sum of squared Euclidean distances to its
n - f - 2 nearest peers (self excluded) and returns the input with the
smallest score, ties broken by lowest index.  Squared distances are the
scoring convention throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

KRUM = "krum"
MEDIAN = "median"
AVERAGE = "average"
GAR_KINDS = (KRUM, MEDIAN, AVERAGE)


@dataclass(frozen=True)
class GarSpec:
    kind: str
    f: int = 0

    def __post_init__(self):
        if self.kind not in GAR_KINDS:
            raise ValueError(f"unknown GAR kind: {self.kind!r}")
        if self.f < 0:
            raise ValueError("declared Byzantine count must be nonnegative")


def _stack(grads: Sequence[np.ndarray]) -> np.ndarray:
    if len(grads) == 0:
        raise ValueError("need at least one gradient")
    mat = np.stack([np.asarray(g, dtype=np.float64) for g in grads])
    if mat.ndim != 2:
        raise ValueError("gradients must be 1-D vectors of equal dimension")
    return mat


def pairwise_sq_distances(grads: Sequence[np.ndarray]) -> np.ndarray:
    """Symmetric n x n matrix of squared Euclidean distances."""
    mat = _stack(grads)
    if mat.shape[0] < 2:
        raise ValueError("need at least two gradients")
    diff = mat[:, None, :] - mat[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    # Exact zero diagonal and symmetry regardless of float round-off.
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    return d2


def krum_select(grads: Sequence[np.ndarray], f: int) -> tuple[int, np.ndarray]:
    """Index and value of the gradient closest to its n-f-2 nearest peers."""
    mat = _stack(grads)
    n = mat.shape[0]
    if f < 0:
        raise ValueError("f must be nonnegative")
    if n < f + 3:
        raise ValueError(f"krum needs n >= f + 3, got n={n}, f={f}")
    d2 = pairwise_sq_distances(mat)
    n_near = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(d2[i], i)
        others.sort()
        scores[i] = others[:n_near].sum()
    idx = int(np.argmin(scores))  # first minimum = lowest index
    return idx, mat[idx].copy()


def median_aggregate(grads: Sequence[np.ndarray]) -> np.ndarray:
    """Coordinate-wise median; even counts average the two middle values."""
    mat = _stack(grads)
    return np.median(mat, axis=0)


def average_aggregate(grads: Sequence[np.ndarray]) -> np.ndarray:
    """Componentwise arithmetic mean."""
    mat = _stack(grads)
    return mat.mean(axis=0)


def aggregate(grads: Sequence[np.ndarray], spec: GarSpec) -> np.ndarray:
    """Apply the configured rule; Krum returns a copy of the selected input."""
    if spec.kind == KRUM:
        return krum_select(grads, spec.f)[1]
    if spec.kind == MEDIAN:
        return median_aggregate(grads)
    return average_aggregate(grads)
