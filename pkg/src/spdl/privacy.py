"""Differential privacy: clipping, noise calibration, Gaussian perturbation.

Sensitivity is enforced by L2 clipping to C before any noise is added, so
the advertised bound actually holds.  Noise is isotropic: each of the d
coordinates receives an independent Gaussian(0, sigma^2) draw.

Gaussian sampling is pinned for bit-reproducibility: uniform 64-bit words
from the caller's counter-based generator (Philox in the simulator) are
mapped into (0, 1) and pushed through the inverse normal CDF
(``scipy.special.ndtri``).  The method is fixed; runs are reproducible on
one platform for a given numpy/scipy pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError

WHOLE_RUN = "whole-run"
PER_ROUND = "per-round"


def calibrate_sigma(clip: float, rounds: int, gamma: float, epsilon: float, delta: float) -> float:
    """Tightest noise scale keeping T rounds of gradient exchange private.

    Returns exactly C * T * gamma * sqrt(2 ln(1.25/delta)) / epsilon, the
    lower bound for (epsilon, delta)-DP under Gaussian perturbation.
    """
    if clip < 0:
        raise ValueError("clip norm must be nonnegative")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return clip * rounds * gamma * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def clip_gradient(g: np.ndarray, clip: float) -> np.ndarray:
    """Scale g down to L2 norm clip when it exceeds it; otherwise unchanged."""
    if clip <= 0:
        raise ValueError("clip norm must be positive")
    g = np.asarray(g, dtype=np.float64)
    if not np.isfinite(g).all():
        raise ValueError("gradient must be finite")
    norm = float(np.linalg.norm(g))
    if norm <= clip:
        return g.copy()
    return g * (clip / norm)


def _standard_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    # Open-interval uniforms: forcing the low mantissa bit avoids u == 0,
    # which would map to -inf under the inverse CDF.
    bits = rng.integers(0, 2**64, size=size, dtype=np.uint64)
    u = ((bits >> np.uint64(11)) | np.uint64(1)) * 2.0**-53
    return ndtri(u)


def perturb(g: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add independent Gaussian(0, sigma^2) noise per coordinate.

    sigma == 0 returns an exact copy without consuming generator state.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    g = np.asarray(g, dtype=np.float64)
    if sigma == 0.0:
        return g.copy()
    return g + sigma * _standard_normal(rng, g.size)


@dataclass(frozen=True)
class DpConfig:
    """Privacy budget, clipping norm and the noise scale actually applied.

    ``epsilon is None`` means the config carries a noise level without a
    privacy claim (the protocol input is sigma; the budget is optional).
    When a budget is present, sigma must meet the calibration bound for
    the chosen composition mode.
    """

    clip: float
    gamma: float
    rounds: int
    sigma: float
    epsilon: float | None = None
    delta: float | None = None
    mode: str = WHOLE_RUN

    def __post_init__(self):
        if self.clip <= 0:
            raise ConfigurationError("clip norm must be positive")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be nonnegative")
        if self.mode not in (WHOLE_RUN, PER_ROUND):
            raise ConfigurationError(f"unknown DP composition mode: {self.mode!r}")
        if (self.epsilon is None) != (self.delta is None):
            raise ConfigurationError("epsilon and delta must be given together")
        if self.epsilon is not None:
            bound = calibrate_sigma(
                self.clip, self.effective_rounds, self.gamma, self.epsilon, self.delta
            )
            if self.sigma < bound * (1.0 - 1e-12):
                raise ConfigurationError(
                    f"sigma {self.sigma} below the ({self.epsilon}, {self.delta})-DP "
                    f"bound {bound}"
                )

    @property
    def effective_rounds(self) -> int:
        return 1 if self.mode == PER_ROUND else self.rounds


def calibrated_config(
    clip: float,
    gamma: float,
    rounds: int,
    epsilon: float,
    delta: float,
    mode: str = WHOLE_RUN,
) -> DpConfig:
    """DpConfig with sigma set to the exact calibration bound."""
    t = 1 if mode == PER_ROUND else rounds
    sigma = calibrate_sigma(clip, t, gamma, epsilon, delta)
    return DpConfig(
        clip=clip, gamma=gamma, rounds=rounds, sigma=sigma,
        epsilon=epsilon, delta=delta, mode=mode,
    )


def manual_config(clip: float, gamma: float, rounds: int, sigma: float) -> DpConfig:
    """DpConfig with an explicit noise scale and no privacy claim."""
    return DpConfig(clip=clip, gamma=gamma, rounds=rounds, sigma=sigma)
