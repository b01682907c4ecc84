"""Natural evolution strategy update for the assignment distribution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distribution import JointAssignmentDistribution
from .errors import ArgumentError, ConfigError, DimensionError


@dataclass(frozen=True)
class NesConfig:
    population: int = 8
    learning_rate: float = 1e-2
    floor: float = 1e-3

    def __post_init__(self):
        if self.population < 2:
            raise ConfigError(f"NES population must be >= 2, got {self.population}")
        if self.learning_rate <= 0:
            raise ConfigError(f"NES learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.floor < 1.0:
            raise ConfigError(f"probability floor must lie in [0, 1), got {self.floor}")


@dataclass
class ScoredSample:
    assignment: np.ndarray
    loss: float
    log_derivative: np.ndarray


def rank_descending(losses) -> np.ndarray:
    """Ranks 1..n with the largest loss ranked 1; ties keep input order."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1 or losses.size < 2:
        raise ArgumentError(f"need a vector of at least two losses, got shape {losses.shape}")
    if np.isnan(losses).any():
        raise ArgumentError("losses contain NaN")
    order = np.argsort(-losses, kind="stable")
    ranks = np.empty(losses.size, dtype=np.int64)
    ranks[order] = np.arange(1, losses.size + 1)
    return ranks


def utilities(losses) -> np.ndarray:
    """Equally spaced utilities in [-1, 1]; the lowest loss gets +1."""
    ranks = rank_descending(losses)
    n = ranks.size
    return 2.0 * (ranks - 1) / (n - 1) - 1.0


def estimate_search_gradient(samples: Sequence[ScoredSample], size: int) -> np.ndarray:
    """Monte-Carlo search gradient ``mean(u_i * log_derivative_i)`` with rank utilities."""
    if len(samples) < 2:
        raise ArgumentError(f"need at least two scored samples, got {len(samples)}")
    D = np.empty((len(samples), size))
    for i, s in enumerate(samples):
        d = np.asarray(s.log_derivative, dtype=np.float64)
        if d.shape != (size,):
            raise DimensionError(f"log-derivative {i} has shape {d.shape}, expected ({size},)")
        D[i] = d
    u = utilities([s.loss for s in samples])
    return u @ D / len(samples)


def nes_step(dist: JointAssignmentDistribution, gradient, config: NesConfig) -> None:
    """Ascend the utility-weighted gradient, then re-impose the probability floor."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != (dist.param_size,):
        raise DimensionError(f"gradient has shape {gradient.shape}, expected ({dist.param_size},)")
    dist.params = dist.params + config.learning_rate * gradient
    dist.clamp_and_renormalize(config.floor)
