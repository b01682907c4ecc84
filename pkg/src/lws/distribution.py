"""Categorical search distributions over weight assignments.

Each slot (one task-specific shareable layer) carries a categorical
distribution over its ``K`` candidate weights, stored in expectation
parameters: ``mu`` holds the probabilities of the first ``K - 1``
categories and the last probability is implied as ``1 - sum(mu)``. In this
parameterisation the natural gradient of ``log p(a)`` is simply the one-hot
of ``a`` (truncated to ``K - 1`` entries) minus ``mu``.

Assignments are integer arrays with one 0-based category index per slot.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from .errors import ArgumentError, DimensionError, DomainError

# Relative tolerance for floor membership and argmax ties;
# the implied last probability is recomputed as 1 - sum(mu) and can land an
# ulp under it.
_FLOOR_RTOL = 1e-12


class SlotDistribution:
    """Categorical distribution over ``K`` categories in expectation parameters."""

    def __init__(self, mu, K: int | None = None):
        mu = np.array(mu, dtype=np.float64).reshape(-1)
        if K is None:
            K = mu.size + 1
        if K < 1 or mu.size != K - 1:
            raise DimensionError(f"expected {K - 1} expectation parameters for K={K}, got {mu.size}")
        self.mu = mu
        self.K = K

    @classmethod
    def uniform(cls, K: int) -> "SlotDistribution":
        return cls(np.full(K - 1, 1.0 / K), K)

    @classmethod
    def point_mass(cls, K: int, category: int) -> "SlotDistribution":
        mu = np.zeros(K - 1)
        if category < K - 1:
            mu[category] = 1.0
        return cls(mu, K)

    @classmethod
    def from_probs(cls, probs) -> "SlotDistribution":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(probs[:-1], probs.size)

    @classmethod
    def from_natural(cls, alpha) -> "SlotDistribution":
        alpha = np.asarray(alpha, dtype=np.float64)
        shift = max(0.0, float(alpha.max())) if alpha.size else 0.0
        e = np.exp(alpha - shift)
        return cls(e / (np.exp(-shift) + e.sum()), alpha.size + 1)

    def full_probs(self) -> np.ndarray:
        return np.append(self.mu, 1.0 - self.mu.sum())

    def to_natural(self) -> np.ndarray:
        """``alpha_i = log(mu_i / mu_K)``; requires every probability to be positive."""
        p = self.full_probs()
        if np.any(p <= 0):
            raise DomainError(f"natural parameters need strictly positive probabilities, got {p}")
        return np.log(p[:-1] / p[-1])

    def cumulant_gradient_check(self) -> float:
        """Max deviation between the gradient of the natural-form cumulant and ``mu``.

        The cumulant ``log(1 + sum(exp(alpha)))`` has gradient
        ``exp(alpha_i) / (1 + sum(exp(alpha)))``; evaluated at
        ``alpha = to_natural()`` it should reproduce ``mu``.
        """
        if self.K == 1:
            return 0.0
        alpha = self.to_natural()
        e = np.exp(alpha)
        grad = e / (1.0 + e.sum())
        return float(np.max(np.abs(grad - self.mu)))

    def clamp_and_renormalize(self, floor: float) -> None:
        """Lift probabilities below ``floor`` onto it and rescale the rest to keep the sum at one.

        Entries lifted to the floor stay exactly on it; the remaining mass is
        shared among the other entries in proportion to their current values,
        repeating if that pushes further entries below the floor. A slot that
        already respects the floor is left untouched, so the operation is
        idempotent.
        """
        if not 0.0 <= floor < 1.0 / self.K:
            raise ArgumentError(f"floor must lie in [0, 1/K) = [0, {1.0 / self.K}), got {floor}")
        p = self.full_probs()
        fixed = p < floor * (1.0 - _FLOOR_RTOL) if floor > 0 else p < 0.0
        if not fixed.any():
            return
        while True:
            free_mass = 1.0 - fixed.sum() * floor
            q = np.where(fixed, floor, p * (free_mass / p[~fixed].sum()))
            dropped = ~fixed & (q < floor)
            if not dropped.any():
                break
            fixed |= dropped
        self.mu = q[:-1].copy()

    def copy(self) -> "SlotDistribution":
        return SlotDistribution(self.mu.copy(), self.K)

    def __repr__(self) -> str:
        return f"SlotDistribution(probs={np.array2string(self.full_probs(), precision=4)})"


class JointAssignmentDistribution:
    """Product of independent per-slot categorical distributions."""

    def __init__(self, slots: Sequence[SlotDistribution]):
        self.slots = list(slots)

    @classmethod
    def uniform(cls, ks: Sequence[int]) -> "JointAssignmentDistribution":
        return cls([SlotDistribution.uniform(k) for k in ks])

    @classmethod
    def point_mass(cls, ks: Sequence[int], assignment) -> "JointAssignmentDistribution":
        return cls([SlotDistribution.point_mass(k, int(a)) for k, a in zip(ks, assignment)])

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    @property
    def ks(self) -> list[int]:
        return [s.K for s in self.slots]

    @property
    def param_size(self) -> int:
        return sum(s.K - 1 for s in self.slots)

    @property
    def params(self) -> np.ndarray:
        """The concatenated expectation parameters (a copy)."""
        if not self.slots:
            return np.zeros(0)
        return np.concatenate([s.mu for s in self.slots])

    @params.setter
    def params(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != (self.param_size,):
            raise DimensionError(f"expected parameter vector of length {self.param_size}, got {value.shape}")
        offset = 0
        for s in self.slots:
            s.mu = value[offset : offset + s.K - 1].copy()
            offset += s.K - 1

    def check(self, assignment) -> np.ndarray:
        a = np.asarray(assignment, dtype=np.int64)
        if a.shape != (self.n_slots,):
            raise DimensionError(f"assignment has shape {a.shape}, expected ({self.n_slots},)")
        ks = np.asarray(self.ks)
        if np.any(a < 0) or np.any(a >= ks):
            raise ArgumentError(f"assignment {a.tolist()} out of range for category counts {ks.tolist()}")
        return a

    def _cdfs(self) -> list[np.ndarray]:
        return [np.cumsum(s.full_probs()) for s in self.slots]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one assignment by inverse-CDF sampling, one uniform per slot."""
        u = rng.random(self.n_slots)
        return np.array(
            [min(int(np.searchsorted(c, x, side="right")), c.size - 1) for c, x in zip(self._cdfs(), u)],
            dtype=np.int64,
        )

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` assignments as an ``(n, N)`` array; same stream as ``n`` calls to :meth:`sample`."""
        u = rng.random((n, self.n_slots))
        out = np.empty((n, self.n_slots), dtype=np.int64)
        for j, c in enumerate(self._cdfs()):
            out[:, j] = np.minimum(np.searchsorted(c, u[:, j], side="right"), c.size - 1)
        return out

    def log_density(self, assignment) -> float:
        a = self.check(assignment)
        with np.errstate(divide="ignore"):
            return float(sum(np.log(s.full_probs()[k]) for s, k in zip(self.slots, a)))

    def natural_log_derivative(self, assignment) -> np.ndarray:
        """``T(a) - pi``: the natural gradient of ``log p(a)`` w.r.t. the expectation parameters."""
        a = self.check(assignment)
        return self.natural_log_derivative_many(a[None, :])[0]

    def natural_log_derivative_many(self, assignments) -> np.ndarray:
        A = np.asarray(assignments, dtype=np.int64)
        out = np.empty((A.shape[0], self.param_size))
        offset = 0
        for j, s in enumerate(self.slots):
            width = s.K - 1
            if width:
                onehot = A[:, j, None] == np.arange(width)[None, :]
                out[:, offset : offset + width] = onehot - s.mu[None, :]
            offset += width
        return out

    def argmax(self) -> np.ndarray:
        """Most probable assignment; ties go to the lowest category index.

        Probabilities within ``_FLOOR_RTOL`` of the slot maximum count as tied,
        since the implied last probability carries rounding error
        (uniform K=3 gives ``1 - 2/3 > 1/3``).
        """
        out = np.empty(self.n_slots, dtype=np.int64)
        for j, s in enumerate(self.slots):
            p = s.full_probs()
            out[j] = int(np.flatnonzero(p >= p.max() * (1.0 - _FLOOR_RTOL))[0])
        return out

    def clamp_and_renormalize(self, floor: float) -> None:
        for s in self.slots:
            s.clamp_and_renormalize(floor)

    def entropy(self) -> float:
        """Shannon entropy in nats, summed over slots."""
        h = 0.0
        for s in self.slots:
            p = s.full_probs()
            p = p[p > 0]
            h -= float(np.sum(p * np.log(p)))
        return h

    def copy(self) -> "JointAssignmentDistribution":
        return JointAssignmentDistribution([s.copy() for s in self.slots])

    def to_json(self) -> str:
        return json.dumps([s.full_probs().tolist() for s in self.slots])

    @classmethod
    def from_json(cls, text: str) -> "JointAssignmentDistribution":
        return cls([SlotDistribution.from_probs(p) for p in json.loads(text)])

    def __repr__(self) -> str:
        return f"JointAssignmentDistribution(N={self.n_slots}, ks={self.ks})"
