"""Independent numerical oracles used across the test-suite."""

import numpy as np


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Elementwise relative error ``|a - n| / max(|a|, |n|, floor)``, maximised.

    ``floor`` keeps entries that are zero in both from dividing by zero.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def rank_oracle(losses) -> list[int]:
    """Descending ranks by counting: larger losses first, earlier position wins ties."""
    return [
        1 + sum(lj > li for lj in losses) + sum(lj == li for lj in losses[:i])
        for i, li in enumerate(losses)
    ]


def exact_search_gradient(dist, loss_table: dict, population: int) -> np.ndarray:
    """Expected NES gradient by enumerating every ordered population of assignments.

    ``loss_table`` maps assignment tuples to losses and must cover the support.
    """
    import itertools

    support = list(loss_table)
    probs = [float(np.exp(dist.log_density(a))) for a in support]
    derivs = [dist.natural_log_derivative(a) for a in support]
    out = np.zeros(dist.param_size)
    for idx in itertools.product(range(len(support)), repeat=population):
        p = float(np.prod([probs[i] for i in idx]))
        if p == 0.0:
            continue
        ranks = rank_oracle([loss_table[support[i]] for i in idx])
        u = [2.0 * (r - 1) / (population - 1) - 1.0 for r in ranks]
        out += p * sum(ui * derivs[i] for ui, i in zip(u, idx)) / population
    return out
