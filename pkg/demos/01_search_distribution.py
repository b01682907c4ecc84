"""
Searching over discrete choices with a categorical NES
======================================================

A single slot picks one of three options. Option 0 costs nothing, the
others cost 1. We sample a small population, rank the losses, and move
the expectation parameters along the utility-weighted log-derivatives.
"""

import numpy as np

from lws import JointAssignmentDistribution, NesConfig, ScoredSample, estimate_search_gradient, nes_step, utilities

###############################################################################
# Ranks become equally spaced utilities; the best sample gets +1.
print(utilities([0.3, 0.1, 0.5, 0.2, 0.4]))

###############################################################################
# In expectation parameters the natural log-derivative is one-hot minus mu.
dist = JointAssignmentDistribution.uniform([3])
print(dist.natural_log_derivative([0]), dist.natural_log_derivative([2]))

###############################################################################
# Run the update until option 0 dominates.
rng = np.random.default_rng(0)
cost = np.array([0.0, 1.0, 1.0])
cfg = NesConfig(population=8, learning_rate=0.05)
for step in range(301):
    A = dist.sample_many(rng, cfg.population)
    D = dist.natural_log_derivative_many(A)
    samples = [ScoredSample(a, cost[a[0]], d) for a, d in zip(A, D)]
    nes_step(dist, estimate_search_gradient(samples, dist.param_size), cfg)
    if step % 50 == 0:
        print(f"step {step:3d}  probs {np.round(dist.slots[0].full_probs(), 3)}  entropy {dist.entropy():.3f}")

# The floor keeps the losing options alive at 0.1 %.
print("argmax", dist.argmax())
