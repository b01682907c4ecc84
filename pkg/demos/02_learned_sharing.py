"""
Learning which layers to share
==============================

Three synthetic tasks: A and B are relabelings of one random teacher
network, C comes from a different teacher. Every hidden layer of every
task chooses among K=3 candidate weight sets, and the choice is learned
together with the weights.
"""

import numpy as np

from lws import TrainConfig, count_effective_parameters, evaluate, mlp, sharing_summary, train
from lws.data import SyntheticSuiteSpec, synthetic_suite

spec = SyntheticSuiteSpec()
tasks = synthetic_suite(spec, seed=0)
arch = mlp(spec.input_dim, [32, 32], [spec.n_classes] * 3)
print(f"{arch.n_tasks} tasks x {arch.n_units} shareable layers = {arch.n_tasks * arch.n_units} slots")

###############################################################################
# Learned sharing next to the two fixed baselines. The baselines use a
# single candidate (full sharing) or one per task (no sharing).
results = {}
for mode, K in (("lws", 3), ("full_sharing", 1), ("no_sharing", 3)):
    cfg = TrainConfig(mode=mode, K=K, iterations=2000, eval_interval=500, seed=0)
    state, rows = train(cfg, arch, tasks)
    a = state.inference_assignment()
    results[mode] = state
    print(
        f"{mode:<13} test error {evaluate(state, tasks)['mean']:.3f}  "
        f"params {count_effective_parameters(state.bank, a):6d}  entropy {state.dist.entropy():.3f}"
    )

###############################################################################
# Rows are tasks A, B, C; columns are hidden layers; entries pick a candidate.
a = results["lws"].inference_assignment()
print(a.reshape(3, arch.n_units))
for layer, hist in enumerate(sharing_summary(a, 3, arch.n_units)):
    print(f"layer {layer}: group sizes {dict(sorted(hist.items()))}")
