"""
Path degeneracy of the bootstrap filter
=======================================

Tracing ancestors back through repeated multinomial resampling collapses
onto a handful of lines. Estimating an early marginal from the genealogy
therefore gets worse the longer we wait.
"""

import numpy as np

from adalag.models import benchmark_lgssm_params, make_lgssm, simulate
from adalag.particle import (
    GenealogyStore,
    poor_mans_estimate,
    run_filter,
    unique_ancestors,
)

params = benchmark_lgssm_params()
model = make_lgssm(params, observations=simulate(make_lgssm(params), 300, seed=1).observations)

store = GenealogyStore(301)
for sample in run_filter(model, 200, np.random.default_rng(1)):
    store.push(sample)

# %%
# Distinct time-0 ancestors still represented at time t.
for t in (0, 1, 2, 5, 10, 20, 50, 100, 300):
    print(f"t={t:>3}  unique ancestors of generation 0: {unique_ancestors(store, 0, t)}")

# %%
# Poor man's estimate of E[X_0 | y_0:t] for growing t.
for t in (0, 5, 20, 100):
    print(f"t={t:>3}  estimate {poor_mans_estimate(store, 0, lambda x: x[:, 0], t):.3f}")
