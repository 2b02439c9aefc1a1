"""
Streaming adaptive-lag smoothing
================================

The smoother takes one observation at a time and returns the marginals that
became final at that step. Memory stays bounded: only marginals whose
variance criterion is still above the tolerance are kept.
"""

import numpy as np

from adalag.kalman import disturbance_smoother
from adalag.models import benchmark_lgssm_params, make_lgssm, simulate
from adalag.smoothers import AdaptiveLagSmoother

params = benchmark_lgssm_params()
obs = simulate(make_lgssm(params), 400, seed=3).observations
smoother = AdaptiveLagSmoother(make_lgssm(params), n_particles=400, epsilon=1e-3, precision=2, seed=3)

final = {}
for t, y in enumerate(obs):
    for m in smoother.step(y, is_final=t == len(obs) - 1):
        final[m.s] = m
    if t % 50 == 0:
        print(f"t={t:>3}  active marginals {len(smoother.bank):>3}  released so far {len(final)}")

# %%
# Compare against the offline smoother.
means, _ = disturbance_smoother(params, obs)
est = np.array([final[s].estimate for s in range(len(obs))])
print(f"RMSE vs exact smoother {np.sqrt(np.mean((est - means[:, 0]) ** 2)):.4f}")
print(f"mean lag {np.mean([m.lag for m in final.values()]):.1f}, "
      f"truncated at the horizon {sum(m.truncated_by_horizon for m in final.values())}")
