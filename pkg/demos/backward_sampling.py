"""
Backward sampling by rejection
==============================

Backward indices are drawn with probability proportional to
``w_l q(xi_l, x)``. Rejection against the transition-density bound avoids
computing all N products; the exact O(N) draw is used when rejection stalls.
Averaging K such draws gives the PaRIS statistic, an unbiased Monte Carlo
version of the O(N^2) forward-filtering backward-smoothing update.
"""

import numpy as np

from adalag.models import benchmark_lgssm_params, make_lgssm
from adalag.particle import WeightedSample
from adalag.smoothers import EstimatorBank, backward_indices, ffbsm_update, paris_update

model = make_lgssm(benchmark_lgssm_params())
rng = np.random.default_rng(0)

prev = WeightedSample(t=0, particles=np.array([[-0.4], [0.3], [1.1]]), weights=np.array([0.5, 1.7, 0.8]))
x_new = np.array([[0.6]])
p = prev.weights * np.exp(model.log_transition(prev.particles, np.repeat(x_new, 3, axis=0)))
print("exact law      ", np.round(p / p.sum(), 4))

draws = backward_indices(prev, np.repeat(x_new, 100_000, axis=0), model, rng, switch_ratio=0.0)[:, 0]
print("rejection draws", np.round(np.bincount(draws, minlength=3) / len(draws), 4))

# %%
# One update on five particles, averaged over many replays.
prev = WeightedSample(t=0, particles=np.array([[-1.2], [-0.3], [0.1], [0.9], [2.0]]),
                      weights=np.array([0.7, 1.3, 0.4, 2.2, 0.9]))
new = WeightedSample(t=1, particles=np.array([[-0.8], [0.0], [0.5], [1.4], [0.2]]),
                     weights=np.ones(5), ancestors=np.array([0, 1, 3, 3, 4]))
tau = np.array([1.5, -0.5, 2.0, 0.25, -1.0])

replays = []
for _ in range(5000):
    bank = EstimatorBank(epsilon=1.0, precision=2)
    bank.activate(0, tau)
    replays.append(paris_update(bank, prev, new, model, rng).statistics(0))
print("ffbsm          ", np.round(ffbsm_update(tau, prev, new, model), 4))
print("mean of paris  ", np.round(np.mean(replays, axis=0), 4))
