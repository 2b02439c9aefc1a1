"""
Stochastic volatility
=====================

No closed form here, so the reference is an average of never-stopping
smoothers with more particles. The adaptive-lag estimates at a tight tolerance
should sit inside the spread of those reference runs.
"""

import numpy as np

from adalag.experiments import ExperimentConfig, run_sv_experiment

config = ExperimentConfig(model="sv", horizon=100, epsilons=[0.5, 1e-3], replicates=20,
                          reference_particles=1000, reference_replicates=5, output_dir="sv-demo")
report = run_sv_experiment(config)
lo, hi = np.array(report.reference["min"]), np.array(report.reference["max"])
for eps in config.epsilons:
    mean = np.array(report.result("adaptive", eps).mean)
    inside = np.mean((lo <= mean) & (mean <= hi))
    print(f"eps={eps:<6g} inside reference band for {inside:.0%} of s, "
          f"mean lag {np.mean(report.result('adaptive', eps).lag_mean):.1f}")
