"""
Fixed lag versus adaptive lag
=============================

Short fixed lags are biased, long ones inherit the genealogy's variance. The
adaptive rule picks the lag per marginal from the data. This is a reduced
version of the ``compare-lags`` study (fewer replicates).
"""

from adalag.experiments import STUDY_DEFAULTS, ExperimentConfig, run_fixed_vs_adaptive

config = ExperimentConfig.from_dict({**STUDY_DEFAULTS["compare-lags"], "replicates": 30})
report = run_fixed_vs_adaptive(config)
ref = report.reference["mean"][0]
print(f"exact E[X_{config.probe}^2 | y] = {ref:.4f}")
for r in report.results:
    label = f"lag {int(r.param)}" if r.method == "fixed" else f"eps {r.param:g}"
    print(f"{r.method:>8} {label:<10} bias {r.mean[0] - ref:+.4f}  sd {r.std[0]:.4f}  "
          f"mean lag {r.lag_mean[0]:.1f}")
