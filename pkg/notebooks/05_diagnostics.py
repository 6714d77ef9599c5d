# ---
# jupyter:
#   jupytext:
#     formats: py:light
#     text_representation:
#       extension: .py
#       format_name: light
#       format_version: '1.5'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# # Convergence and prior sensitivity
#
# Traces, cumulative sums and effective sample sizes help judge whether a
# chain has settled; refitting under another prior shows how much the
# posterior owes to the data.

# +
import numpy as np

from hscfate import ChainConfig, ModelSpec, PriorSpec, RateVector, ScheduleSpec, UniformPrior, run_chain, simulate_cohort
from hscfate.diagnostics import cusum, effective_sample_size, prior_sensitivity
# -

spec = ModelSpec.from_name("SCD")
cohort = simulate_cohort(RateVector(lam=0.09, nu=0.08, mu=0.14), spec, sched=ScheduleSpec(horizon=30.0),
                         n_animals=3, seed=8)
config = ChainConfig(iterations=600, burn_in=200, seed=3)
gamma_fit = run_chain(cohort.series, spec, config=config, horizon=30.0)

# A cusum path that wanders far from zero and stays there points to drift.

lam = gamma_fit.rate("lambda")
c = cusum(lam)
print("cusum range", np.round([c.min(), c.max()], 4), "ESS", round(effective_sample_size(lam)))
print("lag-1 autocorrelation", round(float(np.corrcoef(lam[:-1], lam[1:])[0, 1]), 3))

# The same data under a flat prior on [0, 0.5].

flat_fit = run_chain(cohort.series, spec, prior=PriorSpec.shared(UniformPrior(0.5)), config=config, horizon=30.0)
for rate, prior, mean, lo, hi, shift in prior_sensitivity({"gamma(5,50)": gamma_fit, "uniform(0,0.5)": flat_fit}):
    print(f"{rate:7s} {prior:15s} mean {mean:.4f} [{lo:.4f}, {hi:.4f}] shift {shift:.4f}")
