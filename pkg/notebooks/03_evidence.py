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

# # Comparing models by integrated likelihood
#
# The harmonic mean of the likelihood over posterior draws estimates the
# probability of the data under a model; ratios of these are Bayes factors.

# +
import math

import numpy as np
from scipy import stats

from hscfate import (ChainConfig, GammaPrior, ModelSpec, RateVector, ScheduleSpec, bayes_factor,
                     harmonic_mean, harmonic_mean_path, run_chain, simulate_cohort)
from hscfate.evidence import conditional_marginal
# -

# A sanity check first: one Poisson count with a Gamma(5, 2) prior has a
# negative-binomial marginal, which the estimator should recover.

a, b, y = 5.0, 2.0, 2
rng = np.random.default_rng(0)
theta = np.array([GammaPrior(a, b).conditional(y, 1.0, rng) for _ in range(20_000)])
est = harmonic_mean(stats.poisson.logpmf(y, theta), "toy")
print("estimate", math.exp(est.log_p), "exact", stats.nbinom.pmf(y, a, b / (b + 1)))

# Now two models fitted to data simulated from SCD.

truth = RateVector(lam=0.09, nu=0.08, mu=0.14)
cohort = simulate_cohort(truth, ModelSpec.from_name("SCD"), sched=ScheduleSpec(horizon=30.0), n_animals=3, seed=4)
config = ChainConfig(iterations=500, burn_in=200, seed=2)
estimates = {}
for name in ("SCD", "SCDAs"):
    draws = run_chain(cohort.series, ModelSpec.from_name(name), config=config, horizon=30.0)
    estimates[name] = harmonic_mean_path(draws)
    print(f"{name:6s} log p(y | paths) {estimates[name].log_p:9.3f}  (batch spread {estimates[name].spread:.3f})")
print("BF SCD vs SCDAs:", bayes_factor(estimates["SCD"], estimates["SCDAs"]))

# Conditioning on a rate instead of the paths pins that rate at each of a
# few posterior draws and runs a short inner chain for each.

spec = ModelSpec.from_name("SCD")
draws = run_chain(cohort.series, spec, config=config, horizon=30.0)
lam_draws = draws.rate("lambda")[:: len(draws) // 5][:5]
cond = conditional_marginal(lam_draws, "lambda", cohort.series, spec,
                            inner_config=ChainConfig(iterations=150, burn_in=50, seed=9), horizon=30.0)
print("log p(y | lambda) ~", round(cond.log_p, 3), "from", cond.B, "inner chains")
