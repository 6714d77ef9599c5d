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

# # Assessing a fitted model with virtual animals
#
# Fitted rates are judged by simulating virtual animals and comparing
# summary statistics of their %d trajectories with the observed ones
# (two-sample Kolmogorov-Smirnov), alongside the virtual die-out rate.

# +
import numpy as np

from hscfate import ModelSpec, RateVector, assess_model, compute_criteria, simulate_cohort
from hscfate.assessment import CriterionStatistic, DEFAULT_CRITERIA
# -

# Observed animals come from SCDAs here, so the matching model should fit
# and a badly wrong rate vector should not.

spec = ModelSpec.from_name("SCDAs")
truth = RateVector(lam=0.093, nu=0.079, mu=0.193, eta=0.078)
observed = simulate_cohort(truth, spec, n_animals=30, seed=11).series
print(compute_criteria(observed[0]))

for label, r in [("true rates", truth), ("slow turnover", RateVector(lam=0.01, nu=0.01, mu=0.02, eta=0.01))]:
    report = assess_model(r, spec, observed, n_virtual=50, seed=5)
    ps = ", ".join(f"{k} {v:.3f}" for k, v in report.p_values.items())
    print(f"{label:13s} die-out {report.die_out_rate:.2f}; p-values: {ps}")

# Extra statistics plug into the registry.

def _range(t, f):
    return float(np.ptp(f))

registry = DEFAULT_CRITERIA + (CriterionStatistic("range_pct_d", _range),)
report = assess_model(truth, spec, observed, n_virtual=50, seed=5, registry=registry)
print(report["range_pct_d"].D, report["range_pct_d"].p_value)
