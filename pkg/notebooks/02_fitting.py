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

# # Fitting rates with the Gibbs sampler
#
# The sampler alternates conjugate Gamma draws of the rates, given the
# latent event histories, with reversible-jump updates of each history
# (delete, insert or move one event), given the rates.

# +
import numpy as np

from hscfate import ChainConfig, ModelSpec, RateVector, ScheduleSpec, hpd_interval, run_chain, simulate_cohort
from hscfate.diagnostics import posterior_summary
# -

# A small synthetic problem keeps the run short: three animals observed
# for 30 weeks.

spec = ModelSpec.from_name("SCD")
truth = RateVector(lam=0.09, nu=0.08, mu=0.14)
cohort = simulate_cohort(truth, spec, sched=ScheduleSpec(horizon=30.0), n_animals=3, seed=21)

config = ChainConfig(iterations=600, burn_in=200, seed=1)
draws = run_chain(cohort.series, spec, config=config, horizon=30.0)
print(len(draws), "kept draws; acceptance", {k: round(v, 2) for k, v in draws.acceptance.rates().items()})

# Posterior means and 95% highest-density intervals against the truth.

for s in posterior_summary(draws):
    print(f"{s.rate:7s} mean {s.mean:.4f}  HPD [{s.hpd_low:.4f}, {s.hpd_high:.4f}]  "
          f"true {truth[s.rate]:.3f}  ESS {s.ess:.0f}")

# Fitting each animal separately gives one rate vector per animal.

per = run_chain(cohort.series, spec, config=config, pooling="per_animal", horizon=30.0)
for a, aid in enumerate(per.animal_ids):
    lo, hi = hpd_interval(per.rate("lambda", animal=a))
    print(f"animal {aid}: lambda HPD [{lo:.3f}, {hi:.3f}]")

# A chain can be stopped and resumed from its final state with identical
# results.

short = run_chain(cohort.series, spec, config=ChainConfig(iterations=300, burn_in=200, seed=1), horizon=30.0)
resumed = run_chain(cohort.series, spec, config=config, horizon=30.0, state=short.final_state)
print(np.array_equal(resumed.rate("lambda"), draws.rate("lambda")[-len(resumed):]))
