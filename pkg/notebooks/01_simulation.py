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

# # Simulating stem-cell compartments
#
# A two-compartment branching process: stem cells (compartment 1, counts
# `z_d`, `z_G`) divide symmetrically (S), differentiate into progenitor
# clones (C), divide asymmetrically (As) or leave by apoptosis (Ap);
# progenitor clones (compartment 2, `x_d`, `x_G`) die (D). Only the
# d-fraction of sampled progenitors is ever observed.

# +
import numpy as np

from hscfate import ModelSpec, PopulationState, RateVector, ScheduleSpec, simulate_cohort, simulate_path
# -

# One path under the SCD model, starting from 10 + 10 stem cells and
# 5 + 5 progenitor clones.

spec = ModelSpec.from_name("SCD")
rates = RateVector(lam=0.09, nu=0.08, mu=0.14)
path = simulate_path(rates, spec, PopulationState(10, 10, 5, 5), 100.0, np.random.default_rng(1))
print(len(path), "events; first five:")
for ev in path.events[:5]:
    print(f"  t={ev.time:7.3f}  {ev.kind.name:2s} on a {ev.label.name}-cell")

# A cohort adds a sampling schedule (gaps uniform on 2 to 6 weeks, 100 cells
# per draw) and records whether stem cells died out before the horizon.

cohort = simulate_cohort(rates, spec, sched=ScheduleSpec(horizon=100.0), n_animals=20, seed=7)
first = cohort.series[0]
print("animal", first.animal_id, "weeks:", np.round(first.times[:6], 1))
print("  %d:", np.round(100 * first.d_counts[:6] / first.sizes[:6], 1))
print("die-out rate:", cohort.die_out_rate)

# Die-out differs sharply between model variants. Without symmetric
# division the stem-cell pool can only shrink.

settings = {
    "SCDAs": RateVector(lam=0.093, nu=0.079, mu=0.193, eta=0.078),
    "SDAsAp": RateVector(lam=0.0659, mu=0.04538, eta=0.00136, alpha=0.00142),
    "CDAsAp": RateVector(nu=0.00738, mu=0.05969, eta=0.03338, alpha=0.00426),
}
for name, r in settings.items():
    coh = simulate_cohort(r, ModelSpec.from_name(name), n_animals=200, seed=3)
    print(f"{name:7s} die-out {coh.die_out_rate:.3f}")

# The same seed always gives the same cohort, whatever the worker count.

a = simulate_cohort(rates, spec, n_animals=8, seed=5, workers=1)
b = simulate_cohort(rates, spec, n_animals=8, seed=5, workers=4)
print(all(np.array_equal(x.d_counts, y.d_counts) for x, y in zip(a.series, b.series)))
