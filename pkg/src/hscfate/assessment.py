"""Model assessment against virtual cohorts.

Each animal's %d trajectory (the fraction of sampled progenitors that are
d-type) is reduced to a handful of summary statistics. The observed and
virtual distributions of each statistic are compared with two-sample
Kolmogorov-Smirnov tests, and the die-out rate of the virtual cohort is
reported alongside.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from .model import DEFAULT_INITIAL, ModelSpec, ObservationSeries, PopulationState, RateVector
from .simulate import ScheduleSpec, child_rng, simulate_cohort

__all__ = [
    "EmptySample",
    "InsufficientData",
    "CriterionStatistic",
    "DEFAULT_CRITERIA",
    "ks_two_sample",
    "compute_criteria",
    "CriterionResult",
    "AssessmentReport",
    "assess_model",
    "assess_posterior",
]


class EmptySample(ValueError):
    pass


class InsufficientData(ValueError):
    pass


def ks_two_sample(a, b, method: str = "asymp") -> tuple:
    """Two-sample KS statistic and p-value.

    ``method="asymp"`` uses the limiting Kolmogorov distribution at
    ``sqrt(nm / (n + m)) * D``, which is only approximate for samples
    smaller than about 10. ``method="exact"`` defers to scipy's exact
    small-sample computation.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be nonempty")
    if method == "exact":
        res = stats.ks_2samp(a, b, method="exact")
        return float(res.statistic), float(res.pvalue)
    if method != "asymp":
        raise ValueError(f"unknown method {method!r}")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    n, m = a.size, b.size
    p = float(special.kolmogorov(math.sqrt(n * m / (n + m)) * d)) if d > 0 else 1.0
    return d, min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class CriterionStatistic:
    """A named statistic of a %d trajectory.

    ``func`` receives the times and fractions of the valid (N > 0)
    records and returns a float; ``min_records`` is checked first.
    """

    name: str
    func: Callable
    min_records: int = 2

    def __call__(self, times, fractions) -> float:
        if len(fractions) < self.min_records:
            raise InsufficientData(f"{self.name} needs {self.min_records} valid records")
        return float(self.func(np.asarray(times, dtype=float), np.asarray(fractions, dtype=float)))


def _mean(t, f):
    return f.mean()


def _std(t, f):
    return f.std()


def _early_cv(t, f, n_early=10):
    head = f[:n_early]
    m = head.mean()
    return head.std() / m if m > 0 else math.nan


def _lag1(t, f):
    x = f - f.mean()
    denom = np.dot(x, x)
    return np.dot(x[:-1], x[1:]) / denom if denom > 0 else math.nan


DEFAULT_CRITERIA = (
    CriterionStatistic("mean_pct_d", _mean),
    CriterionStatistic("std_pct_d", _std),
    CriterionStatistic("early_cv_pct_d", _early_cv),
    CriterionStatistic("lag1_autocorr_pct_d", _lag1),
)


def _valid(series: ObservationSeries):
    keep = series.sizes > 0
    return series.times[keep], series.d_counts[keep] / series.sizes[keep]


def compute_criteria(series, registry: Sequence[CriterionStatistic] = DEFAULT_CRITERIA) -> dict:
    """Evaluate each statistic on one trajectory.

    ``series`` is an :class:`ObservationSeries` or a pair ``(times,
    fractions)``. A statistic that cannot be computed maps to its
    :class:`InsufficientData` instance instead of a value.
    """
    if isinstance(series, ObservationSeries):
        t, f = _valid(series)
    else:
        t, f = series
    out = {}
    for crit in registry:
        try:
            out[crit.name] = crit(t, f)
        except InsufficientData as exc:
            out[crit.name] = exc
    return out


def _values(cohort, crit) -> np.ndarray:
    vals = []
    for s in cohort:
        v = compute_criteria(s, (crit,))[crit.name]
        if not isinstance(v, InsufficientData) and np.isfinite(v):
            vals.append(v)
    return np.array(vals)


@dataclass
class CriterionResult:
    name: str
    observed: np.ndarray
    virtual: np.ndarray
    D: float
    p_value: float


@dataclass
class AssessmentReport:
    model: str
    criteria: list
    die_out_rate: float
    n_virtual: int
    registry: tuple = ()
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name) -> CriterionResult:
        for c in self.criteria:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def p_values(self) -> dict:
        return {c.name: c.p_value for c in self.criteria}

    def to_csv(self, path, per_animal: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["criterion", "D", "p_value"])
            for c in self.criteria:
                w.writerow([c.name, repr(c.D), repr(c.p_value)])
            w.writerow(["die_out_rate", "", repr(self.die_out_rate)])
        if per_animal:
            with open(per_animal, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["criterion", "cohort", "value"])
                for c in self.criteria:
                    for tag, vals in (("observed", c.observed), ("virtual", c.virtual)):
                        for v in vals:
                            w.writerow([c.name, tag, repr(float(v))])


def _compare(model, observed, virtual, die_out, n_virtual, registry, method, meta):
    results = []
    for crit in registry:
        obs_v, vir_v = _values(observed, crit), _values(virtual, crit)
        if obs_v.size and vir_v.size:
            d, p = ks_two_sample(obs_v, vir_v, method)
        else:
            d, p = math.nan, math.nan
        results.append(CriterionResult(crit.name, obs_v, vir_v, d, p))
    return AssessmentReport(model, results, die_out, n_virtual, tuple(c.name for c in registry), meta)


def assess_model(
    rates: RateVector,
    spec: ModelSpec,
    observed: Sequence[ObservationSeries] | None,
    n_virtual: int = 50,
    sched: ScheduleSpec | None = None,
    seed: int = 0,
    *,
    initial: PopulationState = DEFAULT_INITIAL,
    registry: Sequence[CriterionStatistic] = DEFAULT_CRITERIA,
    method: str = "asymp",
    workers: int = 1,
) -> AssessmentReport:
    """Simulate ``n_virtual`` animals at ``rates`` and compare to ``observed``.

    Without observed data only the virtual criterion values and the die-out
    rate are reported (D and p are NaN). The schedule defaults to one that
    resamples the observed sample sizes.
    """
    if n_virtual < 2:
        raise ValueError("n_virtual must be >= 2")
    if sched is None:
        sched = ScheduleSpec.from_observed(observed) if observed else ScheduleSpec()
    coh = simulate_cohort(rates, spec, initial, sched, n_virtual, seed, workers)
    meta = {"seed": seed, "rates": rates.to_mapping(), "horizon": sched.horizon}
    return _compare(spec.name, observed or [], coh.series, coh.die_out_rate, n_virtual, registry, method, meta)


def assess_posterior(
    rate_draws: Sequence[RateVector],
    spec: ModelSpec,
    observed: Sequence[ObservationSeries] | None,
    k: int = 6,
    n_virtual: int = 50,
    sched: ScheduleSpec | None = None,
    seed: int = 0,
    **kw,
) -> list:
    """Assess ``k`` rate vectors chosen at random from posterior draws.

    Returns one :class:`AssessmentReport` per chosen draw.
    """
    rng = child_rng(seed, 0)
    idx = rng.choice(len(rate_draws), size=min(k, len(rate_draws)), replace=False)
    return [
        assess_model(rate_draws[int(i)], spec, observed, n_virtual, sched, seed=seed + 1 + j, **kw)
        for j, i in enumerate(sorted(idx))
    ]
