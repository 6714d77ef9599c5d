"""Posterior summaries, HPD intervals, cusum paths and prior sensitivity."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

__all__ = [
    "TooFewSamples",
    "RateSummary",
    "hpd_interval",
    "cusum",
    "effective_sample_size",
    "posterior_summary",
    "prior_sensitivity",
    "write_summary_csv",
    "write_trace_csv",
]


class TooFewSamples(ValueError):
    pass


def hpd_interval(samples, mass: float = 0.95, min_samples: int = 10) -> tuple:
    """Shortest window of sorted samples holding ``ceil(mass * n)`` points.

    Assumes a unimodal posterior; a multimodal one gets a single window that
    spans the gap.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < max(min_samples, 1):
        raise TooFewSamples(f"need at least {min_samples} samples, got {n}")
    if not 0 < mass <= 1:
        raise ValueError("mass must be in (0, 1]")
    k = max(1, math.ceil(mass * n - 1e-9))
    widths = x[k - 1 :] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def cusum(series) -> np.ndarray:
    """Running sum of deviations from the series mean; ends at zero."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    # shifting by the first draw first keeps constant series exactly zero
    x = x - x[0]
    return np.cumsum(x - x.mean())


def effective_sample_size(series) -> float:
    """ESS from the initial positive sequence of autocorrelation pairs."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 4 or np.all(x == x[0]):
        return float(n)
    x = x - x.mean()
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(n / max(tau, 1e-12))


@dataclass(frozen=True)
class RateSummary:
    rate: str
    mean: float
    hpd_low: float
    hpd_high: float
    n_draws: int
    ess: float


def posterior_summary(draws, mass: float = 0.95, names=None, animal: int | None = None) -> list:
    """Mean, HPD interval and ESS for each active rate of a :class:`ChainDraws`."""
    from .model import ModelSpec

    if names is None:
        names = ModelSpec.from_name(draws.model).rate_names
    out = []
    for name in names:
        col = draws.rate(name) if animal is None else draws.rate(name, animal)
        lo, hi = hpd_interval(col, mass)
        out.append(RateSummary(name, float(np.mean(col)), lo, hi, int(col.size), effective_sample_size(col)))
    return out


def prior_sensitivity(draws_by_prior: Mapping, mass: float = 0.95) -> list:
    """Compare fits of one model under different priors.

    Returns rows ``(rate, prior, mean, hpd_low, hpd_high, shift)`` where
    ``shift`` is the absolute change of the posterior mean relative to the
    first prior in the mapping.
    """
    if len(draws_by_prior) < 2:
        raise ValueError("need at least two prior settings")
    summaries = {name: {s.rate: s for s in posterior_summary(d, mass)} for name, d in draws_by_prior.items()}
    ref_name = next(iter(summaries))
    ref = summaries[ref_name]
    rows = []
    for rate in ref:
        for name, summ in summaries.items():
            s = summ[rate]
            rows.append((rate, name, s.mean, s.hpd_low, s.hpd_high, abs(s.mean - ref[rate].mean)))
    return rows


def write_summary_csv(path, model: str, summaries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "rate", "mean", "hpd_low", "hpd_high", "n_draws", "ess"])
        for s in summaries:
            w.writerow([model, s.rate, repr(s.mean), repr(s.hpd_low), repr(s.hpd_high), s.n_draws, f"{s.ess:.1f}"])


def write_trace_csv(path, draws, names) -> None:
    """One row per kept draw: the rates and their cusum paths."""
    cols = {n: draws.rate(n) for n in names}
    cs = {n: cusum(c) for n, c in cols.items()}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter"] + list(names) + [f"cusum_{n}" for n in names])
        for i, it in enumerate(draws.iters):
            w.writerow([int(it)] + [repr(float(cols[n][i])) for n in names] + [repr(float(cs[n][i])) for n in names])
