"""Integrated likelihoods by harmonic means, and Bayes factors.

The harmonic mean of likelihood values over posterior draws estimates the
marginal density of the data. Conditioning on paths uses the per-draw
binomial log-likelihoods recorded by the sampler; conditioning on a single
rate runs one short inner chain per posterior draw of that rate, with the
rate pinned, and estimates the conditional density from the inner paths.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .mcmc import ChainConfig, ChainDraws, InitializationFailure, PriorSpec, run_chain
from .model import RATE_NAMES, ModelSpec, ObservationSeries

__all__ = [
    "AllImpossible",
    "InnerChainFailure",
    "IntegratedLikelihoodEstimate",
    "log_harmonic_mean",
    "harmonic_mean",
    "harmonic_mean_path",
    "per_animal_estimates",
    "conditional_marginal",
    "bayes_factor",
    "heterogeneity_compare",
    "write_evidence_csv",
]

CONDITIONS = ("path",) + tuple(n for n in RATE_NAMES if n in ("lambda", "nu", "mu", "eta", "alpha"))


class AllImpossible(ValueError):
    """Every likelihood value was zero."""


class InnerChainFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratedLikelihoodEstimate:
    model: str
    condition: str
    log_p: float
    B: int
    log_p_untrimmed: float
    spread: float = math.nan
    meta: dict = field(default_factory=dict, compare=False)


def log_harmonic_mean(logliks) -> float:
    """``-log(mean(exp(-l)))`` without overflow."""
    ll = np.asarray(logliks, dtype=float).ravel()
    if ll.size == 0:
        raise ValueError("no likelihood values")
    if np.all(np.isneginf(ll)):
        raise AllImpossible("every likelihood value is zero")
    if np.any(np.isneginf(ll)):
        # a single impossible draw sends the harmonic mean to zero
        return -math.inf
    return float(-(logsumexp(-ll) - math.log(ll.size)))


def _batch_spread(ll: np.ndarray, n_batches: int = 10) -> float:
    if ll.size < 2 * n_batches:
        return math.nan
    parts = np.array_split(ll, n_batches)
    est = np.array([log_harmonic_mean(p) for p in parts])
    if not np.all(np.isfinite(est)):
        return math.nan
    return float(est.std(ddof=1) / math.sqrt(n_batches))


def harmonic_mean(
    logliks, model: str = "", condition: str = "path", trim: float = 0.0, meta: dict | None = None
) -> IntegratedLikelihoodEstimate:
    """Harmonic-mean estimate from log-likelihood draws.

    ``trim`` drops that fraction of the smallest values before averaging,
    which tames the heavy right tail of ``1 / likelihood``; the untrimmed
    value is always kept in ``log_p_untrimmed``. ``spread`` is the standard
    error of the log estimate from ten consecutive batches.
    """
    ll = np.asarray(logliks, dtype=float).ravel()
    if not 0 <= trim < 1:
        raise ValueError("trim must be in [0, 1)")
    full = log_harmonic_mean(ll)
    kept = ll
    if trim > 0:
        n_drop = int(math.floor(trim * ll.size))
        kept = np.sort(ll)[n_drop:]
    return IntegratedLikelihoodEstimate(
        model, condition, log_harmonic_mean(kept), int(kept.size), full,
        _batch_spread(ll), {"trim": trim, **(meta or {})},
    )


def harmonic_mean_path(draws: ChainDraws, trim: float = 0.0) -> IntegratedLikelihoodEstimate:
    """Path-conditioned estimate for the whole cohort of a fitted chain."""
    return harmonic_mean(draws.total_loglik, draws.model, "path", trim, {"pooling": draws.pooling})


def per_animal_estimates(draws: ChainDraws, trim: float = 0.0) -> list:
    """One path-conditioned estimate per animal, for per-animal fits."""
    return [
        harmonic_mean(draws.loglik[:, a], draws.model, "path", trim, {"animal_id": aid})
        for a, aid in enumerate(draws.animal_ids)
    ]


def conditional_marginal(
    theta_draws,
    which: str,
    datasets: Sequence[ObservationSeries],
    spec: ModelSpec,
    prior: PriorSpec | None = None,
    inner_config: ChainConfig | None = None,
    *,
    pooling: str = "pooled",
    trim: float = 0.0,
    workers: int = 1,
    **chain_kw,
) -> IntegratedLikelihoodEstimate:
    """Estimate the data density conditioned on the rate ``which``.

    For each posterior draw ``theta_i`` an inner chain runs with that rate
    pinned (seeded ``inner_config.seed + i``); the harmonic mean of its
    per-draw log-likelihoods estimates the conditional density at
    ``theta_i``. These are combined by an outer harmonic mean. Draws whose
    inner chain cannot be started are skipped and listed in ``meta``.
    """
    if which not in spec.rate_names:
        raise ValueError(f"{which!r} is not a rate of {spec.name}")
    cfg = inner_config or ChainConfig(iterations=300, burn_in=100)
    inner, failed = [], []
    for i, theta in enumerate(np.asarray(theta_draws, dtype=float).ravel()):
        try:
            d = run_chain(
                datasets, spec, prior, replace(cfg, seed=cfg.seed + i), pooling,
                fixed_rates={which: float(theta)}, workers=workers, **chain_kw,
            )
            inner.append(log_harmonic_mean(d.total_loglik))
        except (InitializationFailure, AllImpossible) as exc:
            failed.append((i, float(theta), str(exc)))
    if not inner:
        raise AllImpossible("no inner chain produced a finite estimate")
    meta = {
        "inner_iterations": cfg.iterations, "inner_burn_in": cfg.burn_in,
        "n_theta": len(inner) + len(failed), "failed": failed,
        "inner_log_p": inner,
    }
    return harmonic_mean(inner, spec.name, which, trim, meta)


def bayes_factor(est_a: IntegratedLikelihoodEstimate, est_b: IntegratedLikelihoodEstimate) -> float:
    """``p(y | A) / p(y | B)``."""
    return math.exp(est_a.log_p - est_b.log_p)


def heterogeneity_compare(per_animal: Sequence[IntegratedLikelihoodEstimate], pooled: IntegratedLikelihoodEstimate) -> float:
    """Bayes factor of separate per-animal rates against shared rates.

    Animals are independent under the heterogeneous model, so its
    integrated likelihood is the product of the per-animal ones.
    """
    if not per_animal:
        raise ValueError("need at least one per-animal estimate")
    return math.exp(sum(e.log_p for e in per_animal) - pooled.log_p)


def write_evidence_csv(path, estimates: Sequence[IntegratedLikelihoodEstimate], baseline: str) -> None:
    """One row per model: log estimate per conditioning and BF against ``baseline``.

    The BF is reported separately for each conditioning; no blended value.
    """
    by_model: dict = {}
    for e in estimates:
        by_model.setdefault(e.model, {})[e.condition] = e
    if baseline not in by_model:
        raise ValueError(f"baseline model {baseline!r} has no estimates")
    conds = [c for c in CONDITIONS if any(c in m for m in by_model.values())]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model"] + [f"log_p_{c}" for c in conds] + [f"spread_{c}" for c in conds] + [f"bf_{c}" for c in conds])
        base = by_model[baseline]
        for model, ests in by_model.items():
            logs, spreads, bfs = [], [], []
            for c in conds:
                e = ests.get(c)
                logs.append(repr(e.log_p) if e else "")
                spreads.append(repr(e.spread) if e else "")
                bfs.append(repr(bayes_factor(e, base[c])) if e and c in base else "")
            w.writerow([model] + logs + spreads + bfs)
