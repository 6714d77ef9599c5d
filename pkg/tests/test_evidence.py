import math

import numpy as np
import pytest
from scipy import stats

from hscfate import (
    AllImpossible,
    ChainConfig,
    GammaPrior,
    IntegratedLikelihoodEstimate,
    ModelSpec,
    RateVector,
    ScheduleSpec,
    bayes_factor,
    conditional_marginal,
    harmonic_mean,
    harmonic_mean_path,
    heterogeneity_compare,
    per_animal_estimates,
    run_chain,
    simulate_cohort,
)
from hscfate.evidence import log_harmonic_mean, write_evidence_csv


def test_constant_likelihood_is_exact():
    assert log_harmonic_mean(np.full(1000, -3.25)) == -3.25


def test_two_term_hand_value():
    assert log_harmonic_mean([math.log(0.5), math.log(0.25)]) == pytest.approx(math.log(1 / 3))


def test_bounds_and_permutation(rng):
    ll = rng.normal(-50, 4, 500)
    v = log_harmonic_mean(ll)
    assert ll.min() <= v <= ll.max()
    assert log_harmonic_mean(rng.permutation(ll)) == pytest.approx(v, abs=1e-12)


def test_no_overflow_for_tiny_likelihoods():
    v = log_harmonic_mean([-1e6, -1e6 + 1.0, -1e6 + 2.0])
    assert np.isfinite(v) and -1e6 <= v <= -1e6 + 2


def test_all_impossible():
    with pytest.raises(AllImpossible):
        log_harmonic_mean([-np.inf, -np.inf])


def test_one_impossible_draw_zeroes_estimate():
    assert log_harmonic_mean([-1.0, -np.inf]) == -np.inf


def test_trim_keeps_untrimmed(rng):
    ll = rng.normal(-20, 3, 400)
    est = harmonic_mean(ll, "M", trim=0.1)
    assert est.B == 360
    assert est.log_p_untrimmed == pytest.approx(log_harmonic_mean(ll))
    assert est.log_p >= est.log_p_untrimmed


def test_poisson_gamma_toy():
    a, b, y = 5.0, 2.0, 2
    exact = stats.nbinom.logpmf(y, a, b / (b + 1))
    prior = GammaPrior(a, b)
    rng = np.random.default_rng(0)
    theta = np.array([prior.conditional(y, 1.0, rng) for _ in range(50_000)])
    est = harmonic_mean(stats.poisson.logpmf(y, theta))
    assert abs(math.exp(est.log_p - exact) - 1) < 0.02


def test_bayes_factor():
    a = IntegratedLikelihoodEstimate("A", "path", -644.59, 10, -644.59)
    b = IntegratedLikelihoodEstimate("B", "path", -647.27, 10, -647.27)
    assert bayes_factor(a, b) == pytest.approx(math.exp(2.68))
    assert bayes_factor(a, b) * bayes_factor(b, a) == pytest.approx(1.0)
    assert bayes_factor(a, a) == 1.0


def test_heterogeneity_single_animal():
    e = IntegratedLikelihoodEstimate("SCD", "path", -12.5, 10, -12.5)
    assert heterogeneity_compare([e], e) == 1.0


@pytest.fixture(scope="module")
def small_fit():
    spec = ModelSpec.from_name("SCD")
    coh = simulate_cohort(RateVector(0.09, 0.08, 0.14), spec, n_animals=2, seed=3,
                          sched=ScheduleSpec(horizon=15.0, spacing=3.0))
    draws = run_chain(coh.series, spec, config=ChainConfig(iterations=120, burn_in=40, seed=2))
    return spec, coh.series, draws


def test_path_estimate_from_chain(small_fit):
    spec, _, draws = small_fit
    est = harmonic_mean_path(draws)
    assert est.model == "SCD" and est.condition == "path" and est.B == len(draws)
    assert draws.total_loglik.min() <= est.log_p <= draws.total_loglik.max()


def test_conditional_marginal_runs(small_fit):
    spec, data, draws = small_fit
    theta = draws.rate("lambda")[::40]
    est = conditional_marginal(theta, "lambda", data, spec, inner_config=ChainConfig(iterations=40, burn_in=10, seed=9))
    assert est.condition == "lambda" and est.B == theta.size and np.isfinite(est.log_p)
    assert len(est.meta["inner_log_p"]) == theta.size and not est.meta["failed"]
    with pytest.raises(ValueError):
        conditional_marginal(theta, "eta", data, spec)


def test_per_animal_and_report(small_fit, tmp_path):
    spec, data, draws = small_fit
    het = run_chain(data, spec, config=ChainConfig(iterations=60, burn_in=20, seed=2), pooling="per_animal")
    per = per_animal_estimates(het)
    assert [e.meta["animal_id"] for e in per] == het.animal_ids
    ratio = heterogeneity_compare(per, harmonic_mean_path(draws))
    assert ratio > 0
    pooled = harmonic_mean_path(draws)
    other = IntegratedLikelihoodEstimate("SCDAs", "path", pooled.log_p + 1.0, 5, pooled.log_p + 1.0)
    write_evidence_csv(tmp_path / "ev.csv", [pooled, other], "SCD")
    lines = (tmp_path / "ev.csv").read_text().splitlines()
    assert lines[0].startswith("model,log_p_path") and "bf_path" in lines[0]
    assert float(lines[2].split(",")[-1]) == pytest.approx(math.e)
