"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (also collected into the terminal
summary). Criterion 7 takes hours on one core and only runs when
``HSCFATE_NIGHTLY=1``.
"""
import itertools
import math
import os
import time

import numpy as np
import pytest
from scipy import integrate, stats

from hscfate import (
    ChainConfig,
    EmptyPathMove,
    EventKind,
    GammaPrior,
    ModelSpec,
    MoveWeights,
    ObservationSeries,
    Path,
    PopulationState,
    PriorSpec,
    RateVector,
    ScheduleSpec,
    SufficientStats,
    UniformPrior,
    acceptance_log_ratio,
    harmonic_mean,
    hpd_interval,
    log_obs_likelihood,
    log_path_density,
    propose_move,
    run_chain,
    simulate_cohort,
    simulate_path,
    state_at,
    state_trajectory,
    sufficient_stats,
    update_rates,
)
from hscfate.cli import main as cli_main
from hscfate.evidence import log_harmonic_mean
from hscfate.mcmc import log_proposal_ratio

from conftest import MODELS, report

S, C, D, As, Ap = EventKind
NIGHTLY = os.environ.get("HSCFATE_NIGHTLY") == "1"


def _die_out(number, model, rates, n, lo, hi, budget, seed):
    spec = ModelSpec.from_name(model)
    t0 = time.perf_counter()
    coh = simulate_cohort(rates, spec, PopulationState(10, 10, 5, 5), ScheduleSpec(horizon=100.0), n, seed)
    secs = time.perf_counter() - t0
    rate = coh.die_out_rate
    ok = lo <= rate <= hi and secs < budget
    report(number, ok, f"{model} die-out {rate:.3f} over {n} animals (need [{lo:.2f}, {hi:.2f}]), {secs:.1f}s (budget {budget}s)")
    return ok


def test_c01_cdasap_extinction():
    r = RateVector(nu=0.00738, mu=0.05969, eta=0.03338, alpha=0.00426)
    assert _die_out(1, "CDAsAp", r, 500, 0.96, 1.0, 10.0, seed=101)


def test_c02_sdasap_persistence():
    r = RateVector(lam=0.0659, mu=0.04538, eta=0.00136, alpha=0.00142)
    assert _die_out(2, "SDAsAp", r, 500, 0.0, 0.02, 30.0, seed=102)


def test_c03_scdas_die_out():
    r = RateVector(lam=0.093, nu=0.079, mu=0.193, eta=0.078)
    assert _die_out(3, "SCDAs", r, 50, 0.14 - 0.15, 0.14 + 0.15, math.inf, seed=103)


def _direct_log_r(current, current_log_post, cand, mv, rates, spec, obs, w):
    log_q = log_proposal_ratio(mv.kind, len(current), len(spec.kinds), current.horizon, w)
    dc = log_path_density(cand, rates, spec)
    lc = log_obs_likelihood(cand, spec, obs) if dc > -math.inf else -math.inf
    if lc == -math.inf:
        return -math.inf
    return dc + lc - current_log_post + log_q


def _obs_for(path, spec, rng, n=5):
    traj = state_trajectory(path, spec)
    times = np.sort(rng.uniform(0, path.horizon, n))
    states = [state_at(traj, t) for t in times]
    sizes = np.array([rng.integers(1, 25) if s.x_total else 0 for s in states])
    ys = np.array([rng.binomial(k, s.x_d / s.x_total) if s.x_total else 0 for k, s in zip(sizes, states)])
    return ObservationSeries("a", times, sizes, ys)


def test_c04_factorization():
    rng = np.random.default_rng(104)
    w = MoveWeights()
    worst, n_done, n_inf = 0.0, 0, 0
    t0 = time.perf_counter()
    per_model = 2000
    for name in MODELS:
        spec = ModelSpec.from_name(name, niche_cap=rng.choice([None, 24]))
        done = 0
        while done < per_model:
            rates = RateVector.from_array(rng.uniform(0.05, 0.4, 5) * spec.active_mask())
            path = simulate_path(rates, spec, PopulationState(4, 3, 2, 2), 5.0, rng)
            obs = _obs_for(path, spec, rng)
            fit_rates = RateVector.from_array(rng.uniform(0.01, 0.5, 5) * spec.active_mask())
            current = log_path_density(path, fit_rates, spec) + log_obs_likelihood(path, spec, obs)
            for _ in range(20):
                try:
                    cand, mv = propose_move(path, w, spec, rng)
                except EmptyPathMove:
                    continue
                f = acceptance_log_ratio(path, cand, mv, fit_rates, spec, obs, w)
                g = _direct_log_r(path, current, cand, mv, fit_rates, spec, obs, w)
                if g == -math.inf:
                    worst = max(worst, 0.0 if f == -math.inf else math.inf)
                    n_inf += 1
                else:
                    worst = max(worst, abs(f - g))
                done += 1
        n_done += done
    secs = time.perf_counter() - t0
    ok = worst < 1e-9 and n_done >= 10_000 and secs < 10.0
    report(4, ok, f"{n_done} proposals over {len(MODELS)} models ({n_inf} impossible), max |factored - direct| = {worst:.2e}, {secs:.1f}s")
    assert ok


def test_c05_prior_reproduction():
    spec = ModelSpec.from_name("SCDAsAp")
    empty = ObservationSeries("none", [], [], [])
    cfg = ChainConfig(iterations=300_300, burn_in=300, thinning=3, seed=105)
    t0 = time.perf_counter()
    worst = (1.0, "")
    n_pass = n_tests = 0
    for label, prior in (("gamma", PriorSpec()), ("uniform", PriorSpec.shared(UniformPrior(0.5)))):
        draws = run_chain([empty], spec, prior=prior, config=cfg, horizon=0.2)
        assert len(draws) == 100_000
        rng = np.random.default_rng(1105)
        for name in spec.rate_names:
            ref = prior[name].sample(rng, 100_000)
            p = stats.ks_2samp(draws.rate(name), ref).pvalue
            n_tests += 1
            n_pass += p > 0.01
            if p < worst[0]:
                worst = (p, f"{label}/{name}")
    secs = time.perf_counter() - t0
    ok = worst[0] > 0.01 and secs < 300
    report(5, ok, f"10^5 kept draws per prior, {n_pass}/{n_tests} rate-prior pairs at p > 0.01, "
              f"smallest KS p = {worst[0]:.3f} ({worst[1]}), {secs:.0f}s")
    assert ok


def _posterior_cdf(prior, k, exposure):
    if isinstance(prior, GammaPrior):
        upper = np.inf
        logf = lambda r: (prior.shape - 1 + k) * np.log(r) - (prior.rate + exposure) * r
        hi = stats.gamma.ppf(1 - 1e-13, prior.shape + k, scale=1 / (prior.rate + exposure))
    else:
        upper = prior.upper
        logf = lambda r: k * np.log(r) - exposure * r
        hi = upper
    mode = max((prior.shape - 1 + k) / (prior.rate + exposure), 1e-12) if isinstance(prior, GammaPrior) else min(k / exposure if exposure else upper, upper)
    ref = logf(max(mode, 1e-300)) if mode > 0 else 0.0
    f = lambda r: math.exp(logf(r) - ref) if r > 0 else 0.0
    z = integrate.quad(f, 0, hi, points=[mode] if 0 < mode < hi else None, limit=200, epsabs=0, epsrel=1e-11)[0]

    def cdf(xs):
        out = np.empty(len(xs))
        acc, prev = 0.0, 0.0
        for i, x in enumerate(xs):
            acc += integrate.quad(f, prev, x, limit=200, epsabs=0, epsrel=1e-10)[0]
            prev = x
            out[i] = acc / z
        return out

    return cdf


def test_c06_conjugate_oracle():
    rng = np.random.default_rng(106)
    spec = ModelSpec.from_name("SCD")
    worst = 0.0
    settings = []
    for i in range(5):
        k = int(rng.integers(0, 40))
        sz = float(rng.uniform(0, 500))
        prior = PriorSpec() if i % 2 == 0 else PriorSpec.shared(UniformPrior(0.5))
        settings.append((k, sz, prior))
        stats_ = SufficientStats(np.array([k, 0, 0, 0, 0]), sz, 1.0)
        draws = np.sort([update_rates(stats_, prior, spec, rng).lam for _ in range(10_000)])
        cdf = _posterior_cdf(prior["lambda"], k, sz)(draws)
        emp = (np.arange(1, draws.size + 1) - 0.5) / draws.size
        worst = max(worst, float(np.max(np.abs(cdf - emp))))
    desc = "; ".join(f"k={k},S={sz:.0f},{p.describe()}" for k, sz, p in settings)
    ok = worst < 0.02
    report(6, ok, f"max QQ deviation {worst:.4f} over 5 settings ({desc})")
    assert ok


def test_c07_synthetic_recovery():
    if not NIGHTLY:
        report(7, None, "nightly only; set HSCFATE_NIGHTLY=1 (hours on one core)")
        pytest.skip("nightly")
    spec = ModelSpec.from_name("SCD")
    truth = RateVector(0.09, 0.08, 0.14)
    reps = int(os.environ.get("HSCFATE_NIGHTLY_REPS", "20"))
    iters = int(os.environ.get("HSCFATE_NIGHTLY_ITERS", "4500"))
    hits = {"lambda": 0, "nu": 0, "both": 0}
    t0 = time.perf_counter()
    for rep in range(reps):
        coh = simulate_cohort(truth, spec, n_animals=6, seed=7000 + rep)
        cfg = ChainConfig(iterations=iters, burn_in=iters // 3, seed=rep)
        draws = run_chain(coh.series, spec, config=cfg, horizon=100.0)
        cov = {}
        for name in ("lambda", "nu"):
            lo, hi = hpd_interval(draws.rate(name), 0.95)
            cov[name] = lo <= truth[name] <= hi
            hits[name] += cov[name]
        hits["both"] += cov["lambda"] and cov["nu"]
        print(f"  rep {rep}: lambda {cov['lambda']} nu {cov['nu']}", flush=True)
    secs = time.perf_counter() - t0
    ok = hits["both"] >= 0.9 * reps
    report(7, ok, f"joint 95% HPD coverage {hits['both']}/{reps} (lambda {hits['lambda']}, nu {hits['nu']}), {iters} cycles each, {secs / 60:.0f} min")
    assert ok


def test_c08_harmonic_mean():
    const = log_harmonic_mean(np.full(5000, -123.456))
    a, b, y = 5.0, 2.0, 2
    exact = stats.nbinom.logpmf(y, a, b / (b + 1))
    prior = GammaPrior(a, b)
    rel = []
    for rep in range(20):
        rng = np.random.default_rng(1080 + rep)
        theta = np.array([prior.conditional(y, 1.0, rng) for _ in range(20_000)])
        est = harmonic_mean(stats.poisson.logpmf(y, theta), "toy")
        rel.append(math.exp(est.log_p - exact) - 1)
    worst = max(abs(r) for r in rel)
    ok = const == -123.456 and worst < 0.02
    report(8, ok, f"constant case exact: {const == -123.456}; Poisson-Gamma toy max relative error {worst:.4f} over 20 replicates")
    assert ok


def _oracle_log_density(events, init, horizon, rates, spec):
    """Independent replay plus quadrature of the total event rate."""
    z, x = [init.z_d, init.z_G], [init.x_d, init.x_G]
    r = dict(zip(EventKind, rates.as_array()))
    log_m = 0.0
    breaks = [0.0]
    states = []
    for t, k, lab in events:
        states.append((z[0] + z[1], x[0] + x[1]))
        breaks.append(t)
        if k not in spec.active:
            return -math.inf
        count = x[lab] if k == D else z[lab]
        if count == 0 or r[k] == 0:
            return -math.inf
        log_m += math.log(count * r[k])
        if k == S:
            if spec.niche_cap is None or z[0] + z[1] < spec.niche_cap:
                z[lab] += 1
        elif k == C:
            z[lab] -= 1
            x[lab] += 1
        elif k == D:
            x[lab] -= 1
        elif k == As:
            x[lab] += 1
        else:
            z[lab] -= 1
    states.append((z[0] + z[1], x[0] + x[1]))
    breaks.append(horizon)
    zr = r[S] + r[C] + r[As] + r[Ap]

    def total_rate(t):
        i = int(np.searchsorted(breaks, t, side="right")) - 1
        zt, xt = states[min(i, len(states) - 1)]
        return zt * zr + xt * r[D]

    exposure = sum(
        integrate.quad(total_rate, a, b)[0] for a, b in zip(breaks[:-1], breaks[1:])
    )
    return log_m - exposure


def test_c09_small_path_oracle():
    rng = np.random.default_rng(109)
    init = PopulationState(1, 1, 1, 0)
    T = 2.0
    worst, n_feasible, n_total = 0.0, 0, 0
    for name, cap in [(m, None) for m in MODELS + ("SCDAsAp",)] + [("SCDAsAp", 2)]:
        spec = ModelSpec.from_name(name, niche_cap=cap)
        rates = RateVector.from_array(rng.uniform(0.1, 0.9, 5) * spec.active_mask())
        choices = [(k, lab) for k in spec.kinds for lab in (0, 1)]
        for n in range(4):
            for skel in itertools.product(choices, repeat=n):
                times = np.sort(rng.uniform(0, T, n))
                events = [(float(t), k, lab) for t, (k, lab) in zip(times, skel)]
                path = Path.from_events(T, init, events)
                got = log_path_density(path, rates, spec)
                want = _oracle_log_density(events, init, T, rates, spec)
                n_total += 1
                if want == -math.inf:
                    worst = max(worst, 0.0 if got == -math.inf else math.inf)
                    continue
                n_feasible += 1
                # the compiled route through the sufficient statistics as well
                st = sufficient_stats(path, spec)
                r = rates.as_array()
                log_c = _log_counts(path, spec)
                via_stats = log_c + float(np.dot(st.counts, np.log(np.where(st.counts > 0, r, 1.0)))) \
                    - (r[S] + r[C] + r[As] + r[Ap]) * st.z_exposure - r[D] * st.x_exposure
                worst = max(worst, abs(got - want), abs(via_stats - want))
    ok = worst < 1e-10
    report(9, ok, f"{n_feasible} feasible of {n_total} paths with <= 3 events, max |density - oracle| = {worst:.2e}")
    assert ok


def _log_counts(path, spec):
    total = 0.0
    for (_, _, st), ev in zip(state_trajectory(path, spec), path.events):
        total += math.log(st.x(ev.label) if ev.kind == D else st.z(ev.label))
    return total


def test_c10_fit_determinism_across_workers(tmp_path):
    spec = ModelSpec.from_name("SCD")
    coh = simulate_cohort(RateVector(0.09, 0.08, 0.14), spec, n_animals=6, seed=110,
                          sched=ScheduleSpec(horizon=30.0))
    coh.to_csv(tmp_path / "cohort.csv")
    outs = []
    for workers in (1, 8):
        out = tmp_path / f"w{workers}"
        code = cli_main(["fit", "--data", str(tmp_path / "cohort.csv"), "--model", "SCD", "--iters", "60",
                         "--burnin", "20", "--seed", "7", "--workers", str(workers), "--out", str(out)])
        assert code == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    same = names == sorted(p.name for p in outs[1].iterdir()) and all(
        (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names
    )
    report(10, same, f"fit outputs byte-identical for 1 vs 8 workers: {', '.join(names)}")
    assert same
