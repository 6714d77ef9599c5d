import itertools
import math

import numpy as np
import pytest
from scipy import linalg

from hscfate import (
    ChainConfig,
    ChainDraws,
    ChainState,
    EmptyPathMove,
    EventKind,
    GammaPrior,
    InitializationFailure,
    Label,
    ModelSpec,
    Move,
    MoveWeights,
    ObservationSeries,
    Path,
    PathEvent,
    PopulationState,
    PriorSpec,
    RateVector,
    SufficientStats,
    UniformPrior,
    acceptance_log_ratio,
    log_obs_likelihood,
    log_path_density,
    propose_move,
    run_chain,
    ScheduleSpec,
    simulate_cohort,
    simulate_path,
    state_at,
    state_trajectory,
    state_update_sweep,
    sufficient_stats,
    update_rates,
)
from hscfate.mcmc import log_proposal_ratio

from conftest import MODELS, random_path, random_rates

S, C, D, As, Ap = EventKind
d, G = Label
W = MoveWeights()


def _random_obs(path, rng, n=6):
    times = np.sort(rng.uniform(0, path.horizon, n))
    sizes = rng.integers(0, 20, n)
    traj = state_trajectory(path, ModelSpec.from_name("SCDAsAp"))
    states = [state_at(traj, t) for t in times]
    sizes = np.array([n if s.x_total else 0 for n, s in zip(sizes, states)])
    ys = [rng.binomial(n, s.x_d / s.x_total) if s.x_total else 0 for n, s in zip(sizes, states)]
    return ObservationSeries("a", times, sizes, np.array(ys))


class TestSufficientStats:
    def test_empty_path(self):
        st = sufficient_stats(Path(5.0, PopulationState(10, 10, 5, 5)), ModelSpec.from_name("SCD"))
        assert np.all(st.counts == 0)
        assert st.z_exposure == pytest.approx(100.0)
        assert st.x_exposure == pytest.approx(50.0)

    def test_single_commitment(self):
        p = Path.from_events(2.0, PopulationState(1, 0, 0, 0), [(1.0, C, d)])
        st = sufficient_stats(p, ModelSpec.from_name("SCD"))
        assert st.counts[C] == 1 and st.counts.sum() == 1
        assert st.z_exposure == pytest.approx(1.0) and st.x_exposure == pytest.approx(1.0)

    def test_matches_trajectory_integration(self, rng):
        spec = ModelSpec.from_name("SCDAsAp")
        path = random_path(spec, rng, horizon=8.0)
        while len(path) < 30:
            path = random_path(spec, rng, horizon=8.0)
        st = sufficient_stats(path, spec)
        traj = state_trajectory(path, spec)
        sz = math.fsum(s.z_total * (b - a) for a, b, s in traj)
        sx = math.fsum(s.x_total * (b - a) for a, b, s in traj)
        assert st.z_exposure == pytest.approx(sz, abs=1e-12)
        assert st.x_exposure == pytest.approx(sx, abs=1e-12)
        assert np.array_equal(st.counts, np.bincount(path.kinds, minlength=5))


class TestUpdateRates:
    def test_conjugate_mean(self):
        spec = ModelSpec.from_name("SCD")
        stats = SufficientStats(np.array([3, 0, 0, 0, 0]), 40.0, 0.0)
        rng = np.random.default_rng(0)
        lam = np.array([update_rates(stats, PriorSpec(), spec, rng).lam for _ in range(20_000)])
        assert lam.mean() == pytest.approx(8 / 90, rel=0.01)
        assert lam.var() == pytest.approx(8 / 90**2, rel=0.05)

    def test_no_data_returns_prior(self):
        spec = ModelSpec.from_name("SCD")
        rng = np.random.default_rng(1)
        mu = np.array([update_rates(SufficientStats(), PriorSpec(), spec, rng).mu for _ in range(20_000)])
        assert mu.mean() == pytest.approx(0.1, rel=0.02)

    def test_uniform_concentrates_at_zero(self):
        rng = np.random.default_rng(2)
        draws = [UniformPrior(0.5).conditional(0, 1e6, rng) for _ in range(1000)]
        assert max(draws) < 1e-4

    def test_uniform_underflow_fallback_stays_in_support(self):
        rng = np.random.default_rng(3)
        # truncated mass far below double precision
        v = [UniformPrior(0.5).conditional(2000, 1e5, rng) for _ in range(50)]
        assert all(0 < x <= 0.5 for x in v)

    def test_inactive_rates_stay_zero(self):
        spec = ModelSpec.from_name("SCD")
        r = update_rates(SufficientStats(), PriorSpec(), spec, np.random.default_rng(0))
        assert r.eta == 0 and r.alpha == 0


class TestPriorSpec:
    def test_parse_shared(self):
        p = PriorSpec.parse("uniform:0,0.5")
        assert all(isinstance(q, UniformPrior) for q in p.priors)
        assert p.describe() == "uniform:0,0.5"

    def test_parse_per_rate(self):
        p = PriorSpec.parse("mu=uniform:0,0.5;eta=gamma:2,10")
        assert p["mu"] == UniformPrior(0.5) and p["eta"] == GammaPrior(2, 10) and p["lambda"] == GammaPrior()

    @pytest.mark.parametrize("text", ["gamma:5", "beta:1,2", "uniform:1,2", "gamma:-1,3"])
    def test_parse_errors(self, text):
        with pytest.raises(ValueError):
            PriorSpec.parse(text)


class TestProposals:
    def test_empty_path_deletion(self):
        with pytest.raises(EmptyPathMove):
            propose_move(Path(5.0), MoveWeights(0.5, 0.5, 0.0), ModelSpec.from_name("SCD"), _FixedRng([0.1, 0.0, 0.0, 0.0]))

    def test_insertion_is_uniform(self):
        spec = ModelSpec.from_name("SCDAs")
        rng = np.random.default_rng(5)
        path = Path(4.0)
        cells = []
        for _ in range(8000):
            try:
                cand, mv = propose_move(path, W, spec, rng)
            except EmptyPathMove:
                continue
            if mv.kind == "insert":
                cells.append((int(mv.event.kind), int(mv.event.label), int(mv.event.time)))
        counts = np.array(list({c: cells.count(c) for c in itertools.product(spec.kinds, (0, 1), range(4))}.values()))
        expected = len(cells) / counts.size
        assert counts.size == 4 * 2 * 4
        assert np.all(np.abs(counts - expected) < 5 * np.sqrt(expected))

    def test_insertion_on_empty_path_ratio(self):
        spec = ModelSpec.from_name("SCDAs")
        w = MoveWeights(0.2, 0.5, 0.3)
        assert log_proposal_ratio("insert", 0, len(spec.kinds), 7.0, w) == pytest.approx(math.log(0.2 / 0.5 * 2 * 4 * 7.0))

    def test_insert_delete_ratios_invert(self):
        w = MoveWeights(0.3, 0.4, 0.3)
        assert log_proposal_ratio("insert", 5, 3, 9.0, w) == pytest.approx(-log_proposal_ratio("delete", 6, 3, 9.0, w))

    def test_shuffle_keeps_kind_and_label(self, rng):
        spec = ModelSpec.from_name("SCD")
        path = random_path(spec, rng)
        for _ in range(200):
            cand, mv = propose_move(path, MoveWeights(0.0, 0.0, 1.0), spec, rng)
            assert len(cand) == len(path)
            assert sorted(zip(cand.kinds, cand.labels)) == sorted(zip(path.kinds, path.labels))


class _FixedRng:
    def __init__(self, u):
        self.u = np.asarray(u, dtype=float)

    def random(self, size=None):
        return self.u[:size] if size else self.u[0]


def _direct(current, cand, mv, rates, spec, obs, w):
    log_q = log_proposal_ratio(mv.kind, len(current), len(spec.kinds), current.horizon, w)
    dc = log_path_density(cand, rates, spec)
    if dc == -math.inf:
        return -math.inf
    lc = log_obs_likelihood(cand, spec, obs)
    if lc == -math.inf:
        return -math.inf
    return dc - log_path_density(current, rates, spec) + lc - log_obs_likelihood(current, spec, obs) + log_q


class TestAcceptanceRatio:
    def test_factorization_matches_direct(self, spec, rng):
        worst = 0.0
        for _ in range(40):
            path = random_path(spec, rng, horizon=6.0)
            obs = _random_obs(path, rng)
            rates = random_rates(spec, rng)
            for _ in range(5):
                try:
                    cand, mv = propose_move(path, W, spec, rng)
                except EmptyPathMove:
                    continue
                f = acceptance_log_ratio(path, cand, mv, rates, spec, obs, W)
                g = _direct(path, cand, mv, rates, spec, obs, W)
                if g == -math.inf:
                    assert f == -math.inf
                else:
                    worst = max(worst, abs(f - g))
        assert worst < 1e-9

    def test_same_time_shuffle_is_zero(self):
        spec = ModelSpec.from_name("SCD")
        path = Path.from_events(5.0, PopulationState(2, 1, 1, 1), [(1.0, C, d), (3.0, D, G)])
        mv = Move("shuffle", 0, path.events[0], 1.0)
        assert acceptance_log_ratio(path, path, mv, RateVector(0.1, 0.2, 0.3), spec, None, W) == 0.0

    def test_within_gap_shuffle_of_null_event_is_zero(self):
        spec = ModelSpec.from_name("SCD", niche_cap=3)
        path = Path.from_events(5.0, PopulationState(2, 1, 1, 1), [(1.0, S, d), (3.0, D, G)])
        cand = Path.from_events(5.0, PopulationState(2, 1, 1, 1), [(2.5, S, d), (3.0, D, G)])
        mv = Move("shuffle", 0, path.events[0], 2.5)
        obs = ObservationSeries.from_records("a", [(2.0, 10, 4), (4.0, 10, 10)])
        val = acceptance_log_ratio(path, cand, mv, RateVector(0.1, 0.2, 0.3), spec, obs, W)
        assert val == pytest.approx(0.0, abs=1e-14)

    def test_within_gap_shuffle_changes_only_exposure(self):
        # moving a commitment later keeps one more cell in compartment 1
        spec = ModelSpec.from_name("SCD")
        r = RateVector(0.1, 0.2, 0.3)
        path = Path.from_events(5.0, PopulationState(2, 1, 1, 1), [(1.0, C, d), (3.0, D, G)])
        cand = Path.from_events(5.0, PopulationState(2, 1, 1, 1), [(2.0, C, d), (3.0, D, G)])
        mv = Move("shuffle", 0, path.events[0], 2.0)
        val = acceptance_log_ratio(path, cand, mv, r, spec, None, W)
        # z exposure +1 cell-week, x exposure -1 clone-week
        assert val == pytest.approx(-(0.1 + 0.2) * 1.0 + 0.3 * 1.0)

    def test_infeasible_candidate(self):
        spec = ModelSpec.from_name("SCD")
        path = Path.from_events(5.0, PopulationState(1, 0, 0, 0), [(1.0, C, d), (2.0, D, d)])
        cand = Path.from_events(5.0, PopulationState(1, 0, 0, 0), [(2.0, D, d)])
        mv = Move("delete", 0, path.events[0], None)
        assert acceptance_log_ratio(path, cand, mv, RateVector(0.1, 0.1, 0.1), spec, None, W) == -math.inf

    def test_reversibility_pairing(self, rng):
        spec = ModelSpec.from_name("SCDAs")
        rates = random_rates(spec, rng)
        checked = 0
        for _ in range(300):
            path = random_path(spec, rng, horizon=5.0)
            obs = _random_obs(path, rng)
            cand, mv = propose_move(path, MoveWeights(0.1, 0.8, 0.1), spec, rng)
            if mv.kind != "insert":
                continue
            w = MoveWeights(0.1, 0.8, 0.1)
            fwd = acceptance_log_ratio(path, cand, mv, rates, spec, obs, w)
            if not np.isfinite(fwd):
                continue
            back = Move("delete", mv.index, mv.event, None)
            rev = acceptance_log_ratio(cand, path, back, rates, spec, obs, w)
            assert rev == pytest.approx(-fwd, abs=1e-10)
            checked += 1
        assert checked > 20


class TestSweep:
    def test_zero_moves(self, rng):
        spec = ModelSpec.from_name("SCD")
        path = random_path(spec, rng)
        out, stats = state_update_sweep(path, RateVector(0.1, 0.1, 0.1), spec, None, W, 0, rng)
        assert out == path and stats.proposed.sum() == 0

    def test_pure_death_rates_remove_other_events(self, rng):
        spec = ModelSpec.from_name("SCD")
        path = simulate_path(RateVector(0.3, 0.3, 0.3), spec, horizon=5.0, seed=3)
        assert np.any(path.kinds != D)
        out, _ = state_update_sweep(path, RateVector(mu=0.3), spec, None, W, 20_000, rng)
        assert len(out) > 0 and np.all(out.kinds == D)
        assert out.is_feasible(spec)

    def test_stationary_event_counts_match_enumeration(self):
        """Sweeps at fixed rates, no data, must sample the path prior.

        The exact probability of each event-count class is the sum over
        event skeletons of the integral of the path density over ordered
        times; for a fixed skeleton that integral is an entry of the
        exponential of a bidiagonal matrix.
        """
        spec = ModelSpec.from_name("SCD")
        lam, nu, mu, T = 0.4, 0.6, 0.5, 1.0
        init = PopulationState(1, 0, 0, 0)
        rate = {S: lam, C: nu, D: mu}
        exact = np.zeros(4)
        for n in range(4):
            for kinds in itertools.product((S, C, D), repeat=n):
                z, x = 1, 0
                q, m = [], []
                ok = True
                for k in kinds:
                    q.append(z * (lam + nu) + x * mu)
                    count = x if k == D else z
                    if count == 0:
                        ok = False
                        break
                    m.append(count * rate[k])
                    z, x = {S: (z + 1, x), C: (z - 1, x + 1), D: (z, x - 1)}[k]
                if not ok:
                    continue
                q.append(z * (lam + nu) + x * mu)
                A = np.diag(-np.array(q)) + np.diag(np.ones(n), 1)
                exact[n] += np.prod(m) * linalg.expm(T * A)[0, n]
        rng = np.random.default_rng(11)
        path = Path(T, init)
        r = RateVector(lam, nu, mu)
        n_sweeps = 30_000
        counts = np.empty(n_sweeps, dtype=int)
        for i in range(n_sweeps):
            path, _ = state_update_sweep(path, r, spec, None, W, 10, rng)
            counts[i] = len(path)
        for n in range(4):
            ind = (counts == n).astype(float)
            batches = ind.reshape(100, -1).mean(axis=1)
            se = batches.std(ddof=1) / 10
            assert abs(ind.mean() - exact[n]) < 3 * se + 1e-3, (n, ind.mean(), exact[n])


def _cohort(n=2, horizon=20.0, seed=5):
    spec = ModelSpec.from_name("SCD")
    coh = simulate_cohort(RateVector(0.09, 0.08, 0.14), spec, n_animals=n, seed=seed,
                          sched=ScheduleSpec(horizon=horizon, spacing=4.0))
    return spec, coh.series


class TestRunChain:
    def test_draw_count_and_shapes(self):
        spec, data = _cohort()
        cfg = ChainConfig(iterations=60, burn_in=20, thinning=4, seed=1)
        d = run_chain(data, spec, config=cfg)
        assert len(d) == cfg.n_kept == 10
        assert d.rates.shape == (10, 1, 5) and d.loglik.shape == (10, 2)
        assert np.all(d.rates[:, 0, 3:] == 0)
        assert np.all(np.isfinite(d.loglik))

    def test_worker_independence(self):
        spec, data = _cohort(3)
        cfg = ChainConfig(iterations=30, burn_in=5, seed=2)
        a = run_chain(data, spec, config=cfg, workers=1)
        b = run_chain(data, spec, config=cfg, workers=3)
        assert list(a.jsonl_lines()) == list(b.jsonl_lines())

    def test_resume_matches_uninterrupted(self, tmp_path):
        spec, data = _cohort()
        full = run_chain(data, spec, config=ChainConfig(iterations=40, burn_in=10, seed=4))
        first = run_chain(data, spec, config=ChainConfig(iterations=25, burn_in=10, seed=4))
        first.final_state.save(tmp_path / "ck.json")
        state = ChainState.load(tmp_path / "ck.json")
        rest = run_chain(data, spec, config=ChainConfig(iterations=40, burn_in=10, seed=4), state=state)
        assert np.array_equal(np.concatenate([first.rates, rest.rates]), full.rates)
        assert np.array_equal(np.concatenate([first.loglik, rest.loglik]), full.loglik)

    def test_per_animal_pooling(self):
        spec, data = _cohort(3)
        d = run_chain(data, spec, config=ChainConfig(iterations=20, burn_in=5, seed=3), pooling="per_animal")
        assert d.rates.shape == (15, 3, 5)
        assert d.rate("lambda").shape == (15, 3)
        assert not np.array_equal(d.rate("lambda", 0), d.rate("lambda", 1))

    def test_fixed_rates(self):
        spec, data = _cohort()
        d = run_chain(data, spec, config=ChainConfig(iterations=15, burn_in=5, seed=3), fixed_rates={"nu": 0.05})
        assert np.all(d.rate("nu") == 0.05)
        with pytest.raises(ValueError):
            run_chain(data, spec, config=ChainConfig(iterations=15, burn_in=5), fixed_rates={"eta": 0.05})

    def test_jsonl_round_trip(self, tmp_path):
        spec, data = _cohort()
        d = run_chain(data, spec, config=ChainConfig(iterations=15, burn_in=5, seed=3))
        d.to_jsonl(tmp_path / "d.jsonl")
        back = ChainDraws.from_jsonl(tmp_path / "d.jsonl", spec.name)
        assert np.array_equal(back.rates, d.rates) and np.array_equal(back.loglik, d.loglik)
        assert back.animal_ids == d.animal_ids

    def test_initialization_failure(self):
        spec = ModelSpec.from_name("SCD")
        obs = ObservationSeries.from_records("a", [(2.0, 5, 2)])
        cfg = ChainConfig(iterations=5, burn_in=1, init_attempts=2)
        with pytest.raises(InitializationFailure):
            run_chain([obs], spec, config=cfg, initial=PopulationState(0, 0, 0, 0))

    def test_initialization_repair(self):
        # all-d samples late on need every G clone gone, which prior-mean
        # simulation essentially never produces
        spec = ModelSpec.from_name("SCD")
        obs = ObservationSeries.from_records("a", [(30.0, 40, 40), (40.0, 40, 40)])
        cfg = ChainConfig(iterations=5, burn_in=1, init_attempts=3, seed=1)
        d = run_chain([obs], spec, config=cfg, initial=PopulationState(3, 3, 2, 2))
        assert np.all(np.isfinite(d.loglik))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ChainConfig(iterations=10, burn_in=10)
        with pytest.raises(ValueError):
            ChainConfig(thinning=0)
        with pytest.raises(ValueError):
            MoveWeights(0.5, 0.0, 0.5)


def test_calibration_with_data():
    # rates drawn from the prior, data simulated from them: the rank of the
    # truth among posterior draws is uniform when the sampler is exact
    from scipy import stats

    from hscfate import ScheduleSpec, simulate_cohort

    spec = ModelSpec.from_name("SCD")
    prior = PriorSpec()
    ranks = {n: [] for n in spec.rate_names}
    for rep in range(30):
        rng = np.random.default_rng(rep)
        truth = RateVector.from_array(prior["lambda"].sample(rng, 5) * spec.active_mask())
        coh = simulate_cohort(truth, spec, sched=ScheduleSpec(horizon=10.0, sample_size=30), n_animals=1, seed=rep)
        d = run_chain(coh.series, spec, config=ChainConfig(iterations=1100, burn_in=100, thinning=10, seed=rep),
                      horizon=10.0)
        for n in spec.rate_names:
            ranks[n].append(np.mean(d.rate(n) < truth[n]))
    for n, r in ranks.items():
        assert stats.kstest(r, "uniform").pvalue > 1e-3, n
