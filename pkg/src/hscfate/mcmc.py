"""Gibbs sampler over rates and latent paths.

Rates are updated from their conjugate conditionals given the paths; each
animal's path is updated by reversible-jump moves (delete, insert, shuffle a
single event) with the data likelihood in the acceptance ratio.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special

from . import _kernels as K
from .model import (
    DEFAULT_INITIAL,
    RATE_NAMES,
    EventKind,
    Label,
    ModelSpec,
    ObservationSeries,
    Path,
    PathEvent,
    PopulationState,
    RateVector,
)
from .simulate import child_rng, simulate_path

__all__ = [
    "GammaPrior",
    "UniformPrior",
    "PriorSpec",
    "MoveWeights",
    "SufficientStats",
    "Move",
    "SweepStats",
    "ChainConfig",
    "ChainState",
    "ChainDraws",
    "EmptyPathMove",
    "InitializationFailure",
    "sufficient_stats",
    "update_rates",
    "propose_move",
    "log_proposal_ratio",
    "acceptance_log_ratio",
    "state_update_sweep",
    "run_chain",
]

# stream tags for child_rng keys
_INIT, _SWEEP, _RATES, _REPAIR = 1, 2, 3, 4
_MOVE_NAMES = ("delete", "insert", "shuffle")


class EmptyPathMove(Exception):
    """Deletion or shuffle proposed on a path with no events."""


class InitializationFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class GammaPrior:
    shape: float = 5.0
    rate: float = 50.0

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("gamma prior needs shape, rate > 0")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    def logpdf(self, x):
        from scipy import stats

        return stats.gamma.logpdf(x, self.shape, scale=1.0 / self.rate)

    def conditional(self, count: int, exposure: float, rng) -> float:
        return rng.gamma(self.shape + count, 1.0 / (self.rate + exposure))

    def __str__(self):
        return f"gamma:{self.shape:g},{self.rate:g}"


@dataclass(frozen=True)
class UniformPrior:
    upper: float = 0.5

    def __post_init__(self):
        if self.upper <= 0:
            raise ValueError("uniform prior needs upper > 0")

    @property
    def mean(self) -> float:
        return self.upper / 2

    def sample(self, rng, size=None):
        return rng.uniform(0.0, self.upper, size)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= 0) & (x <= self.upper), -np.log(self.upper), -np.inf)

    def conditional(self, count: int, exposure: float, rng) -> float:
        """Gamma(count + 1, exposure) truncated to (0, upper), by inverse CDF."""
        shape = count + 1.0
        v = rng.random()
        if exposure <= 0:
            return self.upper * v ** (1.0 / shape)
        mass = special.gammainc(shape, exposure * self.upper)
        if mass > 1e-280:
            return float(special.gammaincinv(shape, v * mass) / exposure)
        # truncated mass underflows: invert the log density on a fine grid
        grid = np.linspace(0.0, self.upper, 8193)[1:]
        logf = count * np.log(grid) - exposure * grid
        cdf = np.cumsum(np.exp(logf - logf.max()))
        return float(np.interp(v * cdf[-1], cdf, grid))

    def __str__(self):
        return f"uniform:0,{self.upper:g}"


def parse_prior(text: str):
    """``"gamma:5,50"`` or ``"uniform:0,0.5"``."""
    name, _, args = text.strip().partition(":")
    vals = [float(v) for v in args.split(",")] if args else []
    name = name.lower()
    if name == "gamma" and len(vals) == 2:
        return GammaPrior(*vals)
    if name == "uniform" and len(vals) == 2:
        if vals[0] != 0:
            raise ValueError("uniform priors must start at 0")
        return UniformPrior(vals[1])
    raise ValueError(f"cannot parse prior {text!r}")


@dataclass(frozen=True)
class PriorSpec:
    """One prior per rate, indexed by :class:`EventKind`."""

    priors: tuple = (GammaPrior(),) * 5

    @classmethod
    def shared(cls, prior) -> "PriorSpec":
        return cls((prior,) * 5)

    @classmethod
    def parse(cls, text: str) -> "PriorSpec":
        """Parse ``"gamma:5,50"`` (same for every rate) or
        ``"lambda=gamma:5,50;mu=uniform:0,0.5"`` with unnamed rates left at
        Gamma(5, 50)."""
        if "=" not in text:
            return cls.shared(parse_prior(text))
        priors = list(cls().priors)
        for part in text.split(";"):
            if part.strip():
                key, _, val = part.partition("=")
                priors[RATE_NAMES.index(key.strip())] = parse_prior(val)
        return cls(tuple(priors))

    def __getitem__(self, kind):
        if isinstance(kind, str):
            return self.priors[RATE_NAMES.index(kind)]
        return self.priors[int(kind)]

    def means(self, spec: ModelSpec) -> RateVector:
        arr = np.array([p.mean for p in self.priors]) * spec.active_mask()
        return RateVector.from_array(arr)

    def sample(self, spec: ModelSpec, rng) -> RateVector:
        arr = np.array([p.sample(rng) for p in self.priors]) * spec.active_mask()
        return RateVector.from_array(arr)

    def describe(self) -> str:
        names = {str(p) for p in self.priors}
        if len(names) == 1:
            return names.pop()
        return ";".join(f"{n}={p}" for n, p in zip(RATE_NAMES, self.priors))


@dataclass(frozen=True)
class MoveWeights:
    delete: float = 1 / 3
    insert: float = 1 / 3
    shuffle: float = 1 / 3

    def __post_init__(self):
        w = self.as_array()
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("move weights must be nonnegative and sum to 1")
        if (self.delete == 0) != (self.insert == 0):
            raise ValueError("deletion and insertion must both be possible or both off")

    def as_array(self) -> np.ndarray:
        return np.array([self.delete, self.insert, self.shuffle], dtype=float)


@dataclass(frozen=True)
class SufficientStats:
    """Event counts per kind and total exposures of both compartments."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros(5, dtype=np.int64))
    z_exposure: float = 0.0
    x_exposure: float = 0.0

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        return SufficientStats(
            self.counts + other.counts,
            self.z_exposure + other.z_exposure,
            self.x_exposure + other.x_exposure,
        )

    def exposure_for(self, kind) -> float:
        return self.x_exposure if EventKind(kind) is EventKind.D else self.z_exposure


def _cap(spec: ModelSpec) -> int:
    return -1 if spec.niche_cap is None else int(spec.niche_cap)


def _arrays(path: Path):
    # kernels need writable arrays of one consistent type
    return np.array(path.times), np.array(path.kinds), np.array(path.labels)


_EMPTY_OBS = (np.empty(0), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0))


def _obs_arrays(obs: ObservationSeries | None):
    if obs is None or len(obs) == 0:
        return _EMPTY_OBS
    n, y = obs.sizes, obs.d_counts
    const = special.gammaln(n + 1) - special.gammaln(y + 1) - special.gammaln(n - y + 1)
    return np.array(obs.times), np.array(n), np.array(y), const


def sufficient_stats(path: Path, spec: ModelSpec) -> SufficientStats:
    from .model import InfeasiblePath

    ok, counts, _, sz, sx, _ = K.path_totals(
        *_arrays(path), path.initial.as_array(), path.horizon, _cap(spec), *_EMPTY_OBS, -np.inf
    )
    if not ok:
        raise InfeasiblePath("path is infeasible")
    return SufficientStats(counts, sz, sx)


def update_rates(
    stats: SufficientStats, prior: PriorSpec, spec: ModelSpec, rng
) -> RateVector:
    """Draw every active rate from its conditional given the path statistics."""
    out = np.zeros(5)
    for kind in spec.kinds:
        out[kind] = prior[kind].conditional(int(stats.counts[kind]), stats.exposure_for(kind), rng)
    return RateVector.from_array(out)


@dataclass(frozen=True)
class Move:
    """A proposal: ``kind`` is delete/insert/shuffle, ``index`` the event
    position in the current path (insert: position in the candidate),
    ``event`` the event moved and ``new_time`` its new time, if any."""

    kind: str
    index: int
    event: PathEvent
    new_time: float | None


def log_proposal_ratio(move: str, n_current: int, n_kinds: int, horizon: float, weights: MoveWeights) -> float:
    """log q(current | candidate) - log q(candidate | current)."""
    two_mt = 2.0 * n_kinds * horizon
    if move == "insert":
        return math.log(weights.delete / weights.insert * two_mt / (n_current + 1))
    if move == "delete":
        return math.log(weights.insert / weights.delete * n_current / two_mt)
    return 0.0


def propose_move(path: Path, weights: MoveWeights, spec: ModelSpec, rng):
    """Propose a single-event change of ``path``.

    Returns ``(candidate, move)``. Raises :class:`EmptyPathMove` when a
    deletion or shuffle is drawn for an empty path; the caller treats this
    as a rejection. Exact time ties are redrawn.
    """
    active = np.array(spec.kinds, dtype=np.int64)
    arrs = _arrays(path)
    while True:
        u = rng.random(4)
        valid, mv, kind, skip, has_ins, ins_t, ins_k, ins_l, start, t0, _ = K.propose(
            *arrs, u, weights.as_array(), active, float(path.horizon)
        )
        name = _MOVE_NAMES[mv]
        if valid:
            break
        if len(path) == 0 and name != "insert":
            raise EmptyPathMove(name)
    cand = Path(path.horizon, path.initial, *K.materialise(*arrs, skip, has_ins, ins_t, ins_k, ins_l))
    if name == "insert":
        ev = PathEvent(float(ins_t), EventKind(int(ins_k)), Label(int(ins_l)))
        return cand, Move(name, int(start), ev, float(ins_t))
    return cand, Move(name, int(skip), path.events[skip], float(ins_t) if has_ins else None)


def _move_params(current: Path, move: Move):
    if move.kind == "insert":
        skip, has_ins, t_new = -1, True, move.event.time
        t0 = t_new
    elif move.kind == "delete":
        skip, has_ins, t_new = move.index, False, 0.0
        t0 = float(current.times[skip])
    else:
        skip, has_ins, t_new = move.index, True, move.new_time
        t0 = min(float(current.times[skip]), t_new)
    start = int(np.searchsorted(current.times, t0))
    return start, t0, skip, has_ins, t_new


def acceptance_log_ratio(
    current: Path,
    candidate: Path,
    move: Move,
    rates: RateVector,
    spec: ModelSpec,
    obs: ObservationSeries | None,
    weights: MoveWeights,
) -> float:
    """Log Metropolis-Hastings-Green ratio for a proposed single-event move.

    Computed in factored form: change in log acting counts, plus or minus the
    log rate of the moved event, minus the rate-weighted change in exposure,
    plus the change in data log likelihood and the log proposal ratio. The
    Jacobian is 1. The candidate is replayed from ``move`` (it must be the
    path :func:`propose_move` returned with it).
    """
    if len(candidate) != len(current) + {"insert": 1, "delete": -1}.get(move.kind, 0):
        raise ValueError("candidate does not match the move")
    log_q = log_proposal_ratio(move.kind, len(current), len(spec.kinds), current.horizon, weights)
    arrs = _arrays(current)
    obs_arrs = _obs_arrays(obs)
    _, *cache = K.build_cache(*arrs, current.initial.as_array(), current.horizon, _cap(spec), *obs_arrs, -np.inf)
    start, t0, skip, has_ins, t_new = _move_params(current, move)
    ev = move.event
    return float(
        K.factored_log_ratio(
            *arrs, *cache, start, t0, skip, has_ins, t_new, int(ev.kind), int(ev.label),
            _MOVE_NAMES.index(move.kind), int(ev.kind), log_q,
            rates.as_array() * spec.active_mask(), current.horizon, _cap(spec), *obs_arrs, -np.inf,
        )
    )


@dataclass
class SweepStats:
    proposed: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))

    def __iadd__(self, other):
        self.proposed += other.proposed
        self.accepted += other.accepted
        return self

    def rates(self) -> dict:
        with np.errstate(invalid="ignore", divide="ignore"):
            r = self.accepted / self.proposed
        return dict(zip(_MOVE_NAMES, r.tolist()))


def _sweep_arrays(arrs, initial, horizon, rates, spec, obs_arrs, weights, uniforms, impossible=-np.inf):
    return K.sweep(
        *arrs, initial, float(horizon), rates * spec.active_mask(),
        np.array(spec.kinds, dtype=np.int64), _cap(spec), *obs_arrs,
        weights.as_array(), uniforms, impossible,
    )


def state_update_sweep(
    path: Path,
    rates: RateVector,
    spec: ModelSpec,
    obs: ObservationSeries | None,
    weights: MoveWeights,
    n_moves: int,
    rng,
) -> tuple:
    """``n_moves`` sequential propose/accept steps. Returns (path, SweepStats)."""
    if n_moves <= 0:
        return path, SweepStats()
    u = rng.random((n_moves, 5))
    t, k, lab, prop, acc = _sweep_arrays(
        _arrays(path), path.initial.as_array(), path.horizon, rates.as_array(), spec,
        _obs_arrays(obs), weights, u,
    )
    return Path(path.horizon, path.initial, t, k, lab), SweepStats(prop, acc)


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 2000
    burn_in: int = 500
    thinning: int = 1
    path_moves_per_cycle: int | None = None
    seed: int = 0
    weights: MoveWeights = MoveWeights()
    prior: PriorSpec = PriorSpec()
    init_attempts: int = 200

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("need iterations > burn_in >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.path_moves_per_cycle is not None and self.path_moves_per_cycle < 1:
            raise ValueError("path_moves_per_cycle must be >= 1")

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thinning))

    def moves_for(self, n_events: int) -> int:
        """Proposals per animal per cycle for a path of ``n_events``.

        The sampler re-evaluates this every burn-in cycle and then freezes
        it: a repetition count that depended on the current path would
        break stationarity.
        """
        if self.path_moves_per_cycle is not None:
            return self.path_moves_per_cycle
        return max(100, 10 * n_events)

    def describe(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.as_array().tolist()
        d["prior"] = self.prior.describe()
        return d

    def hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def resume_key(self) -> str:
        """Hash of every setting except ``iterations``, so a checkpoint can
        seed a longer run of the same chain."""
        d = self.describe()
        d.pop("iterations")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ChainState:
    """Everything needed to continue a chain: the random streams are keyed
    on (seed, cycle), so the seed and next cycle index pin the RNG state."""

    cycle: int
    rates: np.ndarray
    paths: list
    seed: int = 0
    config_hash: str = ""
    moves: list | None = None

    def save(self, path) -> None:
        blob = {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "cycle": self.cycle,
            "rates": self.rates.tolist(),
            "moves": self.moves,
            "paths": [
                {
                    "horizon": p.horizon,
                    "initial": p.initial.as_array().tolist(),
                    "times": p.times.tolist(),
                    "kinds": p.kinds.tolist(),
                    "labels": p.labels.tolist(),
                }
                for p in self.paths
            ],
        }
        with open(path, "w") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path) -> "ChainState":
        with open(path) as fh:
            blob = json.load(fh)
        paths = [
            Path(p["horizon"], PopulationState(*p["initial"]), np.array(p["times"], dtype=float),
                 np.array(p["kinds"], dtype=np.int64), np.array(p["labels"], dtype=np.int64))
            for p in blob["paths"]
        ]
        return cls(
            blob["cycle"], np.array(blob["rates"], dtype=float), paths, blob["seed"],
            blob["config_hash"], blob.get("moves"),
        )


@dataclass
class ChainDraws:
    """Kept draws of a chain.

    ``rates`` has shape (kept, groups, 5): one group when pooled, one per
    animal otherwise. Per-animal arrays have shape (kept, animals).
    """

    iters: np.ndarray
    rates: np.ndarray
    n_events: np.ndarray
    loglik: np.ndarray
    log_density: np.ndarray
    animal_ids: list
    model: str = ""
    pooling: str = "pooled"
    acceptance: SweepStats = field(default_factory=SweepStats)
    meta: dict = field(default_factory=dict)
    final_state: ChainState | None = None

    def __len__(self) -> int:
        return int(self.iters.size)

    def rate(self, name: str, animal: int | None = None) -> np.ndarray:
        """Draws of one rate; per-animal fits need ``animal`` (or get all columns)."""
        col = self.rates[:, :, RATE_NAMES.index(name)]
        if self.pooling == "pooled":
            return col[:, 0]
        return col if animal is None else col[:, animal]

    @property
    def total_loglik(self) -> np.ndarray:
        return self.loglik.sum(axis=1)

    def rate_vectors(self, group: int = 0) -> list:
        return [RateVector.from_array(r) for r in self.rates[:, group, :]]

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.jsonl_lines():
                fh.write(line + "\n")

    def jsonl_lines(self):
        for i in range(len(self)):
            rec = {"iter": int(self.iters[i])}
            if self.pooling == "pooled":
                rec.update(zip(RATE_NAMES, self.rates[i, 0].tolist()))
            animals = []
            for a, aid in enumerate(self.animal_ids):
                entry = {
                    "id": aid,
                    "n_events": int(self.n_events[i, a]),
                    "loglik": float(self.loglik[i, a]),
                    "log_density": float(self.log_density[i, a]),
                }
                if self.pooling != "pooled":
                    entry["rates"] = dict(zip(RATE_NAMES, self.rates[i, a].tolist()))
                animals.append(entry)
            rec["animals"] = animals
            yield json.dumps(rec)

    @classmethod
    def from_jsonl(cls, path, model: str = "", meta: dict | None = None) -> "ChainDraws":
        recs = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    recs.append(json.loads(line))
        if not recs:
            raise ValueError(f"no draws in {path}")
        pooled = "lambda" in recs[0]
        ids = [a["id"] for a in recs[0]["animals"]]
        if pooled:
            rates = np.array([[[r[n] for n in RATE_NAMES]] for r in recs])
        else:
            rates = np.array([[[a["rates"][n] for n in RATE_NAMES] for a in r["animals"]] for r in recs])
        per = lambda key: np.array([[a[key] for a in r["animals"]] for r in recs])
        return cls(
            np.array([r["iter"] for r in recs]), rates, per("n_events"), per("loglik"),
            per("log_density"), ids, model, "pooled" if pooled else "per_animal", meta=dict(meta or {}),
        )


def _group_of(a: int, pooling: str) -> int:
    return 0 if pooling == "pooled" else a


def _apply_fixed(arr: np.ndarray, fixed: dict) -> np.ndarray:
    for name, val in fixed.items():
        arr[..., RATE_NAMES.index(name)] = val
    return arr


def _initial_path(a, series, spec, prior, fixed, initial, horizon, cfg, obs_arrs):
    rates0 = _apply_fixed(prior.means(spec).as_array(), fixed)
    r0 = RateVector.from_array(rates0)
    impossible = -np.inf
    path = None
    for attempt in range(cfg.init_attempts):
        path = simulate_path(r0, spec, initial, horizon, child_rng(cfg.seed, _INIT, a, attempt))
        ok, *_, ll = K.path_totals(*_arrays(path), initial.as_array(), horizon, _cap(spec), *obs_arrs, impossible)
        if ok and np.isfinite(ll):
            return path
    # no simulated path explains the data: push the last one toward it with a
    # finite penalty per impossible record, then require an exact fit
    arrs = _arrays(path)
    for rnd in range(cfg.init_attempts):
        u = child_rng(cfg.seed, _REPAIR, a, rnd).random((cfg.moves_for(arrs[0].size), 5))
        *arrs, _, _ = _sweep_arrays(arrs, initial.as_array(), horizon, rates0, spec, obs_arrs, cfg.weights, u, -1e3)
        ok, *_, ll = K.path_totals(*arrs, initial.as_array(), horizon, _cap(spec), *obs_arrs, impossible)
        if ok and np.isfinite(ll):
            return Path(horizon, initial, *arrs)
    raise InitializationFailure(f"no feasible starting path for animal {series.animal_id!r}")


def run_chain(
    datasets: Sequence[ObservationSeries],
    spec: ModelSpec,
    prior: PriorSpec | None = None,
    config: ChainConfig | None = None,
    pooling: str = "pooled",
    *,
    initial: PopulationState = DEFAULT_INITIAL,
    horizon: float | Sequence[float] | None = None,
    fixed_rates: dict | None = None,
    workers: int = 1,
    state: ChainState | None = None,
) -> ChainDraws:
    """Run the Gibbs sampler.

    Each cycle sweeps every animal's path given the current rates (animals
    run concurrently when ``workers > 1``) and then redraws the rates from
    pooled or per-animal sufficient statistics. Every random stream is keyed
    on (seed, cycle, animal), so the output does not depend on ``workers``.

    ``horizon`` defaults to each animal's last observation time.
    ``fixed_rates`` pins named rates (e.g. ``{"lambda": 0.09}``). ``state``
    resumes from a checkpoint; only cycles from ``state.cycle`` on are run.
    """
    if not datasets:
        raise ValueError("need at least one dataset")
    if pooling not in ("pooled", "per_animal"):
        raise ValueError(f"unknown pooling {pooling!r}")
    cfg = config or ChainConfig()
    if prior is not None:
        cfg = replace(cfg, prior=prior)
    prior = cfg.prior
    fixed = dict(fixed_rates or {})
    for name in fixed:
        if EventKind(RATE_NAMES.index(name)) not in spec.active:
            raise ValueError(f"cannot pin inactive rate {name}")
    n_animals = len(datasets)
    if horizon is None:
        horizons = [s.last_time for s in datasets]
    elif np.ndim(horizon) == 0:
        horizons = [float(horizon)] * n_animals
    else:
        horizons = [float(h) for h in horizon]
    if min(horizons) <= 0:
        raise ValueError("horizon must be positive; pass it explicitly for empty datasets")
    obs_arrs = [_obs_arrays(s) for s in datasets]
    init_arr = initial.as_array()
    mask = spec.active_mask()
    cap = _cap(spec)
    n_groups = 1 if pooling == "pooled" else n_animals

    if state is None:
        start = 0
        paths = [
            _arrays(_initial_path(a, s, spec, prior, fixed, initial, horizons[a], cfg, obs_arrs[a]))
            for a, s in enumerate(datasets)
        ]
        rates = np.tile(_apply_fixed(prior.means(spec).as_array(), fixed), (n_groups, 1))
        moves = None
    else:
        start = state.cycle
        paths = [_arrays(p) for p in state.paths]
        rates = np.array(state.rates, dtype=float)
        moves = list(state.moves) if state.moves is not None else None

    keep = [i for i in range(cfg.burn_in, cfg.iterations, cfg.thinning) if i >= start]
    n_keep = len(keep)
    out_rates = np.empty((n_keep, n_groups, 5))
    out_events = np.empty((n_keep, n_animals), dtype=np.int64)
    out_ll = np.empty((n_keep, n_animals))
    out_dens = np.empty((n_keep, n_animals))
    acceptance = SweepStats()
    z_kinds = [k for k in (EventKind.S, EventKind.C, EventKind.As, EventKind.Ap)]

    def update_path(cycle, a):
        arrs = paths[a]
        n_moves = moves[a] if moves is not None else cfg.moves_for(arrs[0].size)
        u = child_rng(cfg.seed, _SWEEP, cycle, a).random((n_moves, 5))
        r = rates[_group_of(a, pooling)]
        t, k, lab, prop, acc = _sweep_arrays(arrs, init_arr, horizons[a], r, spec, obs_arrs[a], cfg.weights, u)
        totals = K.path_totals(t, k, lab, init_arr, horizons[a], cap, *obs_arrs[a], -np.inf)
        return (t, k, lab), prop, acc, totals

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        slot = 0
        for cycle in range(start, cfg.iterations):
            if moves is None and cycle >= cfg.burn_in:
                moves = [cfg.moves_for(p[0].size) for p in paths]
            if pool is None:
                results = [update_path(cycle, a) for a in range(n_animals)]
            else:
                results = list(pool.map(lambda a: update_path(cycle, a), range(n_animals)))
            stats = []
            for a, (arrs, prop, acc, totals) in enumerate(results):
                paths[a] = arrs
                acceptance.proposed += prop
                acceptance.accepted += acc
                stats.append(SufficientStats(totals[1], totals[3], totals[4]))
            if pooling == "pooled":
                groups = [sum(stats[1:], stats[0])]
            else:
                groups = stats
            for g, st in enumerate(groups):
                new = update_rates(st, prior, spec, child_rng(cfg.seed, _RATES, cycle, g)).as_array()
                rates[g] = _apply_fixed(new, fixed)
            if slot < n_keep and cycle == keep[slot]:
                out_rates[slot] = rates
                for a, (arrs, _, _, totals) in enumerate(results):
                    _, counts, logc, sz, sx, ll = totals
                    r = rates[_group_of(a, pooling)] * mask
                    pos = counts > 0
                    with np.errstate(divide="ignore"):
                        logr = float((np.log(r[pos]) * counts[pos]).sum())
                    z_rate = sum(r[k] for k in z_kinds)
                    out_events[slot, a] = arrs[0].size
                    out_ll[slot, a] = ll
                    out_dens[slot, a] = logc + logr - z_rate * sz - r[EventKind.D] * sx
                slot += 1
    finally:
        if pool is not None:
            pool.shutdown()

    final = ChainState(
        cfg.iterations, rates.copy(),
        [Path(horizons[a], initial, *paths[a]) for a in range(n_animals)],
        cfg.seed, cfg.resume_key(), moves,
    )
    return ChainDraws(
        np.array(keep, dtype=np.int64), out_rates, out_events, out_ll, out_dens,
        [s.animal_id for s in datasets], spec.name, pooling, acceptance,
        meta={"seed": cfg.seed, "config_hash": cfg.hash(), "model": spec.name,
              "pooling": pooling, "fixed_rates": fixed, **cfg.describe()},
        final_state=final,
    )
