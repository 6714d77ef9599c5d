"""Forward simulation of paths, sampled observations and virtual cohorts."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .model import (
    DEFAULT_INITIAL,
    ModelSpec,
    ObservationSeries,
    Path,
    PopulationState,
    RateVector,
)

__all__ = [
    "ScheduleSpec",
    "CohortResult",
    "simulate_path",
    "simulate_observations",
    "simulate_cohort",
    "child_rng",
]

_CHUNK = 4096


def child_rng(seed, *key) -> np.random.Generator:
    """Generator for the stream ``key`` under a master integer seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _cap(spec: ModelSpec) -> int:
    return -1 if spec.niche_cap is None else int(spec.niche_cap)


@dataclass(frozen=True)
class ScheduleSpec:
    """When animals are sampled and how many progenitors each sample holds.

    ``spacing`` is a fixed gap in weeks or a ``(low, high)`` range for
    uniform random gaps. ``sample_size`` is a fixed N or a pool of observed
    sizes to resample from.
    """

    horizon: float = 100.0
    spacing: float | tuple = (2.0, 6.0)
    sample_size: int | tuple = 100

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if np.ndim(self.spacing) == 0:
            if self.spacing <= 0:
                raise ValueError("spacing must be positive")
        else:
            lo, hi = self.spacing
            if not 0 < lo <= hi:
                raise ValueError("need 0 < low <= high spacing")
            object.__setattr__(self, "spacing", (float(lo), float(hi)))
        if np.ndim(self.sample_size) == 0:
            if self.sample_size < 0:
                raise ValueError("sample size must be >= 0")
        else:
            pool = tuple(int(n) for n in self.sample_size)
            if not pool or min(pool) < 0:
                raise ValueError("sample size pool must be nonempty and >= 0")
            object.__setattr__(self, "sample_size", pool)

    @classmethod
    def from_observed(cls, series: Sequence[ObservationSeries], **kw) -> "ScheduleSpec":
        """Resample sample sizes from the nonzero sizes of an observed cohort."""
        pool = tuple(int(n) for s in series for n in s.sizes if n > 0)
        return cls(sample_size=pool, **kw)

    def draw_times(self, rng: np.random.Generator) -> np.ndarray:
        if np.ndim(self.spacing) == 0:
            n = int(np.floor(self.horizon / self.spacing + 1e-9))
            return self.spacing * np.arange(1, n + 1)
        lo, hi = self.spacing
        out = []
        t = 0.0
        while True:
            t += rng.uniform(lo, hi)
            if t > self.horizon:
                return np.array(out)
            out.append(t)

    def draw_sizes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if np.ndim(self.sample_size) == 0:
            return np.full(n, int(self.sample_size), dtype=np.int64)
        return rng.choice(np.array(self.sample_size, dtype=np.int64), size=n)


def simulate_path(
    rates: RateVector,
    spec: ModelSpec,
    initial: PopulationState = DEFAULT_INITIAL,
    horizon: float = 100.0,
    seed=None,
) -> Path:
    """Exact event-by-event simulation on ``[0, horizon]``.

    ``seed`` may be anything :func:`numpy.random.default_rng` accepts,
    including a Generator.
    """
    spec.check_rates(rates)
    rng = np.random.default_rng(seed)
    r = rates.as_array()
    state = initial.as_array().copy()
    if spec.niche_cap is not None and state[:2].sum() > spec.niche_cap:
        raise ValueError("initial compartment 1 exceeds the niche cap")
    t = 0.0
    pieces = []
    while True:
        out_t = np.empty(_CHUNK)
        out_k = np.empty(_CHUNK, dtype=np.int64)
        out_l = np.empty(_CHUNK, dtype=np.int64)
        u = rng.random(2 * _CHUNK)
        n, t, _, finished = K.ssa_chunk(state, t, float(horizon), r, _cap(spec), u, out_t, out_k, out_l)
        pieces.append((out_t[:n], out_k[:n], out_l[:n]))
        if finished:
            break
    times, kinds, labels = (np.concatenate(p) for p in zip(*pieces))
    return Path(float(horizon), initial, times, kinds, labels)


def simulate_observations(
    path: Path,
    spec: ModelSpec,
    sched: ScheduleSpec,
    seed=None,
    animal_id: str = "virtual",
) -> ObservationSeries:
    """Binomial d-counts at the scheduled times.

    A sample taken while compartment 2 is empty is recorded as (N=0, Y=0).
    """
    rng = np.random.default_rng(seed)
    times = sched.draw_times(rng)
    times = times[times <= path.horizon]
    sizes = sched.draw_sizes(times.size, rng)
    pre = K.prefix_states(
        np.array(path.times), np.array(path.kinds), np.array(path.labels),
        path.initial.as_array(), _cap(spec),
    )
    # an event exactly at a sample time has already fired
    states = pre[np.searchsorted(path.times, times, side="right")]
    xd, xg = states[:, 2], states[:, 3]
    total = xd + xg
    sizes = np.where(total > 0, sizes, 0)
    p = np.divide(xd, total, out=np.zeros(times.size), where=total > 0)
    counts = rng.binomial(sizes, p)
    return ObservationSeries(animal_id, times, sizes, counts)


@dataclass
class CohortResult:
    paths: list
    series: list
    die_out: np.ndarray
    rates: RateVector | None = None
    spec: ModelSpec | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_animals(self) -> int:
        return len(self.series)

    @property
    def die_out_rate(self) -> float:
        return float(np.mean(self.die_out))

    def to_csv(self, path) -> None:
        """Write the cohort CSV plus a ``<stem>_dieout.csv`` sidecar."""
        from .io import write_cohort

        write_cohort(self, path)


def _die_out(path: Path, spec: ModelSpec, mode: str) -> bool:
    final = K.prefix_states(
        np.array(path.times), np.array(path.kinds), np.array(path.labels),
        path.initial.as_array(), _cap(spec),
    )[-1]
    if mode == "hsc":
        return bool(final[0] + final[1] == 0)
    if mode == "both":
        return bool(final.sum() == 0)
    raise ValueError(f"unknown die-out mode {mode!r}")


def simulate_cohort(
    rates: RateVector,
    spec: ModelSpec,
    initial: PopulationState = DEFAULT_INITIAL,
    sched: ScheduleSpec | None = None,
    n_animals: int = 50,
    seed: int = 0,
    workers: int = 1,
    die_out: str = "hsc",
) -> CohortResult:
    """Simulate independent virtual animals.

    Animal ``i`` draws from streams keyed on ``(i, 0)`` (path) and
    ``(i, 1)`` (sampling) under ``seed``, so results do not depend on
    ``workers``. ``die_out="hsc"`` flags extinction of compartment 1 before
    the horizon; ``"both"`` requires both compartments empty.
    """
    if n_animals < 1:
        raise ValueError("n_animals must be >= 1")
    sched = sched or ScheduleSpec()
    width = max(3, len(str(n_animals)))

    def one(i):
        path = simulate_path(rates, spec, initial, sched.horizon, child_rng(seed, i, 0))
        obs = simulate_observations(
            path, spec, sched, child_rng(seed, i, 1), animal_id=f"virtual_{i + 1:0{width}d}"
        )
        return path, obs, _die_out(path, spec, die_out)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(n_animals)))
    else:
        results = [one(i) for i in range(n_animals)]
    paths, series, flags = zip(*results)
    return CohortResult(
        list(paths), list(series), np.array(flags, dtype=bool), rates, spec,
        meta={"seed": seed, "die_out_mode": die_out, "horizon": sched.horizon},
    )
