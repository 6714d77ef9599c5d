"""State space, model variants, path density and observation likelihood.

The hidden process has two compartments. Compartment 1 holds stem cells
(``z``), compartment 2 holds committed clones (``x``). Every cell carries one
of two neutral labels, ``d`` or ``G``, and the two labelled populations evolve
as independent copies of the same process.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from functools import cached_property
from enum import IntEnum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "EventKind",
    "Label",
    "ModelSpec",
    "RateVector",
    "PopulationState",
    "PathEvent",
    "Path",
    "ObservationSeries",
    "InfeasibleEvent",
    "InfeasiblePath",
    "DEFAULT_INITIAL",
    "apply_event",
    "state_trajectory",
    "state_at",
    "log_path_density",
    "log_obs_likelihood",
]


class InfeasibleEvent(ValueError):
    """Event cannot fire from the given state."""


class InfeasiblePath(ValueError):
    """Replaying a path hits an infeasible event."""


class EventKind(IntEnum):
    S = 0  # symmetric division, lambda
    C = 1  # commitment, nu
    D = 2  # clonal death, mu
    As = 3  # asymmetric division, eta
    Ap = 4  # apoptosis, alpha

    @property
    def rate_name(self) -> str:
        return RATE_NAMES[self]

    @property
    def acts_on_clones(self) -> bool:
        return self is EventKind.D


RATE_NAMES = ("lambda", "nu", "mu", "eta", "alpha")
LONG_NAMES = (
    "SymmetricDivision",
    "Commitment",
    "ClonalDeath",
    "AsymmetricDivision",
    "Apoptosis",
)


class Label(IntEnum):
    d = 0
    G = 1

    def swapped(self) -> "Label":
        return Label(1 - self)


@dataclass(frozen=True)
class ModelSpec:
    """Which events are active, plus an optional niche cap on compartment 1."""

    active: frozenset
    niche_cap: int | None = None

    def __post_init__(self):
        active = frozenset(EventKind(k) for k in self.active)
        object.__setattr__(self, "active", active)
        if EventKind.D not in active:
            raise ValueError("clonal death (D) must be active in every model")
        has_sc = EventKind.S in active and EventKind.C in active
        if not (has_sc or EventKind.As in active):
            raise ValueError(
                "model needs S and C together, or As, to feed compartment 2"
            )
        if self.niche_cap is not None and self.niche_cap < 1:
            raise ValueError("niche_cap must be a positive integer")

    @classmethod
    def from_name(cls, name: str, niche_cap: int | None = None) -> "ModelSpec":
        """Parse names such as ``"SCDAs"`` or ``"CDAsAp"``."""
        kinds = []
        i = 0
        while i < len(name):
            two = name[i : i + 2]
            if two in ("As", "Ap"):
                kinds.append(EventKind[two])
                i += 2
            elif name[i] in "SCD":
                kinds.append(EventKind[name[i]])
                i += 1
            else:
                raise ValueError(f"cannot parse model name {name!r} at {name[i:]!r}")
        if len(set(kinds)) != len(kinds):
            raise ValueError(f"repeated event in model name {name!r}")
        return cls(frozenset(kinds), niche_cap)

    @property
    def name(self) -> str:
        return "".join(k.name for k in self.kinds)

    @property
    def kinds(self) -> tuple:
        """Active kinds in canonical order S, C, D, As, Ap."""
        return tuple(k for k in EventKind if k in self.active)

    @property
    def rate_names(self) -> tuple:
        return tuple(k.rate_name for k in self.kinds)

    def active_mask(self) -> np.ndarray:
        return np.array([k in self.active for k in EventKind])

    def check_rates(self, rates: "RateVector") -> None:
        arr = rates.as_array()
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError(f"rates must be finite and nonnegative: {rates}")
        inactive = arr[~self.active_mask()]
        if np.any(inactive != 0):
            raise ValueError(f"inactive events of {self.name} must have rate 0")


@dataclass(frozen=True)
class RateVector:
    """Per-cell (or per-clone) event rates, in events per week."""

    lam: float = 0.0
    nu: float = 0.0
    mu: float = 0.0
    eta: float = 0.0
    alpha: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.lam, self.nu, self.mu, self.eta, self.alpha], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "RateVector":
        a = [float(v) for v in arr]
        return cls(*a)

    @classmethod
    def from_mapping(cls, values: dict) -> "RateVector":
        """Build from ``{"lambda": .., "nu": ..}``; missing rates are 0."""
        arr = np.zeros(5)
        for key, val in values.items():
            arr[RATE_NAMES.index(key)] = float(val)
        return cls.from_array(arr)

    def to_mapping(self) -> dict:
        return dict(zip(RATE_NAMES, self.as_array().tolist()))

    def restricted(self, spec: ModelSpec) -> "RateVector":
        return RateVector.from_array(self.as_array() * spec.active_mask())

    def __getitem__(self, kind) -> float:
        if isinstance(kind, str):
            kind = RATE_NAMES.index(kind)
        return float(self.as_array()[int(kind)])


@dataclass(frozen=True)
class PopulationState:
    z_d: int = 0
    z_G: int = 0
    x_d: int = 0
    x_G: int = 0

    def __post_init__(self):
        if min(self.z_d, self.z_G, self.x_d, self.x_G) < 0:
            raise ValueError(f"negative count in {self}")

    @property
    def z_total(self) -> int:
        return self.z_d + self.z_G

    @property
    def x_total(self) -> int:
        return self.x_d + self.x_G

    def z(self, label) -> int:
        return self.z_d if Label(label) is Label.d else self.z_G

    def x(self, label) -> int:
        return self.x_d if Label(label) is Label.d else self.x_G

    def swapped(self) -> "PopulationState":
        return PopulationState(self.z_G, self.z_d, self.x_G, self.x_d)

    def as_array(self) -> np.ndarray:
        return np.array([self.z_d, self.z_G, self.x_d, self.x_G], dtype=np.int64)


DEFAULT_INITIAL = PopulationState(10, 10, 5, 5)


class PathEvent(NamedTuple):
    time: float
    kind: EventKind
    label: Label


@dataclass(frozen=True, eq=False)
class Path:
    """Latent event history on ``[0, horizon]``.

    Events are stored as parallel arrays sorted by time. Construction checks
    ordering and range only; feasibility is a separate question (see
    :meth:`is_feasible`) because infeasible paths are legitimate inputs to the
    density.
    """

    horizon: float
    initial: PopulationState = DEFAULT_INITIAL
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    kinds: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    labels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=np.float64)
        kinds = np.ascontiguousarray(self.kinds, dtype=np.int64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if not (times.shape == kinds.shape == labels.shape) or times.ndim != 1:
            raise ValueError("times, kinds and labels must be 1-d and equal length")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if times.size:
            if np.any(np.diff(times) <= 0):
                raise ValueError("event times must be strictly increasing")
            if times[0] <= 0 or times[-1] >= self.horizon:
                raise ValueError("event times must lie strictly inside (0, horizon)")
            if kinds.min() < 0 or kinds.max() > 4 or labels.min() < 0 or labels.max() > 1:
                raise ValueError("bad event kind or label code")
        for arr in (times, kinds, labels):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_events(
        cls,
        horizon: float,
        initial: PopulationState = DEFAULT_INITIAL,
        events: Iterable = (),
    ) -> "Path":
        """Build from ``(time, kind, label)`` triples in any order."""
        evs = sorted((float(t), int(k), int(lab)) for t, k, lab in events)
        if not evs:
            return cls(horizon, initial)
        t, k, lab = zip(*evs)
        return cls(horizon, initial, np.array(t), np.array(k), np.array(lab))

    @cached_property
    def events(self) -> tuple:
        kinds, labels = tuple(EventKind), tuple(Label)
        return tuple(
            PathEvent(t, kinds[k], labels[lab])
            for t, k, lab in zip(self.times.tolist(), self.kinds.tolist(), self.labels.tolist())
        )

    def __len__(self) -> int:
        return int(self.times.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Path):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.initial == other.initial
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.kinds, other.kinds)
            and np.array_equal(self.labels, other.labels)
        )

    def swapped_labels(self) -> "Path":
        return Path(self.horizon, self.initial.swapped(), self.times, self.kinds, 1 - self.labels)

    def is_feasible(self, spec: ModelSpec) -> bool:
        try:
            state_trajectory(self, spec)
        except InfeasiblePath:
            return False
        return True


@dataclass(frozen=True)
class ObservationSeries:
    """Sampled d-counts for one animal: rows of (week, sample size, d count)."""

    animal_id: str
    times: np.ndarray
    sizes: np.ndarray
    d_counts: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        n = np.asarray(self.sizes, dtype=np.int64)
        y = np.asarray(self.d_counts, dtype=np.int64)
        if not (t.shape == n.shape == y.shape) or t.ndim != 1:
            raise ValueError("times, sizes and d_counts must be 1-d and equal length")
        if t.size and (np.any(np.diff(t) < 0) or t[0] < 0):
            raise ValueError(f"{self.animal_id}: times must be nonnegative and nondecreasing")
        if np.any(n < 0) or np.any(y < 0) or np.any(y > n):
            raise ValueError(f"{self.animal_id}: need 0 <= d_count <= sample_size")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "sizes", n)
        object.__setattr__(self, "d_counts", y)

    @classmethod
    def from_records(cls, animal_id: str, records: Sequence) -> "ObservationSeries":
        records = list(records)
        if not records:
            return cls(animal_id, np.empty(0), np.empty(0), np.empty(0))
        t, n, y = zip(*records)
        return cls(animal_id, np.array(t), np.array(n), np.array(y))

    @property
    def records(self) -> list:
        return list(zip(self.times.tolist(), self.sizes.tolist(), self.d_counts.tolist()))

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def last_time(self) -> float:
        return float(self.times[-1]) if self.times.size else 0.0

    def fractions(self) -> tuple:
        """Times and d-fractions of records with a nonzero sample."""
        keep = self.sizes > 0
        return self.times[keep], self.d_counts[keep] / self.sizes[keep]


def apply_event(
    state: PopulationState, event: PathEvent, spec: ModelSpec
) -> PopulationState:
    """Return the state after ``event``.

    At the niche cap a symmetric division leaves the state unchanged (one
    daughter dies immediately).
    """
    kind = event.kind if type(event.kind) is EventKind else EventKind(event.kind)
    label = event.label if type(event.label) is Label else Label(event.label)
    if kind not in spec.active:
        raise InfeasibleEvent(f"{kind.name} is not active in {spec.name}")
    z = [state.z_d, state.z_G]
    x = [state.x_d, state.x_G]
    if kind is EventKind.D:
        if x[label] <= 0:
            raise InfeasibleEvent(f"no {label.name}-clone to die")
        x[label] -= 1
    else:
        if z[label] <= 0:
            raise InfeasibleEvent(f"no {label.name}-cell for {kind.name}")
        if kind is EventKind.S:
            if spec.niche_cap is None or z[0] + z[1] < spec.niche_cap:
                z[label] += 1
        elif kind is EventKind.C:
            z[label] -= 1
            x[label] += 1
        elif kind is EventKind.As:
            x[label] += 1
        else:
            z[label] -= 1
    return PopulationState(z[0], z[1], x[0], x[1])


def state_trajectory(path: Path, spec: ModelSpec) -> list:
    """Constant-state intervals ``[(start, end, state), ...]`` of a path."""
    state = path.initial
    if spec.niche_cap is not None and state.z_total > spec.niche_cap:
        raise InfeasiblePath("initial state exceeds the niche cap")
    out = []
    t_prev = 0.0
    for i, ev in enumerate(path.events):
        out.append((t_prev, ev.time, state))
        try:
            state = apply_event(state, ev, spec)
        except InfeasibleEvent as exc:
            raise InfeasiblePath(f"event {i} at t={ev.time}: {exc}") from exc
        t_prev = ev.time
    out.append((t_prev, path.horizon, state))
    return out


def state_at(trajectory: list, t: float) -> PopulationState:
    """State at time ``t``; an event exactly at ``t`` has already fired."""
    starts = [seg[0] for seg in trajectory]
    i = bisect.bisect_right(starts, t) - 1
    return trajectory[max(i, 0)][2]


def log_path_density(path: Path, rates: RateVector, spec: ModelSpec) -> float:
    """Log density of the whole event history under ``rates``.

    Each event contributes the log of its channel intensity, the acting
    label's count times the rate; the survival term uses total counts.
    Infeasible paths, and events whose rate is zero, give ``-inf``.
    """
    try:
        traj = state_trajectory(path, spec)
    except InfeasiblePath:
        return -math.inf
    r = rates.as_array() * spec.active_mask()
    z_rate = r[EventKind.S] + r[EventKind.C] + r[EventKind.As] + r[EventKind.Ap]
    total = 0.0
    for (start, end, state), ev in zip(traj, path.events + (None,)):
        total -= (state.z_total * z_rate + state.x_total * r[EventKind.D]) * (end - start)
        if ev is None:
            continue
        count = state.x(ev.label) if ev.kind is EventKind.D else state.z(ev.label)
        intensity = count * r[ev.kind]
        if intensity <= 0:
            return -math.inf
        total += math.log(intensity)
    return total


def _log_binom(n: int, y: int, p: float) -> float:
    if n == 0:
        return 0.0
    if (p == 0.0 and y > 0) or (p == 1.0 and y < n):
        return -math.inf
    out = math.lgamma(n + 1) - math.lgamma(y + 1) - math.lgamma(n - y + 1)
    if y:
        out += y * math.log(p)
    if n - y:
        out += (n - y) * math.log1p(-p)
    return out


def log_obs_likelihood(path: Path, spec: ModelSpec, obs: ObservationSeries) -> float:
    """Binomial log likelihood of the d-counts given the clone composition."""
    if len(obs) and obs.times[-1] > path.horizon:
        raise ValueError("observation after the path horizon")
    try:
        traj = state_trajectory(path, spec)
    except InfeasiblePath:
        return -math.inf
    total = 0.0
    for t, n, y in obs.records:
        if n == 0:
            continue
        st = state_at(traj, t)
        if st.x_total == 0:
            return -math.inf
        total += _log_binom(n, y, st.x_d / st.x_total)
        if total == -math.inf:
            return total
    return total
