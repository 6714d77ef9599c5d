"""Dataset CSV input/output, flat config files and run manifests.

Datasets are CSV with the header ``animal_id,week,sample_size,d_count``.
Files written by :func:`write_cohort` start with a ``# horizon = T`` comment
so the observation window survives a round trip even when the last sample
falls before it.
"""
from __future__ import annotations

import csv
import platform
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .model import ObservationSeries

__all__ = [
    "ParseError",
    "ValidationError",
    "Dataset",
    "HEADER",
    "load_dataset",
    "write_dataset",
    "write_cohort",
    "read_config",
    "write_manifest",
    "read_manifest",
]

HEADER = ("animal_id", "week", "sample_size", "d_count")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(ValueError):
    pass


@dataclass
class Dataset:
    series: list
    source: str = ""
    horizon: float = 0.0

    def __post_init__(self):
        ids = [s.animal_id for s in self.series]
        if len(set(ids)) != len(ids):
            raise ValidationError("animal ids must be unique")
        if not self.horizon:
            self.horizon = max((s.last_time for s in self.series), default=0.0)

    def __len__(self) -> int:
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    def __getitem__(self, key):
        if isinstance(key, str):
            for s in self.series:
                if s.animal_id == key:
                    return s
            raise KeyError(key)
        return self.series[key]

    @property
    def animal_ids(self) -> list:
        return [s.animal_id for s in self.series]


def _meta_line(line: str):
    body = line.lstrip("#").strip()
    key, sep, val = body.partition("=")
    return (key.strip(), val.strip()) if sep else None


def load_dataset(path, horizon: float | None = None) -> Dataset:
    """Read and validate a dataset CSV.

    Rows of one animal need not be contiguous; they are ordered by week
    (stable for ties). The horizon is, in order of preference, the
    argument, a ``# horizon = T`` comment, or the latest week.
    """
    records: dict = {}
    file_horizon = None
    header_seen = False
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                kv = _meta_line(line)
                if kv and kv[0] == "horizon":
                    try:
                        file_horizon = float(kv[1])
                    except ValueError:
                        raise ParseError(f"bad horizon {kv[1]!r}", lineno) from None
                continue
            cells = [c.strip() for c in next(csv.reader([line]))]
            if not header_seen:
                if tuple(cells) != HEADER:
                    raise ParseError(f"expected header {','.join(HEADER)}", lineno)
                header_seen = True
                continue
            if len(cells) != 4:
                raise ParseError(f"expected 4 fields, got {len(cells)}", lineno)
            aid, week, n, y = cells
            if not aid:
                raise ParseError("empty animal_id", lineno)
            try:
                week_f = float(week)
                n_i, y_i = int(n), int(y)
            except ValueError:
                raise ParseError(f"cannot parse row {line!r}", lineno) from None
            if not np.isfinite(week_f) or week_f < 0:
                raise ValidationError(f"line {lineno}: week must be a finite nonnegative number")
            if n_i < 0 or y_i < 0:
                raise ValidationError(f"line {lineno}: counts must be nonnegative")
            if y_i > n_i:
                raise ValidationError(f"line {lineno}: d_count {y_i} exceeds sample_size {n_i}")
            records.setdefault(aid, []).append((week_f, n_i, y_i))
    if not header_seen:
        raise ParseError("missing header", None)
    series = [
        ObservationSeries.from_records(aid, sorted(recs, key=lambda r: r[0]))
        for aid, recs in records.items()
    ]
    h = horizon if horizon is not None else file_horizon
    ds = Dataset(series, str(path), float(h) if h is not None else 0.0)
    latest = max((s.last_time for s in series), default=0.0)
    if ds.horizon < latest:
        raise ValidationError(f"horizon {ds.horizon} precedes the last sample at week {latest}")
    return ds


def write_dataset(path, series, horizon: float | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if horizon is not None:
            fh.write(f"# horizon = {float(horizon)!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for s in series:
            for t, n, y in s.records:
                w.writerow([s.animal_id, repr(float(t)), int(n), int(y)])


def write_cohort(cohort, path) -> FsPath:
    """Write a simulated cohort and its ``<stem>_dieout.csv`` sidecar.

    Returns the sidecar path.
    """
    path = FsPath(path)
    write_dataset(path, cohort.series, cohort.meta.get("horizon"))
    side = path.with_name(f"{path.stem}_dieout.csv")
    with open(side, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["animal_id", "died_out"])
        for s, flag in zip(cohort.series, cohort.die_out):
            w.writerow([s.animal_id, int(flag)])
        w.writerow(["ALL", repr(float(np.mean(cohort.die_out)))])
    return side


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment line.

    Keys are normalised to use underscores so that ``n-virtual`` and
    ``n_virtual`` are the same setting.
    """
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep or not key.strip():
                raise ParseError("expected key = value", lineno)
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _versions() -> dict:
    import numba
    import scipy

    from . import __version__

    return {
        "hscfate_version": __version__,
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "numba_version": numba.__version__,
    }


def write_manifest(path, entries: dict) -> None:
    """Write ``key = value`` lines, sorted, with library versions appended."""
    merged = {**entries, **_versions()}
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(merged):
            fh.write(f"{key} = {merged[key]}\n")


def read_manifest(path) -> dict:
    return read_config(path)
