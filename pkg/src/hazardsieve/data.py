"""Survival data with sparse, intermittently measured covariates.

Each subject carries a (possibly censored) follow-up time, an event flag
and a list of time-stamped covariate measurements. Datasets are immutable;
every manipulation returns a new object.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class Measurement:
    time: float
    z: tuple

    def __post_init__(self):
        if not (np.isfinite(self.time) and self.time >= 0):
            raise DataError(f"measurement time must be finite and >= 0, got {self.time!r}")
        if not all(np.isfinite(v) for v in self.z):
            raise DataError(f"non-finite covariate value in {self.z!r}")


@dataclass(frozen=True)
class Subject:
    x: float
    delta: bool
    measurements: tuple = ()
    id: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.x) and self.x >= 0):
            raise DataError(f"follow-up time must be finite and >= 0, got {self.x!r}")
        times = [m.time for m in self.measurements]
        if any(b < a for a, b in zip(times, times[1:])):
            raise DataError(f"measurements of subject {self.id!r} are not sorted by time")

    @property
    def times(self) -> np.ndarray:
        return np.array([m.time for m in self.measurements], dtype=float)

    @property
    def zmat(self) -> np.ndarray:
        p = len(self.measurements[0].z) if self.measurements else 0
        return np.array([m.z for m in self.measurements], dtype=float).reshape(len(self.measurements), p)


@dataclass(frozen=True)
class Dataset:
    subjects: tuple
    p: int
    tau: float = field(default=None)

    def __post_init__(self):
        if not self.subjects:
            raise DataError("empty dataset")
        object.__setattr__(self, "subjects", tuple(self.subjects))
        xmax = max(s.x for s in self.subjects)
        if self.tau is None:
            object.__setattr__(self, "tau", float(xmax))
        if not self.tau > 0:
            raise DataError(f"tau must be positive, got {self.tau!r}")
        if xmax > self.tau:
            raise DataError(f"follow-up time {xmax} exceeds tau={self.tau}")
        for s in self.subjects:
            for m in s.measurements:
                if len(m.z) != self.p:
                    raise DataError(f"subject {s.id!r}: expected {self.p} covariates, got {len(m.z)}")
                if m.time > self.tau:
                    raise DataError(f"subject {s.id!r}: measurement at {m.time} after tau={self.tau}")

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def x(self) -> np.ndarray:
        return np.array([s.x for s in self.subjects], dtype=float)

    @property
    def delta(self) -> np.ndarray:
        return np.array([s.delta for s in self.subjects], dtype=bool)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(s.measurements) for s in self.subjects], dtype=int)

    def subset(self, index: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.subjects[i] for i in index), self.p, self.tau)

    def long_arrays(self):
        """Flatten measurements: (subject index, time, z matrix) arrays."""
        counts = self.counts
        subj = np.repeat(np.arange(self.n), counts)
        if counts.sum() == 0:
            return subj, np.zeros(0), np.zeros((0, self.p))
        times = np.concatenate([s.times for s in self.subjects if s.measurements])
        z = np.concatenate([s.zmat for s in self.subjects if s.measurements], axis=0)
        return subj, times, z

    def map_z(self, fn) -> "Dataset":
        """Apply ``fn`` to every covariate vector (returns a new dataset)."""
        subjects = []
        for s in self.subjects:
            ms = tuple(Measurement(m.time, tuple(float(v) for v in fn(np.asarray(m.z)))) for m in s.measurements)
            subjects.append(replace(s, measurements=ms))
        p = len(subjects[0].measurements[0].z) if any(s.measurements for s in subjects) else self.p
        return Dataset(tuple(subjects), p, self.tau)


def from_arrays(x, delta, meas_subject, meas_time, meas_z, tau=None, ids=None) -> Dataset:
    """Build a dataset from flat arrays (measurement rows in any order)."""
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta).astype(bool)
    meas_subject = np.asarray(meas_subject, dtype=int)
    meas_time = np.asarray(meas_time, dtype=float)
    meas_z = np.asarray(meas_z, dtype=float)
    if meas_z.ndim == 1:
        meas_z = meas_z[:, None]
    p = meas_z.shape[1]
    # stable sort keeps file order for tied times
    order = np.lexsort((meas_time, meas_subject))
    meas_subject, meas_time, meas_z = meas_subject[order], meas_time[order], meas_z[order]
    bounds = np.searchsorted(meas_subject, np.arange(len(x) + 1))
    subjects = []
    for i in range(len(x)):
        lo, hi = bounds[i], bounds[i + 1]
        ms = tuple(Measurement(float(meas_time[k]), tuple(float(v) for v in meas_z[k])) for k in range(lo, hi))
        sid = str(ids[i]) if ids is not None else str(i + 1)
        subjects.append(Subject(float(x[i]), bool(delta[i]), ms, sid))
    return Dataset(tuple(subjects), p, tau)


def _read_rows(source) -> list:
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text(encoding="utf-8")
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    return rows


def _num(value: str, what: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise DataError(f"non-numeric {what}: {value!r}") from None
    if not np.isfinite(out):
        raise DataError(f"non-finite {what}: {value!r}")
    return out


def load_dataset(survival_file, longitudinal_file, tau: float | None = None) -> Dataset:
    """Read a dataset from two CSV sources.

    Parameters
    ----------
    survival_file : path, file object or CSV text
        Columns ``id,time,status`` with status in {0, 1}.
    longitudinal_file : path, file object or CSV text
        Columns ``id,obs_time,z1,...,zp``.
    tau : float, optional
        End of study. Defaults to the largest follow-up time.
    """
    surv = _read_rows(survival_file)
    if not surv:
        raise DataError("survival file has no header")
    header = [c.strip() for c in surv[0]]
    if header[:3] != ["id", "time", "status"]:
        raise DataError(f"survival columns must be id,time,status; got {header}")
    body = surv[1:]
    if not body:
        raise DataError("empty dataset")

    ids, x, delta = [], [], []
    for row in body:
        if len(row) < 3:
            raise DataError(f"short survival row: {row}")
        sid = row[0].strip()
        if sid in ids:
            raise DataError(f"duplicate subject id {sid!r}")
        status = _num(row[2], "status")
        if status not in (0.0, 1.0):
            raise DataError(f"status must be 0 or 1, got {row[2]!r}")
        ids.append(sid)
        x.append(_num(row[1], "time"))
        delta.append(status == 1.0)

    long_rows = _read_rows(longitudinal_file)
    if not long_rows:
        raise DataError("longitudinal file has no header")
    lheader = [c.strip() for c in long_rows[0]]
    if lheader[:2] != ["id", "obs_time"] or len(lheader) < 3:
        raise DataError(f"longitudinal columns must be id,obs_time,z1..zp; got {lheader}")
    p = len(lheader) - 2
    index = {sid: i for i, sid in enumerate(ids)}
    msub, mtime, mz = [], [], []
    for row in long_rows[1:]:
        if len(row) != p + 2:
            raise DataError(f"longitudinal row has {len(row)} fields, expected {p + 2}: {row}")
        sid = row[0].strip()
        if sid not in index:
            raise DataError(f"orphan measurement for unknown id {sid!r}")
        msub.append(index[sid])
        mtime.append(_num(row[1], "obs_time"))
        mz.append([_num(v, "covariate") for v in row[2:]])
    mz = np.asarray(mz, dtype=float).reshape(-1, p)
    return from_arrays(x, delta, msub, mtime, mz, tau=tau, ids=ids)


def write_dataset(data: Dataset, survival_path, longitudinal_path) -> None:
    """Write the two-file CSV layout read by :func:`load_dataset` (full precision)."""
    with open(survival_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "time", "status"])
        for s in data.subjects:
            w.writerow([s.id, repr(float(s.x)), int(s.delta)])
    with open(longitudinal_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "obs_time"] + [f"z{k + 1}" for k in range(data.p)])
        for s in data.subjects:
            for m in s.measurements:
                w.writerow([s.id, repr(float(m.time))] + [repr(float(v)) for v in m.z])


@dataclass(frozen=True)
class ValidationReport:
    n: int
    events: int
    mean_measurements: float
    zero_weight_events: tuple
    flags: tuple = ()
    h: float | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "events": self.events,
                "mean_measurements": self.mean_measurements,
                "zero_weight_events": list(self.zero_weight_events),
                "flags": list(self.flags),
            },
            indent=2,
        )


def validate(data: Dataset, h: float | None = None) -> ValidationReport:
    """Summarize a dataset and list events that get no kernel weight at ``h``.

    An event at ``x`` receives weight only from measurements ``r`` with
    ``0 <= x - r < h``.
    """
    events = int(data.delta.sum())
    zero = []
    if h is not None:
        for s in data.subjects:
            if not s.delta:
                continue
            lag = s.x - s.times
            if not np.any((lag >= 0) & (lag < h)):
                zero.append(s.id)
    flags = []
    if events == 0:
        flags.append("no events")
    if np.any(data.counts == 0):
        flags.append("subjects without measurements")
    return ValidationReport(
        n=data.n,
        events=events,
        mean_measurements=float(data.counts.mean()),
        zero_weight_events=tuple(zero),
        flags=tuple(flags),
        h=h,
    )


def recode_competing(data: Dataset, max_followup: float, competing_ids: Iterable[str]) -> Dataset:
    """Keep competing-event subjects in the risk set until ``max_followup``.

    Subjects listed in ``competing_ids`` are censored at ``max_followup``
    rather than at their own event time (subdistribution risk sets).
    """
    competing = {str(c) for c in competing_ids}
    if max_followup < data.x.max():
        raise DataError(f"max_followup={max_followup} is smaller than the largest follow-up {data.x.max()}")
    unknown = competing - {s.id for s in data.subjects}
    if unknown:
        raise DataError(f"unknown competing-event ids: {sorted(unknown)}")
    subjects = tuple(
        replace(s, x=float(max_followup), delta=False) if s.id in competing else s for s in data.subjects
    )
    return Dataset(subjects, data.p, max(data.tau, float(max_followup)))


def rescale_time(data: Dataset) -> Dataset:
    """Divide every time by the largest follow-up time so the study ends at 1."""
    scale = float(data.x.max())
    if not scale > 0:
        raise DataError("cannot rescale: all follow-up times are zero")
    subjects = []
    for s in data.subjects:
        ms = tuple(Measurement(min(m.time / scale, 1.0), m.z) for m in s.measurements)
        subjects.append(replace(s, x=s.x / scale, measurements=ms))
    return Dataset(tuple(subjects), data.p, 1.0)
