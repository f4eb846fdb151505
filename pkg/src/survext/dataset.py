"""Survival datasets: records, CSV ingest, tail trimming and registry blending."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class Arm(str, enum.Enum):
    SOC = "SOC"
    EXPERIMENTAL = "EXPERIMENTAL"


class Source(str, enum.Enum):
    RCT = "RCT"
    REGISTRY = "REGISTRY"
    RECONSTRUCTED = "RECONSTRUCTED"


class DataError(ValueError):
    """Raised for malformed input files and invalid records."""


class BlendError(ValueError):
    pass


@dataclass(frozen=True)
class SubjectRecord:
    """One right-censored, possibly left-truncated observation (times in months)."""

    id: str
    time: float
    event: bool
    arm: Arm = Arm.SOC
    source: Source = Source.RCT
    entry_time: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.time) and math.isfinite(self.entry_time)):
            raise DataError(f"record {self.id!r}: non-finite time")
        if self.entry_time < 0:
            raise DataError(f"record {self.id!r}: entry_time {self.entry_time} < 0")
        if not self.time > self.entry_time:
            raise DataError(
                f"record {self.id!r}: time {self.time} must exceed entry_time {self.entry_time}"
            )


@dataclass(frozen=True)
class Dataset:
    records: tuple[SubjectRecord, ...]
    label: str = ""
    _arrays: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def _cache(self):
        if self._arrays is None:
            arrays = {
                "time": np.array([r.time for r in self.records], dtype=float),
                "event": np.array([r.event for r in self.records], dtype=bool),
                "entry": np.array([r.entry_time for r in self.records], dtype=float),
            }
            for v in arrays.values():
                v.setflags(write=False)
            object.__setattr__(self, "_arrays", arrays)
        return self._arrays

    @property
    def time(self) -> np.ndarray:
        return self._cache()["time"]

    @property
    def event(self) -> np.ndarray:
        return self._cache()["event"]

    @property
    def entry(self) -> np.ndarray:
        return self._cache()["entry"]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def filter_arm(self, arm: Arm | str | None) -> "Dataset":
        if arm is None:
            return self
        arm = Arm(str(arm).upper())
        return Dataset(tuple(r for r in self.records if r.arm == arm), self.label)

    def with_source(self, source: Source | str) -> "Dataset":
        source = Source(source)
        return Dataset(tuple(replace(r, source=source) for r in self.records), self.label)

    def __add__(self, other: "Dataset") -> "Dataset":
        return Dataset(self.records + other.records, self.label or other.label)

    @classmethod
    def from_arrays(cls, time, event, entry=None, arm=Arm.SOC, source=Source.RCT,
                    label="", prefix="s") -> "Dataset":
        time = np.asarray(time, dtype=float)
        event = np.asarray(event, dtype=bool)
        entry = np.zeros_like(time) if entry is None else np.asarray(entry, dtype=float)
        recs = tuple(
            SubjectRecord(f"{prefix}{i + 1}", float(t), bool(e), Arm(arm), Source(source), float(s))
            for i, (t, e, s) in enumerate(zip(time, event, entry))
        )
        return cls(recs, label)


@dataclass(frozen=True)
class LongTermAnchor:
    """External survival point S(t_obs) = s_obs with variance var_obs and power alpha."""

    t_obs: float
    s_obs: float
    var_obs: float
    alpha: float = 1.0

    def __post_init__(self):
        if not self.t_obs > 0:
            raise ValueError("anchor t_obs must be positive")
        if not 0 < self.s_obs < 1:
            raise ValueError("anchor s_obs must lie in (0, 1)")
        if not self.var_obs > 0:
            raise ValueError("anchor var_obs must be positive")
        if not 0 <= self.alpha <= 2:
            raise ValueError("anchor alpha must lie in [0, 2]")

    @property
    def precision(self) -> float:
        return (1.0 / self.var_obs) ** self.alpha


DEFAULT_SCHEMA = {"id": "id", "time": "time", "event": "event", "arm": "arm",
                  "entry_time": "entry_time"}


def _iter_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        yield from csv.DictReader(lines)


def load_ipd(path: str | Path, schema: Mapping[str, str] | None = None,
             source: Source | str = Source.RCT, label: str | None = None) -> Dataset:
    """Read an IPD CSV with header ``id,time,event,arm[,entry_time]``.

    ``schema`` maps the logical column names to the file's headers.  Lines
    starting with ``#`` are skipped.  Errors name the 1-based data row.
    """
    path = Path(path)
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update(schema)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    records = []
    rows = _iter_rows(path)
    for i, row in enumerate(rows, start=1):
        if i == 1:
            missing = [k for k in ("id", "time", "event", "arm") if cols[k] not in row]
            if missing:
                raise DataError(f"{path}: missing column(s) {', '.join(cols[k] for k in missing)}")
        where = f"{path}: row {i}"
        try:
            time = float(row[cols["time"]])
        except (TypeError, ValueError):
            raise DataError(f"{where}: non-numeric time {row[cols['time']]!r}") from None
        raw_event = (row[cols["event"]] or "").strip()
        if raw_event not in ("0", "1"):
            raise DataError(f"{where}: event must be 0 or 1, got {raw_event!r}")
        raw_arm = (row[cols["arm"]] or "").strip().upper()
        try:
            arm = Arm(raw_arm)
        except ValueError:
            raise DataError(f"{where}: unknown arm label {row[cols['arm']]!r}") from None
        entry_raw = row.get(cols["entry_time"])
        try:
            entry = float(entry_raw) if entry_raw not in (None, "") else 0.0
        except ValueError:
            raise DataError(f"{where}: non-numeric entry_time {entry_raw!r}") from None
        try:
            records.append(SubjectRecord(row[cols["id"]], time, raw_event == "1", arm,
                                         Source(source), entry))
        except DataError as exc:
            raise DataError(f"{where}: {exc}") from None
    return Dataset(tuple(records), label if label is not None else path.stem)


def write_ipd(data: Dataset, path: str | Path, header_lines: Iterable[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "time", "event", "arm", "entry_time"])
        for r in data.records:
            w.writerow([r.id, repr(float(r.time)), int(r.event), r.arm.value,
                        repr(float(r.entry_time))])


def cut_time(data: Dataset, fraction: float) -> float:
    if not len(data):
        raise ValueError("cannot trim an empty dataset")
    return (1.0 - fraction) * float(data.time.max())


def trim_tail(data: Dataset, fraction: float, delete: bool = False) -> Dataset:
    """Remove the last ``fraction`` of follow-up time.

    Records observed past ``t_cut = (1 - fraction) * max(time)`` are re-censored
    at ``t_cut`` (or dropped when ``delete`` is true); records entering at or
    after ``t_cut`` are always dropped.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    if fraction == 0:
        return data
    t_cut = cut_time(data, fraction)
    out = []
    for r in data.records:
        if r.entry_time >= t_cut:
            continue
        if r.time > t_cut:
            if delete:
                continue
            r = replace(r, time=t_cut, event=False)
        out.append(r)
    return Dataset(tuple(out), data.label)


def blend(rct: Dataset, registry: Dataset, join_time: float) -> Dataset:
    """Append registry records that reach past ``join_time``, left-truncated there."""
    if join_time < 0:
        raise ValueError("join_time must be non-negative")
    if not len(rct) and not len(registry):
        raise BlendError("both datasets are empty")
    extra = []
    for r in registry.records:
        if r.time > join_time:
            extra.append(replace(r, entry_time=max(r.entry_time, join_time)))
    if not len(rct) and not extra:
        raise BlendError(f"no registry record extends past join time {join_time}")
    return Dataset(rct.records + tuple(extra), rct.label or registry.label)


def summarize(data: Dataset) -> dict:
    return {
        "n": len(data),
        "events": data.n_events,
        "max_time": float(data.time.max()) if len(data) else 0.0,
    }


def concat(datasets: Sequence[Dataset], label: str = "") -> Dataset:
    recs: tuple = ()
    for d in datasets:
        recs += d.records
    return Dataset(recs, label)
