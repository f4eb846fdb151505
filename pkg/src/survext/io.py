"""CSV readers and writers for curves, tables and reports."""

from __future__ import annotations

import csv
import math
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import DataError
from .km import LifeTable, SurvivalCurve
from .reconstruct import DigitizedCurve, RiskTable

BUNDLED = ("rct", "registry_lifetable", "published_curve", "published_risk")


def resolve_path(name: str | Path) -> Path:
    """``@name`` refers to a bundled synthetic dataset; anything else is a path."""
    s = str(name)
    if s.startswith("@"):
        key = s[1:]
        if key not in BUNDLED:
            raise DataError(f"unknown bundled dataset {s!r}; choose from "
                            + ", ".join("@" + b for b in BUNDLED))
        return Path(str(resources.files("survext") / "data" / f"{key}.csv"))
    return Path(s)


def fmt(x) -> str:
    """Stable text form for report numbers."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".10g")


def _rows(path: Path):
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#") and line.strip()]
    return list(csv.reader(lines))


def _number(value, path, row, col):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise DataError(f"{path}: row {row}: non-numeric {col} {value!r}") from None


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence],
              comments: Sequence[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in r])


def read_digitized(path) -> DigitizedCurve:
    path = resolve_path(path)
    rows = _rows(path)
    if not rows or [c.strip() for c in rows[0][:2]] != ["time", "survival"]:
        raise DataError(f"{path}: expected header time,survival")
    pts = [(_number(r[0], path, i, "time"), _number(r[1], path, i, "survival"))
           for i, r in enumerate(rows[1:], start=1)]
    return DigitizedCurve(pts)


def read_risk_table(path) -> RiskTable:
    """``time,n_risk`` rows and an optional ``total_events,<int>`` footer."""
    path = resolve_path(path)
    rows = _rows(path)
    if not rows or [c.strip() for c in rows[0][:2]] != ["time", "n_risk"]:
        raise DataError(f"{path}: expected header time,n_risk")
    times, counts, total = [], [], None
    for i, r in enumerate(rows[1:], start=1):
        if r[0].strip() == "total_events":
            total = int(_number(r[1], path, i, "total_events"))
            continue
        times.append(_number(r[0], path, i, "time"))
        counts.append(int(_number(r[1], path, i, "n_risk")))
    return RiskTable(times, counts, total)


LIFETABLE_HEADER = ["t_start", "n_risk", "n_events", "n_censored", "survival"]


def read_lifetable(path) -> LifeTable:
    path = resolve_path(path)
    rows = _rows(path)
    if not rows or [c.strip() for c in rows[0]] != LIFETABLE_HEADER:
        raise DataError(f"{path}: expected header {','.join(LIFETABLE_HEADER)}")
    cols = list(zip(*[[_number(v, path, i, LIFETABLE_HEADER[j]) for j, v in enumerate(r)]
                      for i, r in enumerate(rows[1:], start=1)]))
    if not cols:
        raise DataError(f"{path}: empty life table")
    return LifeTable(np.array(cols[0]), np.array(cols[1]), np.array(cols[2]),
                     np.array(cols[3]), np.array(cols[4]))


def write_lifetable(path, table: LifeTable, comments=()) -> None:
    rows = zip(table.interval_starts, table.n_risk, table.n_events, table.n_censored,
               table.survival)
    write_csv(path, LIFETABLE_HEADER, rows, comments)


def write_curve(path, curve: SurvivalCurve, comments=()) -> None:
    n = len(curve.times)
    at_risk = curve.at_risk if curve.at_risk is not None else [None] * n
    se = curve.se if curve.se is not None else [None] * n
    write_csv(path, ["time", "survival", "at_risk", "se"],
              zip(curve.times, curve.survival, at_risk, se), comments)


def read_curve(path) -> SurvivalCurve:
    path = resolve_path(path)
    rows = _rows(path)
    if not rows or [c.strip() for c in rows[0]] != ["time", "survival", "at_risk", "se"]:
        raise DataError(f"{path}: expected header time,survival,at_risk,se")
    t, s, n, se = [], [], [], []
    for i, r in enumerate(rows[1:], start=1):
        t.append(_number(r[0], path, i, "time"))
        s.append(_number(r[1], path, i, "survival"))
        n.append(int(_number(r[2], path, i, "at_risk")) if r[2] else 0)
        se.append(_number(r[3], path, i, "se") if r[3] else math.nan)
    return SurvivalCurve(np.array(t), np.array(s), np.array(n), np.array(se))


AUC_HEADER = ["method", "arm", "horizon", "auc", "se", "flags"]
