"""Pseudo-IPD from digitised Kaplan-Meier curves and from life tables.

The curve inversion follows the usual scheme for published curves: the
risk-table times cut follow-up into intervals; inside each interval the
number censored is estimated, censorings are spread uniformly, and the
events at each drop are the at-risk count times the relative drop.  The
censoring estimate is iterated until the at-risk count at the next table
time is reproduced.

Two refinements make the inversion exact on exact input.  The reference
level for each drop is the survival of the reconstruction so far, so
rounding errors do not accumulate.  And when some integer pair
``(n, d)`` reproduces the drop ratio ``1 - d/n`` to 1e-9, the pair nearest
the uniform-censoring guess is used instead of rounding at the guess;
a small depth-first search keeps those choices consistent with the next
table count.  On noisy digitised input no such pair exists and the plain
rounding rule applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Arm, Dataset, Source, SubjectRecord
from .km import LifeTable

_EXACT_TOL = 1e-9
_MAX_CENSOR_ITER = 100
_MAX_NODES = 20000


class ReconstructionError(ValueError):
    pass


@dataclass(frozen=True)
class DigitizedCurve:
    """Ordered (time, survival) points; ``(0, 1)`` is prepended if absent."""

    times: np.ndarray
    survival: np.ndarray

    def __init__(self, points):
        pts = [(float(t), float(s)) for t, s in points]
        if not pts:
            raise ReconstructionError("empty digitised curve")
        times = np.array([p[0] for p in pts])
        surv = np.array([p[1] for p in pts])
        if np.any(np.diff(times) < 0):
            raise ReconstructionError("digitised curve times must be non-decreasing")
        if np.any((surv < 0) | (surv > 1)):
            raise ReconstructionError("digitised survival outside [0, 1]")
        rises = np.nonzero(np.diff(surv) > 0)[0]
        if rises.size:
            j = rises[0]
            raise ReconstructionError(
                f"survival rises between t={times[j]:g} and t={times[j + 1]:g}"
            )
        if times[0] < 0:
            raise ReconstructionError("negative time in digitised curve")
        if times[0] > 0 or surv[0] < 1:
            times = np.concatenate(([0.0], times))
            surv = np.concatenate(([1.0], surv))
        # one point per time: the lowest value, i.e. the level after any drop
        uniq, first = np.unique(times, return_index=True)
        last = np.append(first[1:], len(times)) - 1
        object.__setattr__(self, "times", uniq)
        object.__setattr__(self, "survival", surv[last])

    @property
    def points(self):
        return list(zip(self.times.tolist(), self.survival.tolist()))

    def steps(self):
        """(time, level after drop) for every strict drop."""
        drop = np.nonzero(np.diff(self.survival) < 0)[0] + 1
        return self.times[drop], self.survival[drop]


@dataclass(frozen=True)
class RiskTable:
    times: np.ndarray
    n_risk: np.ndarray
    total_events: int | None = None

    def __init__(self, times, n_risk, total_events=None):
        times = np.asarray(times, dtype=float)
        n_risk = np.asarray(n_risk, dtype=np.int64)
        if times.size == 0 or times.shape != n_risk.shape:
            raise ReconstructionError("risk table needs matching, non-empty time and count columns")
        if np.any(np.diff(times) <= 0):
            raise ReconstructionError("risk table times must be strictly increasing")
        if np.any(n_risk < 0) or np.any(np.diff(n_risk) > 0):
            raise ReconstructionError("numbers at risk must be non-negative and non-increasing")
        if times[0] != 0:
            raise ReconstructionError("risk table must start at time 0")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "n_risk", n_risk)
        object.__setattr__(self, "total_events", None if total_events is None else int(total_events))


def _exact_candidates(rho, n_lo, n_hi):
    n = np.arange(max(n_lo, 1), n_hi + 1)
    if n.size == 0:
        return n, n
    d = np.rint(n * (1.0 - rho))
    ok = (d >= 1) & (d <= n) & (np.abs((1.0 - d / n) - rho) <= _EXACT_TOL)
    return n[ok], d[ok].astype(np.int64)


class _Interval:
    """Inversion state for one risk-table interval."""

    def __init__(self, index, start, end, n_start, n_end, step_t, step_s):
        self.index = index
        self.start = start
        self.end = end
        self.n_start = n_start
        self.n_end = n_end  # None for the open last interval
        self.step_t = step_t
        self.step_s = step_s

    def describe(self):
        end = "end of follow-up" if self.n_end is None else f"{self.end:g}"
        return f"interval {self.index} [{self.start:g}, {end})"

    def solve(self, s_start, n_censor, exact=True, order="near"):
        """Choose (n_k, d_k) for every drop given ``n_censor`` uniform censorings.

        Returns ``(ns, ds, s_after, n_after_guess)`` or ``None`` if the
        constraints cannot be met.  ``n_after_guess`` is the at-risk count the
        uniform censoring pattern predicts at the interval end.  ``order``
        ranks exact ``(n, d)`` pairs: nearest the uniform-censoring guess
        (searched in a window of ``n_censor + 1`` around it), or smallest or
        largest ``n`` first over the whole feasible range.
        """
        length = self.end - self.start
        if n_censor > 0 and length > 0:
            cens = self.start + length * np.arange(1, n_censor + 1) / (n_censor + 1)
        else:
            cens = np.empty(0)
        floor = 0 if self.n_end is None else self.n_end
        K = len(self.step_t)
        ns = [0] * K
        ds = [0] * K
        budget = [_MAX_NODES]

        def gap_censored(k):
            lo = self.start if k == 0 else self.step_t[k - 1]
            return int(np.sum((cens >= lo) & (cens < self.step_t[k])))

        def rec(k, n_avail, s_cur):
            if k == K:
                if n_avail < floor:
                    return None
                return s_cur, n_avail
            budget[0] -= 1
            if budget[0] < 0:
                return None
            prev = self.start if k == 0 else self.step_t[k - 1]
            guess = n_avail - gap_censored(k)
            if self.step_t[k] == prev:
                lo_n = hi_n = n_avail
            else:
                lo_n, hi_n = 1, n_avail
            guess = min(max(guess, lo_n), hi_n)
            rho = self.step_s[k] / s_cur if s_cur > 0 else 1.0
            options = []
            if rho < 1.0:
                if exact and order == "near":
                    width = n_censor + 1
                    cn, cd = _exact_candidates(rho, max(lo_n, guess - width), min(hi_n, guess + width))
                    rank = np.lexsort((-cn, np.abs(cn - guess)))
                    options = [(int(cn[i]), int(cd[i])) for i in rank]
                elif exact:
                    cn, cd = _exact_candidates(rho, lo_n, hi_n)
                    rank = np.argsort(cn if order == "small" else -cn, kind="stable")
                    options = [(int(cn[i]), int(cd[i])) for i in rank]
                if not options:
                    d = int(round(guess * (1.0 - rho)))
                    options = [(guess, min(max(d, 0), guess))]
            else:
                options = [(guess, 0)]
            for n_k, d_k in options:
                if n_k - d_k < floor:
                    continue
                ns[k], ds[k] = n_k, d_k
                s_next = s_cur * (1.0 - d_k / n_k) if d_k else s_cur
                out = rec(k + 1, n_k - d_k, s_next)
                if out is not None:
                    return out
            return None

        out = rec(0, self.n_start, s_start)
        if out is None:
            return None
        s_after, n_avail = out
        tail_lo = self.step_t[-1] if K else self.start
        n_after_guess = n_avail - int(np.sum(cens >= tail_lo))
        return list(ns), list(ds), s_after, n_avail, n_after_guess


def _spread(lo, hi, m):
    if m <= 0:
        return []
    return [lo + (hi - lo) * (j + 1) / (m + 1) for j in range(m)]


def _solve_closed(iv, s_cur):
    """Default solution for an interval closed by a risk-table count."""
    n_end = iv.n_end
    s_upper = iv.step_s[-1] if iv.step_t else s_cur
    c = max(0, int(round(iv.n_start * s_upper / s_cur - n_end))) if s_cur > 0 else 0
    best = None
    seen = set()
    for _ in range(_MAX_CENSOR_ITER):
        seen.add(c)
        sol = iv.solve(s_cur, c)
        if sol is None:
            if c == 0:
                break
            c = max(0, c - max(1, c // 2))
            if c in seen:
                break
            continue
        err = abs(sol[4] - n_end)
        if best is None or err < best[0]:
            best = (err, c, sol)
        if sol[4] == n_end:
            break
        c = max(0, c + sol[4] - n_end)
        if c in seen:
            break
    if best is None:
        sol = iv.solve(s_cur, 0, exact=False)
        if sol is None:
            raise ReconstructionError(
                f"{iv.describe()}: drops need more events than the risk counts allow "
                f"({iv.n_start} at risk, {n_end} at next time)"
            )
        return 0, sol
    return best[1], best[2]


def _alternatives(iv, s_cur, c_def, sol_def):
    """Event count -> (cost, c, solution) over all censoring counts for one interval."""
    c_max = iv.n_start - (iv.n_end or 0)
    out = {}
    trials = [(c, order) for order in ("near", "small", "large") for c in range(0, c_max + 1)]
    for c, order in trials:
        sol = iv.solve(s_cur, c, order=order)
        if sol is None:
            continue
        cost = abs(c - c_def) + (0 if order == "near" else c_max + 1)
        if sol[2] != sol_def[2]:
            cost += 10 ** 6  # changes the survival reached at the next table time
        d = sum(sol[1])
        if d not in out or cost < out[d][0]:
            out[d] = (cost, c, sol)
    return out


def _match_total(options, target):
    """Pick one option per interval so event counts sum to ``target`` at least cost."""
    best = {0: (0, [])}
    for opts in options:
        nxt = {}
        for tot, (cost, picks) in best.items():
            for d, (c_cost, _, _) in opts.items():
                key = tot + d
                if key > target:
                    continue
                cand = cost + c_cost
                if key not in nxt or cand < nxt[key][0]:
                    nxt[key] = (cand, picks + [d])
        best = nxt
    return best.get(target)


def reconstruct_ipd(curve: DigitizedCurve, risk: RiskTable, arm: Arm | str = Arm.SOC,
                    label: str = "reconstructed") -> Dataset:
    """Pseudo-IPD whose Kaplan-Meier curve follows ``curve``.

    Numbers at risk at the risk-table times are reproduced exactly.  If
    ``risk.total_events`` is given, the censoring counts inside intervals are
    adjusted (fewest changes first) until the event count matches it;
    otherwise nobody is censored after the last table time before the end of
    the curve.
    """
    if len(curve.times) < 2:
        raise ReconstructionError("digitised curve needs at least two points")
    arm = Arm(str(arm).upper()) if not isinstance(arm, Arm) else arm
    step_t, step_s = curve.steps()
    r_t, r_n = risk.times, risk.n_risk
    t_end = float(max(curve.times[-1], r_t[-1]))
    m = len(r_t)

    intervals, starts_s, chosen = [], [], []
    s_cur = 1.0
    for i in range(m):
        start = float(r_t[i])
        last = i == m - 1
        end = t_end if last else float(r_t[i + 1])
        sel = (step_t >= start) & ((step_t < end) if not last else (step_t <= end))
        iv = _Interval(i, start, end, int(r_n[i]), None if last else int(r_n[i + 1]),
                       step_t[sel].tolist(), step_s[sel].tolist())
        if iv.step_t and iv.n_start == 0:
            raise ReconstructionError(f"{iv.describe()}: survival drops with nobody at risk")
        if last:
            c, sol = 0, iv.solve(s_cur, 0)
            if sol is None:
                raise ReconstructionError(f"{iv.describe()}: infeasible drops")
        else:
            c, sol = _solve_closed(iv, s_cur)
        intervals.append(iv)
        starts_s.append(s_cur)
        chosen.append((c, sol))
        s_cur = sol[2]

    if risk.total_events is not None:
        target = risk.total_events
        if sum(sum(sol[1]) for _, sol in chosen) != target:
            options = [_alternatives(iv, s0, c, sol)
                       for iv, s0, (c, sol) in zip(intervals, starts_s, chosen)]
            pick = _match_total(options, target)
            if pick is None:
                raise ReconstructionError(
                    f"{intervals[-1].describe()}: cannot reach total_events={target}"
                )
            chosen = [(opts[d][1], opts[d][2]) for opts, d in zip(options, pick[1])]

    events: list[float] = []
    censored: list[float] = []
    for iv, (c, sol) in zip(intervals, chosen):
        ns, ds = sol[0], sol[1]
        n_run = iv.n_start
        prev = iv.start
        for t_k, n_k, d_k in zip(iv.step_t, ns, ds):
            censored.extend(_spread(prev, t_k, n_run - n_k))
            events.extend([t_k] * d_k)
            n_run = n_k - d_k
            prev = t_k
        if iv.n_end is None:
            # pending uniform censorings after the last drop, the rest at end of follow-up
            length = iv.end - iv.start
            pending = 0
            if c > 0 and length > 0:
                cens_u = iv.start + length * np.arange(1, c + 1) / (c + 1)
                pending = min(int(np.sum(cens_u >= prev)), n_run)
            censored.extend(_spread(prev, iv.end, pending))
            censored.extend([iv.end] * (n_run - pending))
        else:
            if n_run < iv.n_end:
                raise ReconstructionError(f"{iv.describe()}: at-risk count cannot be matched")
            censored.extend(_spread(prev, iv.end, n_run - iv.n_end))

    recs = []
    all_times = [(t, True) for t in events] + [(t, False) for t in censored]
    all_times.sort(key=lambda x: (x[0], not x[1]))
    for j, (t, e) in enumerate(all_times):
        if t <= 0:
            raise ReconstructionError("reconstructed record at time 0")
        recs.append(SubjectRecord(f"r{j + 1}", float(t), e, arm, Source.RECONSTRUCTED, 0.0))
    return Dataset(tuple(recs), label)


def lifetable_to_ipd(table: LifeTable, arm: Arm | str = Arm.SOC,
                     source: Source | str = Source.REGISTRY, label: str = "lifetable") -> Dataset:
    """Expand interval counts into records placed at interval midpoints.

    Subjects still at risk after the last interval are censored at its end.
    """
    arm = Arm(str(arm).upper()) if not isinstance(arm, Arm) else arm
    starts = table.interval_starts
    widths = table.widths()
    recs = []
    j_id = 0
    for j in range(len(table)):
        n, d, c = int(table.n_risk[j]), int(table.n_events[j]), int(table.n_censored[j])
        if d + c > n:
            raise ReconstructionError(f"life-table interval {j}: {d} events + {c} censored > {n} at risk")
        if j + 1 < len(table) and int(table.n_risk[j + 1]) != n - d - c:
            raise ReconstructionError(
                f"life-table interval {j}: {n} - {d} - {c} != {int(table.n_risk[j + 1])} at risk next"
            )
        mid = float(starts[j] + 0.5 * widths[j])
        for e, count in ((True, d), (False, c)):
            for _ in range(count):
                j_id += 1
                recs.append(SubjectRecord(f"l{j_id}", mid, e, arm, Source(source), 0.0))
    remaining = int(table.n_risk[-1] - table.n_events[-1] - table.n_censored[-1])
    end = float(starts[-1] + widths[-1])
    for _ in range(remaining):
        j_id += 1
        recs.append(SubjectRecord(f"l{j_id}", end, False, arm, Source(source), 0.0))
    return Dataset(tuple(recs), label)


def curve_from_km(km_curve) -> DigitizedCurve:
    """Digitised-curve view of an exact product-limit curve."""
    pts = [(0.0, 1.0)] + list(zip(km_curve.times.tolist(), km_curve.survival.tolist()))
    if km_curve.max_time is not None and km_curve.max_time > km_curve.times[-1]:
        pts.append((float(km_curve.max_time), float(km_curve.survival[-1])))
    return DigitizedCurve(pts)


def risk_table_from_ipd(data: Dataset, times, total_events: bool = False) -> RiskTable:
    """Numbers still under follow-up (``entry <= t <= time``) at each of ``times``."""
    times = np.asarray(times, dtype=float)
    n = np.array([int(np.sum((data.entry <= t) & (data.time >= t))) for t in times], dtype=np.int64)
    return RiskTable(times, n, data.n_events if total_events else None)
