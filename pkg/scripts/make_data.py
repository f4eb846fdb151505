"""Regenerate the bundled synthetic datasets in src/survext/data.

All files are synthetic stand-ins with the shapes of the inputs the
package handles: trial IPD for two arms, a registry life table, and a
digitised published curve with its risk table.

    python3 scripts/make_data.py
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from survext.dataset import Arm, Dataset, SubjectRecord, Source, write_ipd
from survext.km import kaplan_meier, life_table
from survext.parametric import ParamVector, simulate
from survext.reconstruct import risk_table_from_ipd

OUT = Path(__file__).resolve().parents[1] / "src" / "survext" / "data"
SEED = 20110630
HEADER = ["synthetic data, generated by scripts/make_data.py", f"seed={SEED}"]


def trial_arm(rng, arm, mu, sigma, n, prefix):
    t, _ = simulate("lognormal", ParamVector(mu=mu, sigma=sigma), n, rng)
    # staggered entry over 12 months, analysis at 48 months, light dropout
    admin = 48.0 - rng.uniform(0.0, 12.0, n)
    admin[: n // 10] = 48.0
    dropout = rng.exponential(1.0 / 0.004, n)
    c = np.minimum(admin, dropout)
    time = np.round(np.minimum(t, c), 3)
    time = np.maximum(time, 0.001)
    event = t <= c
    return [SubjectRecord(f"{prefix}{i + 1:03d}", float(a), bool(e), arm, Source.RCT, 0.0)
            for i, (a, e) in enumerate(zip(time, event))]


def main():
    rng = np.random.default_rng(SEED)
    OUT.mkdir(parents=True, exist_ok=True)
    recs = trial_arm(rng, Arm.SOC, np.log(11.0), 1.1, 251, "S")
    recs += trial_arm(rng, Arm.EXPERIMENTAL, np.log(14.0), 1.25, 251, "E")
    write_ipd(Dataset(tuple(recs)), OUT / "rct.csv", HEADER)

    # registry cohort: 47 patients followed for about 80 months, nearly all died
    t, _ = simulate("lognormal", ParamVector(mu=np.log(12.0), sigma=0.95), 47, rng)
    c = rng.uniform(70.0, 82.0, 47)
    reg = Dataset.from_arrays(np.minimum(t, c), t <= c, source=Source.REGISTRY, prefix="R")
    lt = life_table(reg, 6.0)
    with open(OUT / "registry_lifetable.csv", "w", newline="", encoding="utf-8") as fh:
        for line in HEADER:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_start", "n_risk", "n_events", "n_censored", "survival"])
        for row in zip(lt.interval_starts, lt.n_risk, lt.n_events, lt.n_censored, lt.survival):
            w.writerow([f"{row[0]:g}", int(row[1]), int(row[2]), int(row[3]), f"{row[4]:.6f}"])

    # published curve: digitised to 3 decimals with reading noise, risk every 6 months
    t, _ = simulate("lognormal", ParamVector(mu=np.log(10.0), sigma=1.15), 160, rng)
    c = np.minimum(rng.uniform(30.0, 44.0, 160), rng.exponential(250.0, 160))
    pub = Dataset.from_arrays(np.minimum(t, c), t <= c)
    km = kaplan_meier(pub)
    with open(OUT / "published_curve.csv", "w", newline="", encoding="utf-8") as fh:
        for line in HEADER:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "survival"])
        w.writerow(["0", "1"])
        level, prev_t = 1.0, 0.0
        for tk, sk in zip(km.times, km.survival):
            level = round(min(level, max(0.0, sk + rng.normal(0.0, 0.002))), 3)
            prev_t = max(prev_t, round(tk + rng.normal(0.0, 0.02), 2))
            w.writerow([f"{prev_t:.2f}", f"{level:.3f}"])
    rt = risk_table_from_ipd(pub, np.arange(0.0, 42.0, 6.0), total_events=True)
    with open(OUT / "published_risk.csv", "w", newline="", encoding="utf-8") as fh:
        for line in HEADER:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "n_risk"])
        for a, b in zip(rt.times, rt.n_risk):
            w.writerow([f"{a:g}", int(b)])
        w.writerow(["total_events", rt.total_events])


if __name__ == "__main__":
    main()
