#!/usr/bin/env python3
"""Generate the shipped synthetic family-study example dataset.

Mimics the structure of a population-based matched case-control family study
of age at disease onset: 437 matched sets, one relative (the proband's
mother) per family, a single binary covariate (early first full-term
pregnancy), proband ages restricted to 22-44, mothers observed to at most
age 76.  Times are ages in years; the generating baseline is
Lambda0(t) = 0.0016 t with frailty variance 0.9 and log hazard ratio -0.45.

Deterministic; rerunning reproduces data/synthetic_family_study.csv exactly.
"""

import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from frailtycc.bootstrap import philox_rng
from frailtycc.data import Dataset, FamilyRecord, MatchedSet, Subject, save_csv, validate

N_SETS = 437
BETA = -0.45
THETA = 0.9
RATE = 0.0016  # baseline hazard per year
PRO_Z_P = 0.35
REL_Z_P = 0.22


def draw_onset(rng, omega, z):
    # onset hazard is zero before age 18 (generating Lambda0(t) = RATE*(t-18)+)
    return 18.0 + rng.exponential(1.0 / (omega * RATE * math.exp(BETA * z)))


def make_family(rng, kind, match_age=None):
    shape = 1.0 / THETA
    while True:
        omega = rng.gamma(shape, THETA)
        z0 = float(rng.random() < PRO_Z_P)
        onset = draw_onset(rng, omega, z0)
        if kind == "case":
            censor = rng.uniform(22.0, 44.0)
            if onset <= censor and onset >= 22.0:
                proband = Subject(onset, 1, (z0,))
                break
        else:
            if onset > match_age:
                proband = Subject(match_age, 0, (z0,))
                break
    zm = float(rng.random() < REL_Z_P)
    m_onset = draw_onset(rng, omega, zm)
    m_censor = rng.uniform(proband.time + 18.0, 76.0)
    mother = Subject(min(m_onset, m_censor), int(m_onset <= m_censor), (zm,))
    return FamilyRecord(proband, (mother,))


def main():
    rng = philox_rng(20240311, 7, 0)
    sets = []
    for _ in range(N_SETS):
        case = make_family(rng, "case")
        control = make_family(rng, "control", match_age=case.proband.time)
        sets.append(MatchedSet(case, control))
    tau = max(
        s.time
        for ms in sets
        for fam in (ms.case_family, ms.control_family)
        for s in (fam.proband, *fam.relatives)
    )
    ds = Dataset(tuple(sets), p=1, tau=tau)
    assert validate(ds) == []
    events = sum(
        fam.relatives[0].event
        for ms in ds.matched_sets
        for fam in (ms.case_family, ms.control_family)
    )
    out = Path(__file__).resolve().parents[1] / "data" / "synthetic_family_study.csv"
    out.parent.mkdir(exist_ok=True)
    save_csv(ds, out)
    print(f"wrote {out} ({ds.n_sets} sets, {events} relative events, tau={ds.tau:.1f})")


if __name__ == "__main__":
    main()
