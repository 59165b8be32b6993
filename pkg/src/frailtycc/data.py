"""Family / matched-set records, validation, and dataset IO.

A dataset is a list of matched sets; each matched set pairs one case family
(proband failed) with one control family (proband censored at a matching
age).  Subjects carry an observed follow-up time, an event indicator, and a
covariate vector of common length p.

CSV schema (header required), one row per subject:

    set_id, family_role(case|control), subject_role(proband|relative),
    time, event, z1, ..., zp

The CSV carries subjects only; ``tau`` is recovered as the maximum observed
time on load (which is exactly how simulated datasets set it).  The JSON
mirror stores ``tau``, ``s0`` and ``match_tolerance`` explicitly and
round-trips every field bit-exactly.

``FlatData`` is the array layout used by the numerical modules: matched sets
are put into a canonical order (sorted by their full content fingerprint,
stable in the input order) so that estimates are invariant to permutations of
the input sets, then families are laid out [case_0, control_0, case_1, ...].
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError


@dataclass(frozen=True)
class Subject:
    """One subject: observed time, event indicator, covariates."""

    time: float
    event: int
    covariates: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "event", int(self.event))
        object.__setattr__(self, "covariates", tuple(float(z) for z in self.covariates))


@dataclass(frozen=True)
class FamilyRecord:
    """A proband plus at least one relative."""

    proband: Subject
    relatives: tuple[Subject, ...]

    def __post_init__(self):
        object.__setattr__(self, "relatives", tuple(self.relatives))


@dataclass(frozen=True)
class MatchedSet:
    case_family: FamilyRecord
    control_family: FamilyRecord


@dataclass(frozen=True)
class Dataset:
    matched_sets: tuple[MatchedSet, ...]
    p: int
    tau: float
    s0: float | None = None
    match_tolerance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "matched_sets", tuple(self.matched_sets))

    @property
    def n_sets(self) -> int:
        return len(self.matched_sets)

    @property
    def m_max(self) -> int:
        return max(
            len(fam.relatives)
            for ms in self.matched_sets
            for fam in (ms.case_family, ms.control_family)
        )


@dataclass(frozen=True)
class Violation:
    set_index: int
    family: str  # "case" | "control" | "dataset"
    subject: str  # "proband" | "relative[j]" | "-"
    rule: str
    message: str


def _check_subject(v: list[Violation], si: int, fam: str, who: str, s: Subject, p: int, tau: float):
    if not (math.isfinite(s.time) and s.time >= 0.0):
        v.append(Violation(si, fam, who, "time_nonneg", f"time {s.time!r} is not a finite nonnegative real"))
    elif s.time > tau:
        v.append(Violation(si, fam, who, "time_le_tau", f"time {s.time!r} exceeds tau {tau!r}"))
    if s.event not in (0, 1):
        v.append(Violation(si, fam, who, "event_binary", f"event {s.event!r} not in {{0,1}}"))
    if len(s.covariates) != p:
        v.append(Violation(si, fam, who, "covariate_dim", f"covariate length {len(s.covariates)} != p={p}"))
    elif not all(math.isfinite(z) for z in s.covariates):
        v.append(Violation(si, fam, who, "covariate_finite", "covariates contain non-finite values"))


def validate(dataset: Dataset) -> list[Violation]:
    """Check every structural invariant; returns diagnostics, never raises."""
    out: list[Violation] = []
    for si, ms in enumerate(dataset.matched_sets):
        for fam_name, fam in (("case", ms.case_family), ("control", ms.control_family)):
            _check_subject(out, si, fam_name, "proband", fam.proband, dataset.p, dataset.tau)
            if len(fam.relatives) < 1:
                out.append(Violation(si, fam_name, "-", "has_relatives", "family has no relatives"))
            for j, rel in enumerate(fam.relatives):
                _check_subject(out, si, fam_name, f"relative[{j}]", rel, dataset.p, dataset.tau)
            if dataset.s0 is not None and fam.proband.time < dataset.s0:
                out.append(
                    Violation(si, fam_name, "proband", "proband_ge_s0",
                              f"proband time {fam.proband.time!r} below s0 {dataset.s0!r}")
                )
        if ms.case_family.proband.event != 1:
            out.append(Violation(si, "case", "proband", "case_proband_event",
                                 "case proband must have event=1"))
        if ms.control_family.proband.event != 0:
            out.append(Violation(si, "control", "proband", "control_proband_censored",
                                 "control proband must be censored (event=0)"))
        gap = abs(ms.case_family.proband.time - ms.control_family.proband.time)
        if gap > dataset.match_tolerance:
            out.append(Violation(si, "dataset", "-", "match_tolerance",
                                 f"proband time gap {gap!r} exceeds tolerance {dataset.match_tolerance!r}"))
    return out


# ---------------------------------------------------------------------------
# CSV / JSON serialization
# ---------------------------------------------------------------------------

_BASE_COLUMNS = ["set_id", "family_role", "subject_role", "time", "event"]


def _fmt(x: float) -> str:
    return repr(float(x))


def save_csv(dataset: Dataset, path) -> None:
    cols = _BASE_COLUMNS + [f"z{i + 1}" for i in range(dataset.p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for si, ms in enumerate(dataset.matched_sets):
            for fam_name, fam in (("case", ms.case_family), ("control", ms.control_family)):
                for role, subj in [("proband", fam.proband)] + [
                    ("relative", r) for r in fam.relatives
                ]:
                    w.writerow(
                        [si, fam_name, role, _fmt(subj.time), subj.event]
                        + [_fmt(z) for z in subj.covariates]
                    )


def load_csv(path, s0: float | None = None, match_tolerance: float = 0.0) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: no records") from None
        header = [c.strip() for c in header]
        for col in _BASE_COLUMNS:
            if col not in header:
                raise DataFormatError(f"{path}: missing column {col!r}")
        z_cols = [c for c in header if c.startswith("z")]
        expect_p = len(z_cols)
        for i, c in enumerate(z_cols):
            if c != f"z{i + 1}":
                raise DataFormatError(f"{path}: covariate columns must be z1..zp, found {c!r}")
        idx = {c: header.index(c) for c in _BASE_COLUMNS}
        z_idx = [header.index(c) for c in z_cols]

        # group rows by set id in file order
        order: list[str] = []
        groups: dict[str, list[tuple[int, str, str, Subject]]] = {}
        for ln, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{ln}: expected {len(header)} fields, got {len(row)}")
            try:
                time = float(row[idx["time"]])
                event = int(row[idx["event"]])
                covs = tuple(float(row[j]) for j in z_idx)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{ln}: {exc}") from None
            fam_role = row[idx["family_role"]].strip()
            subj_role = row[idx["subject_role"]].strip()
            if fam_role not in ("case", "control"):
                raise DataFormatError(f"{path}:{ln}: family_role must be case|control, got {fam_role!r}")
            if subj_role not in ("proband", "relative"):
                raise DataFormatError(f"{path}:{ln}: subject_role must be proband|relative, got {subj_role!r}")
            sid = row[idx["set_id"]].strip()
            if sid not in groups:
                groups[sid] = []
                order.append(sid)
            groups[sid].append((ln, fam_role, subj_role, Subject(time, event, covs)))

    if not order:
        raise DataFormatError(f"{path}: no records")

    sets = []
    for sid in order:
        fams: dict[str, dict[str, list]] = {
            "case": {"proband": [], "relatives": []},
            "control": {"proband": [], "relatives": []},
        }
        for ln, fam_role, subj_role, subj in groups[sid]:
            key = "proband" if subj_role == "proband" else "relatives"
            fams[fam_role][key].append((ln, subj))
        built = {}
        for fam_role in ("case", "control"):
            probands = fams[fam_role]["proband"]
            if len(probands) != 1:
                raise DataFormatError(
                    f"{path}: set {sid!r} has {len(probands)} {fam_role} probands, expected 1"
                )
            rels = [s for _, s in fams[fam_role]["relatives"]]
            if not rels:
                raise DataFormatError(f"{path}: set {sid!r} {fam_role} family has no relatives")
            built[fam_role] = FamilyRecord(probands[0][1], tuple(rels))
        sets.append(MatchedSet(built["case"], built["control"]))

    tau = max(
        s.time
        for ms in sets
        for fam in (ms.case_family, ms.control_family)
        for s in (fam.proband, *fam.relatives)
    )
    return Dataset(tuple(sets), p=expect_p, tau=tau, s0=s0, match_tolerance=match_tolerance)


def _subject_to_dict(s: Subject) -> dict:
    return {"time": s.time, "event": s.event, "covariates": list(s.covariates)}


def _subject_from_dict(d: dict) -> Subject:
    return Subject(d["time"], d["event"], tuple(d["covariates"]))


def save_json(dataset: Dataset, path) -> None:
    doc = {
        "p": dataset.p,
        "tau": dataset.tau,
        "s0": dataset.s0,
        "match_tolerance": dataset.match_tolerance,
        "matched_sets": [
            {
                "case": {
                    "proband": _subject_to_dict(ms.case_family.proband),
                    "relatives": [_subject_to_dict(r) for r in ms.case_family.relatives],
                },
                "control": {
                    "proband": _subject_to_dict(ms.control_family.proband),
                    "relatives": [_subject_to_dict(r) for r in ms.control_family.relatives],
                },
            }
            for ms in dataset.matched_sets
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_json(path) -> Dataset:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: {exc}") from None
    try:
        sets = tuple(
            MatchedSet(
                FamilyRecord(
                    _subject_from_dict(ms["case"]["proband"]),
                    tuple(_subject_from_dict(r) for r in ms["case"]["relatives"]),
                ),
                FamilyRecord(
                    _subject_from_dict(ms["control"]["proband"]),
                    tuple(_subject_from_dict(r) for r in ms["control"]["relatives"]),
                ),
            )
            for ms in doc["matched_sets"]
        )
        return Dataset(
            sets,
            p=int(doc["p"]),
            tau=float(doc["tau"]),
            s0=doc.get("s0"),
            match_tolerance=float(doc.get("match_tolerance", 0.0)),
        )
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing field {exc}") from None


# ---------------------------------------------------------------------------
# Flat array layout for the numerical modules
# ---------------------------------------------------------------------------


def _family_fingerprint(fam: FamilyRecord) -> tuple:
    return (
        fam.proband.time,
        fam.proband.event,
        fam.proband.covariates,
        tuple((r.time, r.event, r.covariates) for r in fam.relatives),
    )


@dataclass(frozen=True)
class FlatData:
    """Canonically ordered array view of a dataset.

    Families are indexed f = 0..2n-1 with family 2r the case and 2r+1 the
    control of (canonical) matched set r.  Relatives are flattened with a
    family index column.
    """

    n_sets: int
    p: int
    tau: float
    s0: float | None
    pro_time: np.ndarray  # (2n,)
    pro_event: np.ndarray  # (2n,) float 0/1
    pro_z: np.ndarray  # (2n, p)
    rel_fam: np.ndarray  # (R,) int64
    rel_time: np.ndarray  # (R,)
    rel_event: np.ndarray  # (R,) float 0/1
    rel_z: np.ndarray  # (R, p)
    m_sizes: np.ndarray  # (2n,) relatives per family

    @property
    def n_families(self) -> int:
        return 2 * self.n_sets

    @property
    def m_max(self) -> int:
        return int(self.m_sizes.max())


def flatten(dataset: Dataset) -> FlatData:
    order = sorted(
        range(dataset.n_sets),
        key=lambda i: (
            _family_fingerprint(dataset.matched_sets[i].case_family),
            _family_fingerprint(dataset.matched_sets[i].control_family),
        ),
    )
    pro_time, pro_event, pro_z = [], [], []
    rel_fam, rel_time, rel_event, rel_z, m_sizes = [], [], [], [], []
    f = 0
    for i in order:
        ms = dataset.matched_sets[i]
        for fam in (ms.case_family, ms.control_family):
            pro_time.append(fam.proband.time)
            pro_event.append(float(fam.proband.event))
            pro_z.append(fam.proband.covariates)
            m_sizes.append(len(fam.relatives))
            for r in fam.relatives:
                rel_fam.append(f)
                rel_time.append(r.time)
                rel_event.append(float(r.event))
                rel_z.append(r.covariates)
            f += 1
    return FlatData(
        n_sets=dataset.n_sets,
        p=dataset.p,
        tau=dataset.tau,
        s0=dataset.s0,
        pro_time=np.asarray(pro_time, dtype=float),
        pro_event=np.asarray(pro_event, dtype=float),
        pro_z=np.asarray(pro_z, dtype=float).reshape(len(pro_time), dataset.p),
        rel_fam=np.asarray(rel_fam, dtype=np.int64),
        rel_time=np.asarray(rel_time, dtype=float),
        rel_event=np.asarray(rel_event, dtype=float),
        rel_z=np.asarray(rel_z, dtype=float).reshape(len(rel_fam), dataset.p),
        m_sizes=np.asarray(m_sizes, dtype=np.int64),
    )
