"""Matched case-control family data generation and the replication harness.

Families follow the prospective model: a family-level frailty w multiplies
the baseline hazard, and each member's onset given (w, Z) has hazard
w * exp(beta'Z) with the identity cumulative baseline (so onsets are
exponential with rate w * exp(beta'Z)).  Case-control structure comes from
rejection sampling:

* a case family is redrawn until its proband fails before its censoring age
  (and after s0 when the design is left-restricted);
* the matched control family is redrawn until its proband survives past the
  case proband's observed failure age, at which it is censored -- exact age
  matching, so the paired proband times are equal.

Relatives share the accepted family's frailty, with independent covariates
and independent uniform censoring.  Control families' frailties and
covariates are independent of their matched case family.

``run_replications`` generates, fits, and (optionally) bootstraps one dataset
per replicate, each on its own counter-based random stream, and aggregates
means, empirical SDs, and CI coverage per estimand.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .bootstrap import (
    BootstrapConfig,
    bootstrap_fit,
    estimand_names,
    extract_estimates,
    philox_rng,
)
from .data import Dataset, FamilyRecord, MatchedSet, Subject
from .errors import DomainError, FrailtyCCError, SimulationError
from .solver import FitOptions, fit

_STREAM_DATASET = 1
_REJECTION_BUDGET = 10_000_000


@dataclass(frozen=True)
class SimDesign:
    """One simulation configuration (defaults follow the standard benchmark)."""

    n_sets: int = 500
    relatives_per_family: int = 1
    beta_true: tuple[float, ...] = (math.log(2.0),)
    theta_true: float = 2.0
    covariate_low: tuple[float, ...] = (0.0,)
    covariate_high: tuple[float, ...] = (1.0,)
    censor_upper: float = 1.0
    s0: float | None = None
    seed: int = 0
    lambda_query_times: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    baseline: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        object.__setattr__(self, "covariate_low", tuple(float(x) for x in self.covariate_low))
        object.__setattr__(self, "covariate_high", tuple(float(x) for x in self.covariate_high))
        object.__setattr__(self, "lambda_query_times", tuple(float(t) for t in self.lambda_query_times))
        if self.n_sets < 1:
            raise DomainError("n_sets must be >= 1")
        if self.relatives_per_family < 1:
            raise DomainError("relatives_per_family must be >= 1")
        if self.theta_true <= 0.0:
            raise DomainError("theta_true must be positive")
        if self.censor_upper <= 0.0:
            raise DomainError("censor_upper must be positive")
        if len(self.covariate_low) != len(self.beta_true) or len(self.covariate_high) != len(self.beta_true):
            raise DomainError("covariate bounds must match beta dimension")
        if self.baseline != "identity":
            raise DomainError("only the identity baseline Lambda0(t)=t is supported")
        if self.s0 is not None and not 0.0 < self.s0:
            raise DomainError("s0 must be positive when set")

    @property
    def p(self) -> int:
        return len(self.beta_true)

    def to_json(self) -> dict:
        return {
            "n_sets": self.n_sets,
            "relatives_per_family": self.relatives_per_family,
            "beta_true": list(self.beta_true),
            "theta_true": self.theta_true,
            "covariate_low": list(self.covariate_low),
            "covariate_high": list(self.covariate_high),
            "censor_upper": self.censor_upper,
            "s0": self.s0,
            "seed": self.seed,
            "lambda_query_times": list(self.lambda_query_times),
            "baseline": self.baseline,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SimDesign":
        kwargs = {k: v for k, v in doc.items()}
        for key in ("beta_true", "covariate_low", "covariate_high", "lambda_query_times"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def save_design(design: SimDesign, path) -> None:
    with open(path, "w") as fh:
        json.dump(design.to_json(), fh, indent=1)


def load_design(path) -> SimDesign:
    with open(path) as fh:
        return SimDesign.from_json(json.load(fh))


def _draw_covariates(design: SimDesign, rng) -> tuple[float, ...]:
    return tuple(
        rng.uniform(lo, hi) for lo, hi in zip(design.covariate_low, design.covariate_high)
    )


def _draw_onset(design: SimDesign, rng, omega: float, z: tuple[float, ...]) -> float:
    rate = omega * math.exp(sum(b * zi for b, zi in zip(design.beta_true, z)))
    return rng.exponential(1.0 / rate)


def generate_family(
    design: SimDesign,
    rng: np.random.Generator,
    forced_proband: str = "any",
    match_time: float | None = None,
) -> FamilyRecord:
    """Draw one family; rejection-sample the proband to the forced status.

    ``forced_proband``:
      * ``"case"``    -- proband observed at failure (event 1), after s0 if set
      * ``"control"`` -- proband censored alive at exactly ``match_time``
      * ``"any"``     -- prospective draw, no conditioning
    """
    if forced_proband not in ("any", "case", "control"):
        raise DomainError(f"unknown forced_proband {forced_proband!r}")
    if forced_proband == "control" and match_time is None:
        raise DomainError("control families need a match_time")

    shape = 1.0 / design.theta_true
    for _ in range(_REJECTION_BUDGET):
        omega = rng.gamma(shape, design.theta_true)
        z0 = _draw_covariates(design, rng)
        onset = _draw_onset(design, rng, omega, z0)
        if forced_proband == "case":
            censor = rng.uniform(0.0, design.censor_upper)
            if onset <= censor and (design.s0 is None or onset > design.s0):
                proband = Subject(onset, 1, z0)
                break
        elif forced_proband == "control":
            if onset > match_time:
                proband = Subject(match_time, 0, z0)
                break
        else:
            censor = rng.uniform(0.0, design.censor_upper)
            proband = Subject(min(onset, censor), int(onset <= censor), z0)
            break
    else:
        raise SimulationError(
            f"rejection budget exhausted drawing a {forced_proband} proband"
        )

    relatives = []
    for _ in range(design.relatives_per_family):
        z = _draw_covariates(design, rng)
        onset = _draw_onset(design, rng, omega, z)
        censor = rng.uniform(0.0, design.censor_upper)
        relatives.append(Subject(min(onset, censor), int(onset <= censor), z))
    return FamilyRecord(proband, tuple(relatives))


def generate_dataset(design: SimDesign, rng: np.random.Generator | None = None) -> Dataset:
    """n_sets matched sets: each case family paired with an exact-age control."""
    if rng is None:
        rng = philox_rng(design.seed, _STREAM_DATASET, 0)
    sets = []
    for _ in range(design.n_sets):
        case = generate_family(design, rng, "case")
        control = generate_family(design, rng, "control", match_time=case.proband.time)
        sets.append(MatchedSet(case, control))
    tau = max(
        s.time
        for ms in sets
        for fam in (ms.case_family, ms.control_family)
        for s in (fam.proband, *fam.relatives)
    )
    return Dataset(tuple(sets), p=design.p, tau=tau, s0=design.s0)


# ---------------------------------------------------------------------------
# Replication harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimandSummary:
    name: str
    truth: float
    mean: float
    empirical_sd: float
    coverage: float | None  # percent, None when no bootstrap was run


@dataclass(frozen=True)
class ReplicationSummary:
    design: SimDesign
    n_requested: int
    n_converged: int
    estimands: tuple[EstimandSummary, ...]
    failures: tuple[tuple[int, str], ...]
    sd_defined: bool

    def table(self) -> str:
        rows = [f"{'estimand':<14}{'truth':>9}{'mean':>10}{'emp. SD':>10}{'cover %':>9}"]
        for e in self.estimands:
            cov = f"{e.coverage:9.1f}" if e.coverage is not None else f"{'-':>9}"
            rows.append(
                f"{e.name:<14}{e.truth:>9.3f}{e.mean:>10.3f}{e.empirical_sd:>10.3f}{cov}"
            )
        rows.append(
            f"replicates: {self.n_converged}/{self.n_requested} converged"
            + ("" if self.sd_defined else " (SD undefined: single replicate)")
        )
        return "\n".join(rows)

    def csv_rows(self) -> list[list]:
        out = [["estimand", "truth", "mean", "empirical_sd", "coverage_pct"]]
        for e in self.estimands:
            out.append([e.name, e.truth, e.mean, e.empirical_sd,
                        "" if e.coverage is None else e.coverage])
        return out


def _truths(design: SimDesign) -> np.ndarray:
    vals = list(design.beta_true) + [design.theta_true]
    vals += list(design.lambda_query_times)  # identity baseline: Lambda0(t) = t
    if design.s0 is not None:
        vals.append(design.s0)
    return np.asarray(vals, dtype=float)


def _replicate(design: SimDesign, r: int, fit_options: FitOptions,
               bootstrap_config: BootstrapConfig | None):
    rng = philox_rng(design.seed, _STREAM_DATASET, r)
    try:
        dataset = generate_dataset(design, rng)
        res = fit(dataset, fit_options)
        est = extract_estimates(res, design.lambda_query_times, design.s0 is not None)
        covered = None
        if bootstrap_config is not None:
            boot = bootstrap_fit(dataset, fit_options, bootstrap_config, base=res,
                                 _stream_index=r)
            truths = _truths(design)
            covered = np.array(
                [boot.ci[name][0] <= t <= boot.ci[name][1]
                 for name, t in zip(boot.estimand_names, truths)]
            )
        return r, est, covered, None
    except FrailtyCCError as exc:
        return r, None, None, f"{type(exc).__name__}: {exc}"


def _replicate_worker(args):  # top-level for pickling
    return _replicate(*args)


def run_replications(
    design: SimDesign,
    n_reps: int,
    fit_options: FitOptions | None = None,
    bootstrap_config: BootstrapConfig | None = None,
    threads: int = 1,
) -> ReplicationSummary:
    """Generate/fit/(bootstrap) ``n_reps`` datasets and summarize estimands."""
    if n_reps < 1:
        raise DomainError("n_reps must be >= 1")
    fit_options = fit_options or FitOptions(
        left_restricted=design.s0,
    )
    if bootstrap_config is not None and tuple(bootstrap_config.lambda_query_times) != \
            tuple(design.lambda_query_times):
        bootstrap_config = replace(
            bootstrap_config, lambda_query_times=tuple(design.lambda_query_times)
        )

    jobs = [(design, r, fit_options, bootstrap_config) for r in range(n_reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate_worker, jobs, chunksize=1))
    else:
        results = [_replicate(*j) for j in jobs]
    results.sort(key=lambda t: t[0])

    rows = []
    cover_rows = []
    failures = []
    for r, est, covered, err in results:
        if err is not None:
            failures.append((r, err))
            continue
        rows.append(est)
        if covered is not None:
            cover_rows.append(covered)

    if not rows:
        raise SimulationError(
            f"all {n_reps} replicates failed (first: {failures[0][1]})"
        )
    mat = np.vstack(rows)
    truths = _truths(design)
    names = estimand_names(design.p, design.lambda_query_times, design.s0 is not None)
    means = mat.mean(axis=0)
    sd_defined = mat.shape[0] > 1
    sds = mat.std(axis=0, ddof=1) if sd_defined else np.zeros(mat.shape[1])
    coverage = (
        100.0 * np.vstack(cover_rows).mean(axis=0) if cover_rows else None
    )
    estimands = tuple(
        EstimandSummary(
            name=names[k],
            truth=float(truths[k]),
            mean=float(means[k]),
            empirical_sd=float(sds[k]),
            coverage=None if coverage is None else float(coverage[k]),
        )
        for k in range(len(names))
    )
    return ReplicationSummary(
        design=design,
        n_requested=n_reps,
        n_converged=mat.shape[0],
        estimands=estimands,
        failures=tuple(failures),
        sd_defined=sd_defined,
    )
