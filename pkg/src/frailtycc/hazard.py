"""Two-stage (and left-restricted three-stage) baseline cumulative hazard.

Estimation runs over the relatives' observed failure times tau_1 < ... < tau_G
and is non-iterative: each jump uses only state accumulated through the
previous jump.

Stage 1 (indicator-weighted pass): the jump at tau_g is

        sum_i I(T_i0 < tau_g) * [failures of family i at tau_g]
    -----------------------------------------------------------------
    sum_i I(T_i0 < tau_g) * psi_bar_i(tau_{g-1}) * sum_j Y_ij(tau_g) e^{b'Z_ij}

where psi_bar_i is the clipped posterior frailty mean of family i given its
event count and hazard exposure through tau_{g-1} (proband terms included once
the proband's observation time has passed).  Only families whose proband time
strictly precedes tau_g enter either sum; a jump whose numerator is empty
contributes zero mass (the integrand convention for the vanishing-denominator
region near t = 0).

Stage 2 (full-risk-set pass): the jump at tau_g is d_g over the same weighted
risk-set sum taken over all families, where the proband exposure uses the
stage-1 value while T_i0 >= tau_g and the stage-2 value accumulated so far
once T_i0 < tau_g.

Left-restricted designs (proband times bounded below by s0 > 0) prepend a
root-finding stage: the mass Lambda0(s0) is the root of

    sum_{tau_g <= s0} stage2_jump(tau_g; x) - x = 0,

where inside both stages every proband evaluation uses the offset form
Lambda0(T_i0) = x + sum_{tau_g in [s0, T_i0]} jump(tau_g).  The same offset
code path with (s0=0, x=0) IS the plain two-stage estimator, so the
unrestricted reduction is exact by construction.

A numba-compiled loop handles the closed-form gamma law; any other law runs
the identical arithmetic through the generic kernel interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset, FlatData, flatten
from .errors import DomainError, HazardEstimationError
from .kernels import FrailtyLaw, KernelClipConfig, LawKind, clipped_posterior_mean, gamma_frailty

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency, but degrade anyway
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco if not (args and callable(args[0])) else args[0]


_EXP_ARG_MAX = 700.0  # exp overflow guard for risk weights


@dataclass(frozen=True, eq=False)
class GammaParams:
    """Regression coefficients plus the frailty dependence parameter."""

    beta: np.ndarray
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if not (self.theta > 0.0 and math.isfinite(self.theta)):
            raise DomainError(f"theta must be positive, got {self.theta}")
        if not np.all(np.isfinite(self.beta)):
            raise DomainError("beta must be finite")

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.beta, [self.theta]])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "GammaParams":
        v = np.asarray(v, dtype=float)
        return cls(beta=v[:-1], theta=float(v[-1]))


@dataclass(frozen=True, eq=False)
class HazardContext:
    """Everything a hazard stage needs besides the data."""

    gamma: GammaParams
    law: FrailtyLaw
    clip: KernelClipConfig

    def __post_init__(self):
        if self.law.theta != self.gamma.theta:
            object.__setattr__(self, "law", self.law.with_theta(self.gamma.theta))

    @classmethod
    def gamma_model(cls, beta, theta: float, clip: KernelClipConfig) -> "HazardContext":
        return cls(GammaParams(beta, theta), gamma_frailty(theta), clip)


@dataclass(frozen=True, eq=False)
class StepCumHazard:
    """Right-continuous step function t -> offset + sum of jumps at times <= t."""

    jump_times: np.ndarray
    jump_sizes: np.ndarray
    origin_offset: float = 0.0

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        js = np.asarray(self.jump_sizes, dtype=float)
        if jt.shape != js.shape or jt.ndim != 1:
            raise DomainError("jump_times and jump_sizes must be 1-d and aligned")
        if jt.size and (np.any(np.diff(jt) <= 0.0) or jt[0] < 0.0):
            raise DomainError("jump_times must be strictly increasing and nonnegative")
        if np.any(js <= 0.0):
            raise DomainError("jump_sizes must be positive")
        if self.origin_offset < 0.0:
            raise DomainError("origin_offset must be nonnegative")
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "jump_sizes", js)
        object.__setattr__(self, "_cum", self.origin_offset + np.cumsum(js))

    def value(self, t: float) -> float:
        idx = int(np.searchsorted(self.jump_times, t, side="right"))
        return float(self._cum[idx - 1]) if idx > 0 else self.origin_offset

    def values(self, t) -> np.ndarray:
        idx = np.searchsorted(self.jump_times, np.asarray(t, dtype=float), side="right")
        padded = np.concatenate([[self.origin_offset], self._cum])
        return padded[idx]

    @property
    def total(self) -> float:
        return float(self._cum[-1]) if self.jump_times.size else self.origin_offset

    def jump_at(self, t) -> np.ndarray:
        """Jump size at each time in t (0.0 where no jump)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t)
        idx = np.clip(idx, 0, max(self.jump_times.size - 1, 0))
        if self.jump_times.size == 0:
            return np.zeros_like(t)
        hit = self.jump_times[idx] == t
        return np.where(hit, self.jump_sizes[idx], 0.0)


def evaluate(hazard: StepCumHazard, t) -> float | np.ndarray:
    """Right-continuous evaluation of the step function at t."""
    if np.ndim(t) == 0:
        if t < 0.0:
            raise DomainError("t must be nonnegative")
        return hazard.value(float(t))
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise DomainError("t must be nonnegative")
    return hazard.values(t)


def risk_weight(subject, beta) -> float:
    """exp(beta'Z) for one subject; raises rather than overflowing."""
    arg = float(np.dot(np.atleast_1d(np.asarray(beta, dtype=float)), subject.covariates))
    if arg > _EXP_ARG_MAX:
        raise DomainError(f"risk weight overflow: beta'Z = {arg:.3g}")
    return math.exp(arg)


# ---------------------------------------------------------------------------
# Shared preprocessing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _StageInputs:
    tau: np.ndarray  # (G,) unique failure times
    d_g: np.ndarray  # (G,) tie counts
    fail_fam: np.ndarray  # failures' family indices, grouped by tau
    fail_lo: np.ndarray  # (G,) group starts
    fail_hi: np.ndarray  # (G,) group ends
    pro_w: np.ndarray  # (F,) exp(beta'Z_proband)
    rel_w: np.ndarray  # (R,) exp(beta'Z_relative)
    rel_order: np.ndarray  # relatives by ascending time
    pro_order: np.ndarray  # families by ascending proband time


def _exp_weights(z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    arg = z @ beta
    if arg.size and np.max(arg) > _EXP_ARG_MAX:
        raise DomainError("risk weight overflow: beta'Z too large")
    return np.exp(arg)


def _prepare(flat: FlatData, beta: np.ndarray) -> _StageInputs:
    fail_mask = flat.rel_event == 1.0
    if not np.any(fail_mask):
        raise HazardEstimationError("no relative failures: baseline hazard has no jumps")
    ft = flat.rel_time[fail_mask]
    ffam = flat.rel_fam[fail_mask]
    order = np.argsort(ft, kind="stable")
    ft_sorted = ft[order]
    tau, counts = np.unique(ft_sorted, return_counts=True)
    hi = np.cumsum(counts)
    lo = hi - counts
    return _StageInputs(
        tau=tau,
        d_g=counts.astype(float),
        fail_fam=ffam[order].astype(np.int64),
        fail_lo=lo.astype(np.int64),
        fail_hi=hi.astype(np.int64),
        pro_w=_exp_weights(flat.pro_z, beta),
        rel_w=_exp_weights(flat.rel_z, beta),
        rel_order=np.argsort(flat.rel_time, kind="stable").astype(np.int64),
        pro_order=np.argsort(flat.pro_time, kind="stable").astype(np.int64),
    )


# ---------------------------------------------------------------------------
# Gamma fast path (numba)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _stage1_loop_gamma(
    theta, h_max, s0, x_off,
    tau, fail_fam, fail_lo, fail_hi,
    pro_time, pro_event, pro_w, fam_wt, rel_credit,
    rel_fam, rel_time, rel_w, rel_order, pro_order,
):  # pragma: no cover - exercised via wrappers
    F = pro_time.shape[0]
    G = tau.shape[0]
    inv_t = 1.0 / theta
    W = np.zeros(F)
    H = np.zeros(F)
    N = np.zeros(F)
    h0 = np.zeros(F)
    active = np.zeros(F, dtype=np.uint8)
    jumps = np.zeros(G)
    for j in range(rel_fam.shape[0]):
        W[rel_fam[j]] += rel_w[j]
    cum_r = 0.0  # jumps at times >= s0, for offset proband evaluations
    rp = 0
    pp = 0
    prev_t = 0.0
    credited = False
    err = np.int64(-1)
    for g in range(G):
        t = tau[g]
        if not credited and prev_t >= s0:
            # relatives' exposure clocks have passed s0: add the offset mass
            for i in range(F):
                H[i] += rel_credit[i]
            credited = True
        while rp < rel_order.shape[0] and rel_time[rel_order[rp]] < t:
            j = rel_order[rp]
            W[rel_fam[j]] -= rel_w[j]
            rp += 1
        while pp < F and pro_time[pro_order[pp]] < t:
            i = pro_order[pp]
            active[i] = 1
            h0[i] = (x_off + cum_r) * pro_w[i]
            pp += 1
        num = 0.0
        for q in range(fail_lo[g], fail_hi[g]):
            if active[fail_fam[q]] == 1:
                num += fam_wt[fail_fam[q]]
        if num > 0.0:
            den = 0.0
            for i in range(F):
                if active[i] == 1 and W[i] > 0.0:
                    h = H[i] + h0[i]
                    if h > h_max:
                        h = h_max
                    den += fam_wt[i] * ((inv_t + N[i] + pro_event[i]) / (inv_t + h)) * W[i]
            if den <= 0.0:
                err = g
                break
            d = num / den
            jumps[g] = d
            if t >= s0:
                cum_r += d
            for i in range(F):
                if W[i] > 0.0:
                    H[i] += d * W[i]
        for q in range(fail_lo[g], fail_hi[g]):
            N[fail_fam[q]] += 1.0
        prev_t = t
    return jumps, err


@njit(cache=True)
def _stage2_loop_gamma(
    theta, h_max, s0, x_off,
    tau, fail_fam, fail_lo, fail_hi,
    pro_time, pro_event, pro_w, fam_wt, h0_init,
    rel_fam, rel_time, rel_w, rel_order, pro_order,
):  # pragma: no cover - exercised via wrappers
    F = pro_time.shape[0]
    G = tau.shape[0]
    inv_t = 1.0 / theta
    W = np.zeros(F)
    H = np.zeros(F)
    N = np.zeros(F)
    h0 = h0_init.copy()
    jumps = np.zeros(G)
    for j in range(rel_fam.shape[0]):
        W[rel_fam[j]] += rel_w[j]
    cum_r = 0.0
    rp = 0
    pp = 0
    err = np.int64(-1)
    for g in range(G):
        t = tau[g]
        while rp < rel_order.shape[0] and rel_time[rel_order[rp]] < t:
            j = rel_order[rp]
            W[rel_fam[j]] -= rel_w[j]
            rp += 1
        while pp < F and pro_time[pro_order[pp]] < t:
            i = pro_order[pp]
            h0[i] = (x_off + cum_r) * pro_w[i]
            pp += 1
        num = 0.0
        for q in range(fail_lo[g], fail_hi[g]):
            num += fam_wt[fail_fam[q]]
        den = 0.0
        for i in range(F):
            if W[i] > 0.0:
                h = H[i] + h0[i]
                if h > h_max:
                    h = h_max
                den += fam_wt[i] * ((inv_t + N[i] + pro_event[i]) / (inv_t + h)) * W[i]
        if den <= 0.0:
            err = g
            break
        d = num / den
        jumps[g] = d
        if t >= s0:
            cum_r += d
        for i in range(F):
            if W[i] > 0.0:
                H[i] += d * W[i]
        for q in range(fail_lo[g], fail_hi[g]):
            N[fail_fam[q]] += 1.0
    return jumps, err


# ---------------------------------------------------------------------------
# Generic path (identical arithmetic through the kernel interface)
# ---------------------------------------------------------------------------


def _psi_bar_fn(law: FrailtyLaw, clip: KernelClipConfig) -> Callable[[int, float], float]:
    def psi(r: int, h: float) -> float:
        return clipped_posterior_mean(law, r, h, clip)

    return psi


def _stage1_loop_generic(
    psi, s0, x_off,
    tau, fail_fam, fail_lo, fail_hi,
    pro_time, pro_event, pro_w, fam_wt,
    rel_fam, rel_time, rel_w, rel_order, pro_order,
):
    F = pro_time.shape[0]
    G = tau.shape[0]
    W = np.zeros(F)
    H = np.zeros(F)
    N = np.zeros(F, dtype=np.int64)
    h0 = np.zeros(F)
    active = np.zeros(F, dtype=bool)
    jumps = np.zeros(G)
    for j in range(rel_fam.shape[0]):
        W[rel_fam[j]] += rel_w[j]
    cum_r = 0.0
    rp = 0
    pp = 0
    for g in range(G):
        t = tau[g]
        while rp < rel_order.shape[0] and rel_time[rel_order[rp]] < t:
            j = rel_order[rp]
            W[rel_fam[j]] -= rel_w[j]
            rp += 1
        while pp < F and pro_time[pro_order[pp]] < t:
            i = pro_order[pp]
            active[i] = True
            h0[i] = (x_off + cum_r) * pro_w[i]
            pp += 1
        num = 0.0
        for q in range(fail_lo[g], fail_hi[g]):
            if active[fail_fam[q]]:
                num += fam_wt[fail_fam[q]]
        if num > 0.0:
            den = 0.0
            for i in range(F):
                if active[i] and W[i] > 0.0:
                    r = int(N[i]) + int(pro_event[i])
                    den += fam_wt[i] * psi(r, H[i] + h0[i]) * W[i]
            if den <= 0.0:
                return jumps, g
            d = num / den
            jumps[g] = d
            if t >= s0:
                cum_r += d
            mask = W > 0.0
            H[mask] += d * W[mask]
        for q in range(fail_lo[g], fail_hi[g]):
            N[fail_fam[q]] += 1
    return jumps, -1


def _stage2_loop_generic(
    psi, s0, x_off,
    tau, fail_fam, fail_lo, fail_hi,
    pro_time, pro_event, pro_w, fam_wt, h0_init,
    rel_fam, rel_time, rel_w, rel_order, pro_order,
):
    F = pro_time.shape[0]
    G = tau.shape[0]
    W = np.zeros(F)
    H = np.zeros(F)
    N = np.zeros(F, dtype=np.int64)
    h0 = h0_init.copy()
    jumps = np.zeros(G)
    for j in range(rel_fam.shape[0]):
        W[rel_fam[j]] += rel_w[j]
    cum_r = 0.0
    rp = 0
    pp = 0
    for g in range(G):
        t = tau[g]
        while rp < rel_order.shape[0] and rel_time[rel_order[rp]] < t:
            j = rel_order[rp]
            W[rel_fam[j]] -= rel_w[j]
            rp += 1
        while pp < F and pro_time[pro_order[pp]] < t:
            i = pro_order[pp]
            h0[i] = (x_off + cum_r) * pro_w[i]
            pp += 1
        num = 0.0
        for q in range(fail_lo[g], fail_hi[g]):
            num += fam_wt[fail_fam[q]]
        den = 0.0
        for i in range(F):
            if W[i] > 0.0:
                r = int(N[i]) + int(pro_event[i])
                den += fam_wt[i] * psi(r, H[i] + h0[i]) * W[i]
        if den <= 0.0:
            return jumps, g
        d = num / den
        jumps[g] = d
        if t >= s0:
            cum_r += d
        mask = W > 0.0
        H[mask] += d * W[mask]
        for q in range(fail_lo[g], fail_hi[g]):
            N[fail_fam[q]] += 1
    return jumps, -1


# ---------------------------------------------------------------------------
# Stage drivers
# ---------------------------------------------------------------------------


def _family_weights(flat: FlatData, weights) -> np.ndarray:
    if weights is None:
        return np.ones(flat.n_families)
    w = np.asarray(weights, dtype=float)
    if w.shape != (flat.n_families,):
        raise DomainError(f"weights must have shape ({flat.n_families},), got {w.shape}")
    if np.any(w < 0.0):
        raise DomainError("family weights must be nonnegative")
    return w


def _run_stage1(flat, prep, ctx, fam_wt, s0, x_off):
    args = (
        prep.tau, prep.fail_fam, prep.fail_lo, prep.fail_hi,
        flat.pro_time, flat.pro_event, prep.pro_w, fam_wt,
        flat.rel_fam, flat.rel_time, prep.rel_w, prep.rel_order, prep.pro_order,
    )
    if ctx.law.kind is LawKind.GAMMA_MEAN_ONE and _HAVE_NUMBA:
        jumps, err = _stage1_loop_gamma(ctx.gamma.theta, ctx.clip.h_max, s0, x_off, *args)
    else:
        jumps, err = _stage1_loop_generic(_psi_bar_fn(ctx.law, ctx.clip), s0, x_off, *args)
    if err >= 0:
        raise HazardEstimationError(
            f"first stage: zero weighted risk set at failure time {prep.tau[err]!r}"
        )
    return jumps


def _run_stage2(flat, prep, ctx, fam_wt, s0, x_off, h0_init):
    args = (
        prep.tau, prep.fail_fam, prep.fail_lo, prep.fail_hi,
        flat.pro_time, flat.pro_event, prep.pro_w, fam_wt, h0_init,
        flat.rel_fam, flat.rel_time, prep.rel_w, prep.rel_order, prep.pro_order,
    )
    if ctx.law.kind is LawKind.GAMMA_MEAN_ONE and _HAVE_NUMBA:
        jumps, err = _stage2_loop_gamma(ctx.gamma.theta, ctx.clip.h_max, s0, x_off, *args)
    else:
        jumps, err = _stage2_loop_generic(_psi_bar_fn(ctx.law, ctx.clip), s0, x_off, *args)
    if err >= 0:
        raise HazardEstimationError(
            f"second stage: zero weighted risk set at failure time {prep.tau[err]!r}"
        )
    return jumps


def _offset_proband_values(prep, jumps, s0, x_off, pro_time) -> np.ndarray:
    """x + sum of jumps at times in [s0, T_i0], the offset proband evaluation."""
    restricted = np.where(prep.tau >= s0, jumps, 0.0)
    cum = np.cumsum(restricted)
    idx = np.searchsorted(prep.tau, pro_time, side="right")
    padded = np.concatenate([[0.0], cum])
    return x_off + padded[idx]


def _two_stage_jumps(flat, prep, ctx, fam_wt, s0, x_off):
    j1 = _run_stage1(flat, prep, ctx, fam_wt, s0, x_off)
    tilde_pro = _offset_proband_values(prep, j1, s0, x_off, flat.pro_time)
    h0_init = tilde_pro * prep.pro_w
    j2 = _run_stage2(flat, prep, ctx, fam_wt, s0, x_off, h0_init)
    return j1, j2


def _as_hazard(tau: np.ndarray, jumps: np.ndarray, origin_offset: float = 0.0) -> StepCumHazard:
    keep = jumps > 0.0
    return StepCumHazard(tau[keep], jumps[keep], origin_offset)


def _check_stage1_precondition(flat: FlatData, prep: _StageInputs) -> None:
    if flat.pro_time.min() >= prep.tau[-1]:
        raise HazardEstimationError(
            "first stage is degenerate: no proband time precedes any relative "
            "failure time (all indicator weights vanish)"
        )


def first_stage(dataset: Dataset, ctx: HazardContext, weights=None) -> StepCumHazard:
    """Indicator-weighted first-stage estimator."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    prep = _prepare(flat, ctx.gamma.beta)
    _check_stage1_precondition(flat, prep)
    fam_wt = _family_weights(flat, weights)
    jumps = _run_stage1(flat, prep, ctx, fam_wt, 0.0, 0.0)
    return _as_hazard(prep.tau, jumps)


def second_stage(dataset: Dataset, ctx: HazardContext, lambda_tilde: StepCumHazard,
                 weights=None) -> StepCumHazard:
    """Full-risk-set second-stage estimator given a first-stage hazard."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    prep = _prepare(flat, ctx.gamma.beta)
    fam_wt = _family_weights(flat, weights)
    h0_init = lambda_tilde.values(flat.pro_time) * prep.pro_w
    jumps = _run_stage2(flat, prep, ctx, fam_wt, 0.0, 0.0, h0_init)
    return _as_hazard(prep.tau, jumps)


def two_stage(dataset: Dataset, ctx: HazardContext, weights=None) -> StepCumHazard:
    """first_stage followed by second_stage (the standard composition)."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    prep = _prepare(flat, ctx.gamma.beta)
    _check_stage1_precondition(flat, prep)
    fam_wt = _family_weights(flat, weights)
    _, j2 = _two_stage_jumps(flat, prep, ctx, fam_wt, 0.0, 0.0)
    return _as_hazard(prep.tau, j2)


def _naive_breslow_jumps(flat, prep, fam_wt) -> np.ndarray:
    """Classical Breslow jumps on relatives, ignoring frailty (init value)."""
    w_by_time = (fam_wt[flat.rel_fam] * prep.rel_w)[prep.rel_order]
    t_sorted = flat.rel_time[prep.rel_order]
    removed = np.concatenate([[0.0], np.cumsum(w_by_time)])
    at_risk = removed[-1] - removed[np.searchsorted(t_sorted, prep.tau, side="left")]
    num = np.add.reduceat(fam_wt[prep.fail_fam], prep.fail_lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        jumps = np.where(at_risk > 0.0, num / at_risk, 0.0)
    return jumps


def left_restriction_residual(dataset: Dataset, ctx: HazardContext, s0: float, x: float,
                              weights=None) -> float:
    """Residual of the left-restriction equation at candidate mass x."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    prep = _prepare(flat, ctx.gamma.beta)
    fam_wt = _family_weights(flat, weights)
    _, j2 = _two_stage_jumps(flat, prep, ctx, fam_wt, s0, x)
    return float(np.sum(j2[prep.tau <= s0]) - x)


def left_restricted_three_stage(
    dataset: Dataset,
    ctx: HazardContext,
    s0: float,
    weights=None,
    x_init: float | None = None,
    newton_tol: float = 1e-10,
    newton_step: float = 1e-6,
    max_iter: int = 100,
) -> tuple[StepCumHazard, float]:
    """Three-stage estimator for left-restricted proband sampling.

    Returns the final hazard (whose own jumps carry the sub-s0 mass, so plain
    evaluation is valid everywhere) and the estimated mass at s0.  With
    ``s0 = 0`` this is exactly the two-stage estimator and the mass is 0.
    """
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    prep = _prepare(flat, ctx.gamma.beta)
    _check_stage1_precondition(flat, prep)
    fam_wt = _family_weights(flat, weights)

    if s0 < 0.0:
        raise DomainError("s0 must be nonnegative")
    if s0 == 0.0:
        _, j2 = _two_stage_jumps(flat, prep, ctx, fam_wt, 0.0, 0.0)
        return _as_hazard(prep.tau, j2), 0.0

    early = prep.tau <= s0

    def objective(x: float) -> float:
        _, j2 = _two_stage_jumps(flat, prep, ctx, fam_wt, s0, x)
        return float(np.sum(j2[early]) - x)

    if not np.any(early):
        raise HazardEstimationError(f"no relative failures in [0, s0={s0!r}]")

    naive = _naive_breslow_jumps(flat, prep, fam_wt)
    x = float(np.sum(naive[early])) if x_init is None else float(x_init)
    x = max(x, 0.0)

    trace = []
    lo, f_lo = 0.0, None
    hi, f_hi = None, None
    fx = objective(x)
    for _ in range(max_iter):
        trace.append((x, fx))
        if abs(fx) <= newton_tol:
            _, j2 = _two_stage_jumps(flat, prep, ctx, fam_wt, s0, x)
            return _as_hazard(prep.tau, j2), x
        # maintain a sign-change bracket for the bisection fallback
        if fx > 0.0 and x >= lo:
            lo, f_lo = x, fx
        elif fx < 0.0 and (hi is None or x <= hi):
            hi, f_hi = x, fx
        slope = (objective(x + newton_step) - objective(x - newton_step)) / (2.0 * newton_step)
        x_new = x - fx / slope if slope != 0.0 else -1.0
        inside = x_new > lo and (hi is None or x_new < hi)
        if not (math.isfinite(x_new) and x_new >= 0.0 and inside):
            if hi is None:
                x_new = max(2.0 * x, 2.0 * lo, 0.01)  # expand upward until f < 0
            else:
                x_new = 0.5 * (lo + hi)
        if abs(x_new - x) < 1e-14 * max(1.0, x):
            x = x_new
            fx = objective(x)
            trace.append((x, fx))
            break
        x = x_new
        fx = objective(x)
    if abs(fx) <= newton_tol:
        _, j2 = _two_stage_jumps(flat, prep, ctx, fam_wt, s0, x)
        return _as_hazard(prep.tau, j2), x
    raise HazardEstimationError(
        f"left-restriction root search did not converge in {max_iter} iterations; "
        f"trace={trace[-5:]}"
    )
