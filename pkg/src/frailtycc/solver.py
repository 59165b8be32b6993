"""Outer estimation loop: alternate hazard profiling with Newton updates.

The algorithm:

1. Initialize beta by conditional logistic regression on the proband pairs
   (the frailty-free limit of the pair likelihood) and theta at 1, unless an
   explicit start is supplied.
2. For the current gamma = (beta, theta), estimate the baseline hazard with
   the non-iterative two-stage pass (three-stage when left-restricted).
3. Update gamma by one damped Newton step on the profile estimating function
   gamma -> U(gamma, hazard(gamma)), with step halving on its sup norm.
4. Repeat until the parameter change, the hazard sup-change, and the score
   norm are all below tolerance.

The exposure cap for the clipped posterior-mean kernel is data-adaptive:
``lambda_max`` defaults to 10x the total mass of a provisional first-stage
pass at the initial gamma (fixed for the whole fit), and the covariate-effect
bound ``nu`` is recomputed each outer iteration as exp(max |beta'Z|), capped
at 1e6.  On well-behaved data the cap is far from active.

Determinism: for a fixed dataset, options, and weights the full iteration
sequence is reproducible bit for bit; matched-set order does not matter
because all reductions run in the canonical order fixed by ``data.flatten``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, FlatData, flatten
from .errors import DomainError, NonConvergenceError, SingularJacobianError
from .hazard import (
    GammaParams,
    HazardContext,
    StepCumHazard,
    _check_stage1_precondition,
    _family_weights,
    _prepare,
    _run_stage1,
    _as_hazard,
    left_restricted_three_stage,
    two_stage,
)
from .kernels import FrailtyLaw, KernelClipConfig, gamma_frailty
from .likelihood import EvalPoint, score_jacobian, total_score

_MAX_HALVINGS = 20
_NU_CAP = 1e6


@dataclass(frozen=True)
class FitOptions:
    """Controls for the outer estimation loop.

    ``gamma_init`` is an optional (beta, theta) pair; when omitted beta comes
    from conditional logistic regression on the probands and theta starts at
    1.  ``max_newton`` bounds the Newton updates taken per outer iteration
    (each with up to 20 step halvings).  ``left_restricted`` switches hazard
    profiling to the three-stage estimator at the given s0.
    """

    gamma_init: tuple[Sequence[float], float] | None = None
    tol_gamma: float = 1e-6
    tol_hazard: float = 1e-6
    score_tol: float = 1e-5
    max_outer: int = 100
    max_newton: int = 1
    theta_bounds: tuple[float, float] = (1e-4, 50.0)
    left_restricted: float | None = None
    lambda_max: float | None = None
    law: FrailtyLaw | None = None

    def __post_init__(self):
        if self.tol_gamma <= 0.0 or self.tol_hazard <= 0.0 or self.score_tol <= 0.0:
            raise DomainError("tolerances must be positive")
        lo, hi = self.theta_bounds
        if not (0.0 < lo < hi):
            raise DomainError("theta_bounds must satisfy 0 < lo < hi")
        if self.gamma_init is not None:
            theta0 = self.gamma_init[1]
            if not (lo <= theta0 <= hi):
                raise DomainError(f"theta_init {theta0} outside theta_bounds {self.theta_bounds}")


@dataclass(frozen=True)
class TraceEntry:
    gamma: tuple[float, ...]
    score_norm: float
    hazard_change: float


@dataclass(frozen=True, eq=False)
class FitResult:
    beta_hat: np.ndarray
    theta_hat: float
    hazard: StepCumHazard
    lambda0_s0: float | None
    outer_iterations: int
    final_score_norm: float
    converged: bool
    theta_at_boundary: bool
    trace: tuple[TraceEntry, ...] = field(repr=False)

    @property
    def gamma(self) -> GammaParams:
        return GammaParams(self.beta_hat, self.theta_hat)


def _clr_beta(flat: FlatData, set_wt: np.ndarray, max_iter: int = 30) -> np.ndarray:
    """Conditional logistic regression on proband pairs (theta -> 0 limit)."""
    d = flat.pro_z[0::2] - flat.pro_z[1::2]
    beta = np.zeros(flat.p)
    for _ in range(max_iter):
        eta = d @ beta
        prob = 1.0 / (1.0 + np.exp(-eta))
        grad = d.T @ (set_wt * (1.0 - prob))
        hess = (d * (set_wt * prob * (1.0 - prob))[:, None]).T @ d
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return np.zeros(flat.p)
        if not np.all(np.isfinite(step)):
            return np.zeros(flat.p)
        step = np.clip(step, -2.0, 2.0)
        beta = beta + step
        if np.max(np.abs(step)) < 1e-10:
            break
    return beta if np.all(np.isfinite(beta)) else np.zeros(flat.p)


def _make_clip(flat: FlatData, beta: np.ndarray, lambda_max: float) -> KernelClipConfig:
    arg = max(
        float(np.max(np.abs(flat.pro_z @ beta))) if flat.pro_z.size else 0.0,
        float(np.max(np.abs(flat.rel_z @ beta))) if flat.rel_z.size else 0.0,
    )
    nu = min(math.exp(min(arg, math.log(_NU_CAP))), _NU_CAP)
    return KernelClipConfig(lambda_max=lambda_max, nu=max(nu, 1.0), m_max=flat.m_max)


def _adaptive_lambda_max(flat: FlatData, gamma: GammaParams, law: FrailtyLaw,
                         fam_wt: np.ndarray) -> float:
    """10x the total mass of a provisional (uncapped) first-stage pass."""
    provisional = KernelClipConfig(lambda_max=1e12, nu=1.0, m_max=flat.m_max)
    ctx = HazardContext(gamma, law, provisional)
    prep = _prepare(flat, gamma.beta)
    _check_stage1_precondition(flat, prep)
    jumps = _run_stage1(flat, prep, ctx, fam_wt, 0.0, 0.0)
    total = float(np.sum(jumps))
    return 10.0 * max(total, 0.1)


class _Profiler:
    """Hazard re-estimation for a fixed clip, with per-gamma caching."""

    def __init__(self, flat: FlatData, law: FrailtyLaw, clip: KernelClipConfig,
                 s0: float | None, fam_wt: np.ndarray):
        self.flat = flat
        self.law = law
        self.clip = clip
        self.s0 = s0
        self.fam_wt = fam_wt
        self.x_warm: float | None = None
        self._cache: dict[bytes, tuple[StepCumHazard, float | None]] = {}

    def full(self, gamma: GammaParams) -> tuple[StepCumHazard, float | None]:
        key = gamma.vector.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        ctx = HazardContext(gamma, self.law, self.clip)
        if self.s0 is None:
            out = (two_stage(self.flat, ctx, weights=self.fam_wt), None)
        else:
            hz, x = left_restricted_three_stage(
                self.flat, ctx, self.s0, weights=self.fam_wt, x_init=self.x_warm
            )
            self.x_warm = x
            out = (hz, x)
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = out
        return out

    def __call__(self, gamma: GammaParams) -> StepCumHazard:
        return self.full(gamma)[0]


def _hazard_sup_change(a: StepCumHazard, b: StepCumHazard) -> float:
    grid = np.union1d(a.jump_times, b.jump_times)
    if grid.size == 0:
        return abs(a.origin_offset - b.origin_offset)
    d = np.abs(a.values(grid) - b.values(grid))
    return float(max(np.max(d), abs(a.origin_offset - b.origin_offset)))


def profile_hazard(dataset: Dataset, gamma: GammaParams, options: FitOptions = FitOptions(),
                   weights=None) -> StepCumHazard:
    """Baseline hazard at fixed gamma (two-stage, or three-stage if restricted)."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    fam_wt = _family_weights(flat, weights)
    law = (options.law or gamma_frailty(gamma.theta)).with_theta(gamma.theta)
    lam = options.lambda_max or _adaptive_lambda_max(flat, gamma, law, fam_wt)
    clip = _make_clip(flat, gamma.beta, lam)
    return _Profiler(flat, law, clip, options.left_restricted, fam_wt)(gamma)


def fit(dataset: Dataset, options: FitOptions = FitOptions(), weights=None) -> FitResult:
    """Run the full estimation loop; raises NonConvergenceError with a trace."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    fam_wt = _family_weights(flat, weights)
    theta_lo, theta_hi = options.theta_bounds

    if options.gamma_init is not None:
        beta0, theta0 = options.gamma_init
        gamma = GammaParams(np.asarray(beta0, dtype=float), float(theta0))
        warm_start = True
    else:
        beta0 = _clr_beta(flat, fam_wt[0::2])
        gamma = GammaParams(beta0, min(max(1.0, theta_lo), theta_hi))
        warm_start = False

    law_template = options.law or gamma_frailty(gamma.theta)
    lam = options.lambda_max or _adaptive_lambda_max(
        flat, gamma, law_template.with_theta(gamma.theta), fam_wt
    )

    trace: list[TraceEntry] = []
    prev_hazard: StepCumHazard | None = None
    prev_gamma_vec: np.ndarray | None = None
    hazard = None
    lambda0_s0 = None
    norm = math.inf

    def clamp(vec: np.ndarray) -> np.ndarray:
        out = vec.copy()
        out[-1] = min(max(out[-1], theta_lo), theta_hi)
        return out

    def projected_norm(u_vec: np.ndarray, theta: float) -> float:
        # a theta score pushing outward at an active bound cannot be driven
        # to zero; drop it from the convergence metric (boundary solution)
        u_eff = u_vec.copy()
        if (theta == theta_lo and u_eff[-1] < 0.0) or (theta == theta_hi and u_eff[-1] > 0.0):
            u_eff[-1] = 0.0
        return float(np.max(np.abs(u_eff)))

    for it in range(1, options.max_outer + 1):
        clip = _make_clip(flat, gamma.beta, lam)
        law = law_template.with_theta(gamma.theta)
        profiler = _Profiler(flat, law, clip, options.left_restricted, fam_wt)
        hazard, lambda0_s0 = profiler.full(gamma)
        point = EvalPoint(gamma, hazard, law)
        u = total_score(flat, point, weights=fam_wt).components
        norm = projected_norm(u, gamma.theta)

        gamma_change = (
            math.inf if prev_gamma_vec is None
            else float(np.max(np.abs(gamma.vector - prev_gamma_vec)))
        )
        hazard_change = (
            math.inf if prev_hazard is None else _hazard_sup_change(hazard, prev_hazard)
        )
        trace.append(TraceEntry(tuple(gamma.vector), norm,
                                0.0 if prev_hazard is None else hazard_change))

        small_move = gamma_change < options.tol_gamma and hazard_change < options.tol_hazard
        if norm < options.score_tol and (small_move or (it == 1 and warm_start)):
            return FitResult(
                beta_hat=gamma.beta.copy(),
                theta_hat=gamma.theta,
                hazard=hazard,
                lambda0_s0=lambda0_s0,
                outer_iterations=it,
                final_score_norm=norm,
                converged=True,
                theta_at_boundary=gamma.theta in (theta_lo, theta_hi),
                trace=tuple(trace),
            )

        prev_gamma_vec = gamma.vector
        prev_hazard = hazard

        stalled = False
        for _ in range(max(options.max_newton, 1)):
            jac = score_jacobian(flat, EvalPoint(gamma, hazard, law), profiler,
                                 weights=fam_wt, warn_singular=False)
            sv = np.linalg.svd(jac, compute_uv=False)
            if sv[-1] <= 1e-12 * max(sv[0], 1.0):
                raise SingularJacobianError(
                    f"profile score Jacobian singular at iteration {it} "
                    f"(singular values {sv.tolist()})"
                )
            step = np.linalg.solve(jac, -u)
            accepted = False
            scale = 1.0
            for _ in range(_MAX_HALVINGS):
                v_try = clamp(gamma.vector + scale * step)
                g_try = GammaParams.from_vector(v_try)
                hz_try = profiler(g_try)
                u_try = total_score(
                    flat, EvalPoint(g_try, hz_try, law.with_theta(g_try.theta)),
                    weights=fam_wt,
                ).components
                norm_try = projected_norm(u_try, g_try.theta)
                if norm_try < norm or (norm_try == norm and scale == 1.0):
                    gamma, hazard, u, norm = g_try, hz_try, u_try, norm_try
                    accepted = True
                    break
                scale *= 0.5
            if not accepted:
                stalled = True
                break
            if norm < options.score_tol:
                break
        if stalled:
            if norm < options.score_tol:
                # cannot improve further; treat the current point as the root
                trace.append(TraceEntry(tuple(gamma.vector), norm, 0.0))
                return FitResult(
                    beta_hat=gamma.beta.copy(),
                    theta_hat=gamma.theta,
                    hazard=hazard,
                    lambda0_s0=lambda0_s0,
                    outer_iterations=it,
                    final_score_norm=norm,
                    converged=True,
                    theta_at_boundary=gamma.theta in (theta_lo, theta_hi),
                    trace=tuple(trace),
                )
            raise NonConvergenceError(
                f"line search stalled at iteration {it} with score norm {norm:.3e}",
                trace=trace,
            )

    raise NonConvergenceError(
        f"no convergence in {options.max_outer} outer iterations "
        f"(last score norm {norm:.3e})",
        trace=trace,
    )
