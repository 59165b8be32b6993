"""Log-likelihoods, analytic scores, and the profile score Jacobian.

Two likelihood pieces, evaluated at a parameter pair (beta, theta) and a
*frozen* step hazard:

* Proband part: the retrospective matched-pair likelihood.  Each matched set
  contributes the probability that the case family's proband is the failure,

      a_r / (a_r + b_r),   a = e^{b'Z0} * [M_1/M_0](H0),  H0 = L(T0) e^{b'Z0},

  with the control quantities in b_r.  Scores follow by differentiating the
  moment ratio with the hazard held fixed.

* Relatives part: event terms d_ij log(jump(T_ij) e^{b'Z_ij}) plus, per
  family, the log of the posterior-predictive integral

      M_{N + d0}(H_rel + H0) / M_{d0}(H0),

  i.e. the frailty is integrated against its posterior given the proband
  record.  Scores for beta use the posterior means M_{k+1}/M_k of that same
  posterior; the theta score differentiates both the numerator tilt and the
  posterior normalizer.

``total_score`` is the estimating function: (proband + relatives) scores
divided by the number of matched sets.  ``score_jacobian`` differentiates the
*profile* map gamma -> total_score(gamma, hazard(gamma)) by central
differences, re-estimating the hazard at every perturbed gamma.

Per-family bootstrap weights multiply each family's contribution; a matched
set's proband term carries its case family's weight.  All reductions run in
the canonical family order fixed by ``data.flatten``, so results are
bit-reproducible and invariant to permutations of the input sets.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset, FlatData, flatten
from .errors import DomainError, FrailtyCCError
from .hazard import GammaParams, StepCumHazard, _exp_weights, _family_weights
from .kernels import (
    FrailtyLaw,
    LawKind,
    dlog_tilted_moment_dtheta,
    log_tilted_moment,
)


@dataclass(frozen=True, eq=False)
class EvalPoint:
    """A (gamma, hazard, law) triple at which likelihood pieces are evaluated."""

    gamma: GammaParams
    hazard: StepCumHazard
    law: FrailtyLaw

    def __post_init__(self):
        if self.law.theta != self.gamma.theta:
            object.__setattr__(self, "law", self.law.with_theta(self.gamma.theta))


@dataclass(frozen=True)
class ScoreVector:
    """Estimating-function components: p entries for beta, then one for theta."""

    components: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.components, dtype=float))
        if not np.all(np.isfinite(c)):
            raise DomainError("score components must be finite")
        object.__setattr__(self, "components", c)

    @property
    def beta_part(self) -> np.ndarray:
        return self.components[:-1]

    @property
    def theta_part(self) -> float:
        return float(self.components[-1])

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.components)))


# ---------------------------------------------------------------------------
# Moment helpers, vectorized for the gamma law with a generic fallback
# ---------------------------------------------------------------------------


class _MomentTable:
    """log M_k(h) and its theta-derivative for integer k arrays."""

    def __init__(self, law: FrailtyLaw, k_max: int):
        self.law = law
        self.k_max = int(k_max)
        if law.kind is LawKind.GAMMA_MEAN_ONE:
            theta = law.theta
            i = np.arange(max(self.k_max, 1))
            self._cum_log = np.concatenate([[0.0], np.cumsum(np.log1p(i * theta))])
            self._cum_inv = np.concatenate([[0.0], np.cumsum(1.0 / (1.0 + i * theta))])

    def log_moment(self, k: np.ndarray, h: np.ndarray) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64)
        h = np.asarray(h, dtype=float)
        if self.law.kind is LawKind.GAMMA_MEAN_ONE:
            theta = self.law.theta
            return self._cum_log[k] - (1.0 / theta + k) * np.log1p(theta * h)
        out = np.empty(np.broadcast(k, h).shape)
        kb, hb = np.broadcast_arrays(k, h)
        for idx in np.ndindex(out.shape):
            out[idx] = log_tilted_moment(self.law, int(kb[idx]), float(hb[idx]))
        return out

    def dlog_moment_dtheta(self, k: np.ndarray, h: np.ndarray) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64)
        h = np.asarray(h, dtype=float)
        if self.law.kind is LawKind.GAMMA_MEAN_ONE:
            theta = self.law.theta
            return (
                (k - self._cum_inv[k]) / theta
                + np.log1p(theta * h) / theta**2
                - (1.0 / theta + k) * h / (1.0 + theta * h)
            )
        out = np.empty(np.broadcast(k, h).shape)
        kb, hb = np.broadcast_arrays(k, h)
        for idx in np.ndindex(out.shape):
            out[idx] = dlog_tilted_moment_dtheta(self.law, int(kb[idx]), float(hb[idx]))
        return out

    def posterior_mean(self, k: np.ndarray, h: np.ndarray) -> np.ndarray:
        if self.law.kind is LawKind.GAMMA_MEAN_ONE:
            inv = 1.0 / self.law.theta
            return (inv + np.asarray(k)) / (inv + np.asarray(h))
        return np.exp(self.log_moment(np.asarray(k) + 1, h) - self.log_moment(k, h))


@dataclass(frozen=True, eq=False)
class _LikPieces:
    """Shared per-family quantities at one evaluation point."""

    flat: FlatData
    pro_w: np.ndarray
    rel_w: np.ndarray
    h0: np.ndarray  # proband exposure L(T_i0) e^{b'Z_i0}
    h_rel: np.ndarray  # relatives' total exposure per family
    n_dot: np.ndarray  # relatives' event count per family (int)
    table: _MomentTable


def _pieces(flat: FlatData, point: EvalPoint) -> _LikPieces:
    beta = point.gamma.beta
    if beta.shape != (flat.p,):
        raise DomainError(f"beta has length {beta.shape[0]}, dataset has p={flat.p}")
    pro_w = _exp_weights(flat.pro_z, beta)
    rel_w = _exp_weights(flat.rel_z, beta)
    h0 = point.hazard.values(flat.pro_time) * pro_w
    h_ij = point.hazard.values(flat.rel_time) * rel_w
    F = flat.n_families
    h_rel = np.bincount(flat.rel_fam, weights=h_ij, minlength=F)
    n_dot = np.bincount(flat.rel_fam, weights=flat.rel_event, minlength=F).astype(np.int64)
    table = _MomentTable(point.law, int(n_dot.max(initial=0)) + 2)
    return _LikPieces(flat, pro_w, rel_w, h0, h_rel, n_dot, table)


def _proband_pair_terms(pc: _LikPieces, beta: np.ndarray):
    """Per-set log terms and softmax weights for the matched-pair likelihood."""
    flat = pc.flat
    log_xi = pc.table.log_moment(np.ones(flat.n_families, dtype=np.int64), pc.h0) - \
        pc.table.log_moment(np.zeros(flat.n_families, dtype=np.int64), pc.h0)
    log_side = flat.pro_z @ beta + log_xi
    log_a = log_side[0::2]  # case families
    log_b = log_side[1::2]  # control families
    log_term = -np.log1p(np.exp(-np.abs(log_a - log_b)))
    log_term = np.where(log_a >= log_b, log_term, log_term + (log_a - log_b))
    w_case = 1.0 / (1.0 + np.exp(log_b - log_a))
    return log_term, w_case


def proband_loglik(dataset: Dataset, point: EvalPoint, weights=None) -> float:
    """Sum over matched sets of the log retrospective pair probability."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    fam_wt = _family_weights(flat, weights)
    pc = _pieces(flat, point)
    log_term, _ = _proband_pair_terms(pc, point.gamma.beta)
    if not np.all(np.isfinite(log_term)):
        bad = int(np.flatnonzero(~np.isfinite(log_term))[0])
        raise FrailtyCCError(f"proband likelihood non-finite at matched set {bad}")
    return float(np.sum(fam_wt[0::2] * log_term))


def _proband_score_parts(pc: _LikPieces, beta: np.ndarray, set_wt: np.ndarray):
    flat = pc.flat
    F = flat.n_families
    k0 = np.zeros(F, dtype=np.int64)
    log_m0 = pc.table.log_moment(k0, pc.h0)
    log_m1 = pc.table.log_moment(k0 + 1, pc.h0)
    log_m2 = pc.table.log_moment(k0 + 2, pc.h0)
    xi10 = np.exp(log_m1 - log_m0)
    psi1 = np.exp(log_m2 - log_m1)  # M2/M1
    # d log xi10 / d beta_l = h0 z_l (xi10 - M2/M1);  d log xi10 / d theta
    rb_common = pc.h0 * (xi10 - psi1)  # multiply by z_l per coordinate
    rt = pc.table.dlog_moment_dtheta(k0 + 1, pc.h0) - pc.table.dlog_moment_dtheta(k0, pc.h0)

    _, w_case = _proband_pair_terms(pc, beta)
    w_ctrl = 1.0 - w_case

    p = flat.p
    comp = np.zeros(p + 1)
    zc = flat.pro_z[0::2]
    zk = flat.pro_z[1::2]
    rb_c = rb_common[0::2][:, None] * zc
    rb_k = rb_common[1::2][:, None] * zk
    for l in range(p):
        term = zc[:, l] + rb_c[:, l] - (
            w_case * (zc[:, l] + rb_c[:, l]) + w_ctrl * (zk[:, l] + rb_k[:, l])
        )
        comp[l] = np.sum(set_wt * term)
    rt_c = rt[0::2]
    rt_k = rt[1::2]
    comp[p] = np.sum(set_wt * (rt_c - (w_case * rt_c + w_ctrl * rt_k)))
    return comp


def proband_score(dataset: Dataset, point: EvalPoint, weights=None) -> ScoreVector:
    """Analytic gradient of proband_loglik in (beta, theta), hazard frozen."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    fam_wt = _family_weights(flat, weights)
    pc = _pieces(flat, point)
    return ScoreVector(_proband_score_parts(pc, point.gamma.beta, fam_wt[0::2]))


def _relative_jump_logs(pc: _LikPieces, hazard: StepCumHazard):
    flat = pc.flat
    ev = flat.rel_event == 1.0
    jumps = hazard.jump_at(flat.rel_time[ev])
    if np.any(jumps <= 0.0):
        t_bad = flat.rel_time[ev][jumps <= 0.0][0]
        raise FrailtyCCError(
            f"hazard has no jump at relative failure time {t_bad!r}"
        )
    return ev, np.log(jumps)


def relatives_loglik(dataset: Dataset, point: EvalPoint, weights=None) -> float:
    """Event terms plus per-family posterior-predictive integrals."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    fam_wt = _family_weights(flat, weights)
    pc = _pieces(flat, point)
    ev, log_jumps = _relative_jump_logs(pc, point.hazard)
    F = flat.n_families
    lin = flat.rel_z @ point.gamma.beta
    event_terms = np.bincount(
        flat.rel_fam[ev], weights=log_jumps + lin[ev], minlength=F
    )
    d0 = flat.pro_event.astype(np.int64)
    log_post = pc.table.log_moment(pc.n_dot + d0, pc.h_rel + pc.h0) - \
        pc.table.log_moment(d0, pc.h0)
    return float(np.sum(fam_wt * (event_terms + log_post)))


def relatives_score(dataset: Dataset, point: EvalPoint, weights=None) -> ScoreVector:
    """Analytic gradient of relatives_loglik in (beta, theta), hazard frozen."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    fam_wt = _family_weights(flat, weights)
    pc = _pieces(flat, point)
    F = flat.n_families
    p = flat.p
    d0 = flat.pro_event.astype(np.int64)
    h_tot = pc.h_rel + pc.h0
    psi_post = pc.table.posterior_mean(pc.n_dot + d0, h_tot)
    psi_prior = pc.table.posterior_mean(d0, pc.h0)
    h_ij = point.hazard.values(flat.rel_time) * pc.rel_w
    ev_w = flat.rel_event

    comp = np.zeros(p + 1)
    for l in range(p):
        sum_events = np.bincount(flat.rel_fam, weights=ev_w * flat.rel_z[:, l], minlength=F)
        s_l = np.bincount(flat.rel_fam, weights=h_ij * flat.rel_z[:, l], minlength=F)
        z0l = flat.pro_z[:, l]
        term = sum_events - (s_l + pc.h0 * z0l) * psi_post + pc.h0 * z0l * psi_prior
        comp[l] = np.sum(fam_wt * term)
    dtheta = pc.table.dlog_moment_dtheta(pc.n_dot + d0, h_tot) - \
        pc.table.dlog_moment_dtheta(d0, pc.h0)
    comp[p] = np.sum(fam_wt * dtheta)
    return ScoreVector(comp)


def total_score(dataset: Dataset, point: EvalPoint, weights=None) -> ScoreVector:
    """(proband score + relatives score) / n_sets: the estimating function."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    fam_wt = _family_weights(flat, weights)
    pc = _pieces(flat, point)
    u1 = _proband_score_parts(pc, point.gamma.beta, fam_wt[0::2])
    u2 = relatives_score(flat, point, weights=fam_wt).components
    return ScoreVector((u1 + u2) / flat.n_sets)


def score_jacobian(
    dataset: Dataset,
    point: EvalPoint,
    profiler: Callable[[GammaParams], StepCumHazard],
    weights=None,
    rel_step: float = 1e-5,
    warn_singular: bool = True,
) -> np.ndarray:
    """Central-difference Jacobian of gamma -> total_score(gamma, profiler(gamma)).

    The hazard is re-estimated at every perturbed gamma, so this is the
    derivative of the full profile map, which is what the outer Newton update
    needs.  Pass ``profiler=lambda g: point.hazard`` to freeze the hazard.
    """
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    gamma0 = point.gamma
    v0 = gamma0.vector
    dim = v0.size
    jac = np.zeros((dim, dim))
    for s in range(dim):
        step = rel_step * max(1.0, abs(v0[s]))
        vp = v0.copy()
        vp[s] += step
        vm = v0.copy()
        vm[s] -= step
        gp = GammaParams.from_vector(vp)
        gm = GammaParams.from_vector(vm)
        up = total_score(flat, EvalPoint(gp, profiler(gp), point.law), weights).components
        um = total_score(flat, EvalPoint(gm, profiler(gm), point.law), weights).components
        jac[:, s] = (up - um) / (2.0 * step)
    if warn_singular:
        sv = np.linalg.svd(jac, compute_uv=False)
        if sv[-1] <= 1e-12 * max(sv[0], 1.0):
            warnings.warn("profile score Jacobian is singular to tolerance 1e-12",
                          RuntimeWarning, stacklevel=2)
    return jac
