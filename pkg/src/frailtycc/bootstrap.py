"""Weighted-bootstrap standard errors and percentile confidence intervals.

Each replicate draws i.i.d. unit-exponential weights, standardizes them to
mean 1, and refits the model with every per-unit contribution multiplied by
its weight: hazard-stage numerators and denominators, the per-family
relatives terms, and the per-matched-set proband terms (which carry the case
family's weight).  Refits warm-start at the base estimates.

The resampling unit defaults to the matched set (one weight shared by its two
families), which preserves the pairing the proband likelihood conditions on;
``unit="family"`` draws one weight per family instead for sensitivity
analysis.

Replicate weight streams come from a counter-based generator keyed by
(seed, replicate index), so replicates are order-independent, parallel-safe,
and extending the replicate count leaves earlier replicates unchanged.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, FlatData, flatten
from .errors import BootstrapError, DomainError, FrailtyCCError
from .hazard import evaluate
from .solver import FitOptions, FitResult, fit

_STREAM_BOOTSTRAP = 2  # keeps weight streams disjoint from dataset streams


def philox_rng(seed: int, stream: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream, a, b); order-independent."""
    if not (0 <= a < 2**30 and 0 <= b < 2**30):
        raise DomainError("stream indices must fit in 30 bits")
    lane = (np.uint64(stream) << np.uint64(60)) | (np.uint64(a) << np.uint64(30)) | np.uint64(b)
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), lane], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class BootstrapConfig:
    n_replicates: int
    seed: int
    ci_level: float = 0.95
    lambda_query_times: tuple[float, ...] = ()
    unit: str = "matched_set"  # or "family"

    def __post_init__(self):
        if self.n_replicates < 2:
            raise DomainError("bootstrap needs n_replicates >= 2")
        if not (0.0 < self.ci_level < 1.0):
            raise DomainError("ci_level must lie in (0, 1)")
        if self.unit not in ("matched_set", "family"):
            raise DomainError("unit must be 'matched_set' or 'family'")
        object.__setattr__(self, "lambda_query_times", tuple(self.lambda_query_times))


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    estimand_names: tuple[str, ...]
    base_estimates: np.ndarray
    replicate_estimates: np.ndarray  # (B, K), NaN rows for failed replicates
    se: dict
    ci: dict
    failures: tuple[int, ...]


def draw_weights(rng: np.random.Generator, count: int) -> np.ndarray:
    """Standardized unit-exponential weights: shape (count,), mean exactly 1."""
    if count < 1:
        raise DomainError("count must be >= 1")
    w = rng.standard_exponential(count)
    return w / w.mean()


def estimand_names(p: int, query_times: tuple[float, ...], left_restricted: bool) -> tuple[str, ...]:
    names = [f"beta_{i + 1}" for i in range(p)] + ["theta"]
    names += [f"lambda0@{t:g}" for t in query_times]
    if left_restricted:
        names.append("lambda0@s0")
    return tuple(names)


def extract_estimates(res: FitResult, query_times: tuple[float, ...],
                      left_restricted: bool) -> np.ndarray:
    vals = list(res.beta_hat) + [res.theta_hat]
    vals += [float(evaluate(res.hazard, t)) for t in query_times]
    if left_restricted:
        vals.append(float(res.lambda0_s0 if res.lambda0_s0 is not None else 0.0))
    return np.asarray(vals, dtype=float)


def _family_weights_for(flat: FlatData, config: BootstrapConfig, b: int, stream_a: int) -> np.ndarray:
    rng = philox_rng(config.seed, _STREAM_BOOTSTRAP, stream_a, b)
    if config.unit == "matched_set":
        xi = draw_weights(rng, flat.n_sets)
        return np.repeat(xi, 2)
    return draw_weights(rng, flat.n_families)


def _one_replicate(flat: FlatData, warm: FitOptions, config: BootstrapConfig,
                   b: int, stream_a: int, query: tuple[float, ...], restricted: bool):
    fam_wt = _family_weights_for(flat, config, b, stream_a)
    try:
        res = fit(flat, warm, weights=fam_wt)
    except FrailtyCCError as exc:
        return b, None, f"{type(exc).__name__}: {exc}"
    return b, extract_estimates(res, query, restricted), None


def _worker(args):  # top-level for pickling
    return _one_replicate(*args)


def bootstrap_fit(
    dataset: Dataset,
    options: FitOptions,
    config: BootstrapConfig,
    base: FitResult | None = None,
    threads: int = 1,
    max_failure_fraction: float = 0.2,
    _stream_index: int = 0,
) -> BootstrapResult:
    """Refit under B weight draws, summarize SEs and percentile CIs."""
    flat = dataset if isinstance(dataset, FlatData) else flatten(dataset)
    if base is None:
        base = fit(flat, options)
    if not base.converged:
        raise DomainError("bootstrap requires a converged base fit")
    restricted = options.left_restricted is not None
    query = config.lambda_query_times
    names = estimand_names(flat.p, query, restricted)
    base_est = extract_estimates(base, query, restricted)
    warm = replace(options, gamma_init=(tuple(base.beta_hat), base.theta_hat))

    B = config.n_replicates
    rows = np.full((B, len(names)), np.nan)
    failures: list[int] = []
    fail_msgs: list[str] = []
    jobs = [(flat, warm, config, b, _stream_index, query, restricted) for b in range(B)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_worker, jobs, chunksize=max(1, B // (4 * threads))))
    else:
        results = [_one_replicate(*j) for j in jobs]
    for b, est, err in sorted(results, key=lambda r: r[0]):
        if est is None:
            failures.append(b)
            fail_msgs.append(err)
        else:
            rows[b] = est

    if len(failures) > max_failure_fraction * B:
        raise BootstrapError(
            f"{len(failures)}/{B} bootstrap replicates failed "
            f"(first error: {fail_msgs[0] if fail_msgs else 'n/a'})"
        )

    good = rows[~np.isnan(rows[:, 0])]
    alpha = 1.0 - config.ci_level
    se = {}
    ci = {}
    for k, name in enumerate(names):
        col = good[:, k]
        se[name] = float(np.std(col, ddof=1))
        lo, hi = np.quantile(col, [alpha / 2.0, 1.0 - alpha / 2.0])
        ci[name] = (float(lo), float(hi))
    return BootstrapResult(
        estimand_names=names,
        base_estimates=base_est,
        replicate_estimates=rows,
        se=se,
        ci=ci,
        failures=tuple(failures),
    )
