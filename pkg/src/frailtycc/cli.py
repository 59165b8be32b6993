"""Command-line front end.

Commands:

* ``fit --data F --out D [--left-restricted s0] [--theta-init x]
  [--beta-init v] [--lambda-at t1,t2,...]`` -- fit one dataset; writes
  ``fit.json`` and ``hazard.csv``.  Exit 0 on convergence, 2 on
  non-convergence (a result file is still written, flagged), 1 on input
  errors.
* ``simulate --design F --reps R --out D [--bootstrap B] [--seed S]`` -- run
  the replication harness; writes ``summary.txt`` and ``summary.csv``.
* ``bootstrap --data F --fit F --B n --out D [--seed S]`` -- weighted
  bootstrap around a previously saved fit; writes ``bootstrap.json`` and
  ``replicates.csv``.
* ``validate --data F`` -- print invariant violations; exit 1 if any.

Every command accepts ``--config FILE`` (a JSON object whose keys are the
long option names with underscores); explicit flags win over config values.
``--threads`` (or the FRAILTYCC_THREADS environment variable) bounds worker
parallelism in simulate/bootstrap; results do not depend on it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapConfig, bootstrap_fit
from .data import load_csv, load_json, validate
from .errors import DataFormatError, DomainError, FrailtyCCError, NonConvergenceError
from .hazard import evaluate
from .simulation import SimDesign, load_design, run_replications
from .solver import FitOptions, fit as run_fit


def _threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("FRAILTYCC_THREADS")
        value = int(env) if env else 0
    return value if value > 0 else (os.cpu_count() or 1)


def _load_dataset(path: str, s0=None):
    p = Path(path)
    if not p.exists():
        raise DataFormatError(f"{path}: no such file")
    if p.suffix.lower() == ".json":
        return load_json(p)
    return load_csv(p, s0=s0)


def _parse_floats(text: str) -> tuple[float, ...]:
    if not text:
        return ()
    return tuple(float(x) for x in text.split(","))


def _apply_config(args: argparse.Namespace, keys: list[str]) -> argparse.Namespace:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc = json.load(fh)
        for key in keys:
            if getattr(args, key, None) is None and key in doc:
                setattr(args, key, doc[key])
    return args


def _write_json(path: Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_hazard_csv(path: Path, hazard) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_g", "delta_lambda", "lambda_cum"])
        cum = hazard.origin_offset
        for t, d in zip(hazard.jump_times, hazard.jump_sizes):
            cum += d
            w.writerow([repr(float(t)), repr(float(d)), repr(float(cum))])


def cmd_fit(args) -> int:
    args = _apply_config(args, ["data", "out", "left_restricted", "theta_init",
                                "beta_init", "lambda_at"])
    if not args.data or not args.out:
        print("fit: --data and --out are required", file=sys.stderr)
        return 1
    dataset = _load_dataset(args.data)
    s0 = args.left_restricted
    if s0 is not None and dataset.s0 is None:
        print(
            f"warning: --left-restricted {s0} given but the dataset is not "
            "marked left-restricted; proceeding",
            file=sys.stderr,
        )
    gamma_init = None
    if args.beta_init is not None or args.theta_init is not None:
        beta0 = _parse_floats(args.beta_init) if args.beta_init else (0.0,) * dataset.p
        gamma_init = (beta0, args.theta_init if args.theta_init is not None else 1.0)
    options = FitOptions(gamma_init=gamma_init, left_restricted=s0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    query = _parse_floats(args.lambda_at) if args.lambda_at else ()

    try:
        result = run_fit(dataset, options)
    except NonConvergenceError as exc:
        _write_json(out / "fit.json", {
            "converged": False,
            "error": str(exc),
            "trace_tail": [
                {"gamma": list(t.gamma), "score_norm": t.score_norm}
                for t in exc.trace[-5:]
            ],
        })
        print(f"fit did not converge: {exc}", file=sys.stderr)
        return 2

    doc = {
        "converged": result.converged,
        "beta_hat": list(map(float, result.beta_hat)),
        "theta_hat": result.theta_hat,
        "s0": s0,
        "lambda0_s0": result.lambda0_s0,
        "outer_iterations": result.outer_iterations,
        "final_score_norm": result.final_score_norm,
        "theta_at_boundary": result.theta_at_boundary,
        "lambda_at": {repr(float(t)): float(evaluate(result.hazard, t)) for t in query},
    }
    _write_json(out / "fit.json", doc)
    _write_hazard_csv(out / "hazard.csv", result.hazard)
    print(f"fit: beta={doc['beta_hat']} theta={doc['theta_hat']:.6g} "
          f"({result.outer_iterations} iterations)")
    return 0


def cmd_simulate(args) -> int:
    args = _apply_config(args, ["design", "reps", "out", "bootstrap", "seed", "threads"])
    if not args.design or args.reps is None or not args.out:
        print("simulate: --design, --reps and --out are required", file=sys.stderr)
        return 1
    if args.reps < 1:
        print("simulate: --reps must be >= 1", file=sys.stderr)
        return 1
    design = load_design(args.design)
    if args.seed is not None:
        design = SimDesign.from_json({**design.to_json(), "seed": args.seed})
    bootstrap_config = None
    if args.bootstrap:
        if args.bootstrap < 2:
            print("simulate: --bootstrap must be >= 2", file=sys.stderr)
            return 1
        bootstrap_config = BootstrapConfig(
            n_replicates=args.bootstrap,
            seed=design.seed,
            lambda_query_times=design.lambda_query_times,
        )
    options = FitOptions(left_restricted=design.s0)
    summary = run_replications(
        design, args.reps, options, bootstrap_config, threads=_threads(args.threads)
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text(summary.table() + "\n")
    with open(out / "summary.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(summary.csv_rows())
    print(summary.table())
    return 0


def cmd_bootstrap(args) -> int:
    args = _apply_config(args, ["data", "fit", "B", "out", "seed", "ci_level",
                                "lambda_at", "unit", "threads"])
    if not args.data or args.B is None or not args.out:
        print("bootstrap: --data, --B and --out are required", file=sys.stderr)
        return 1
    if args.B < 2:
        print("bootstrap: --B must be >= 2", file=sys.stderr)
        return 1
    dataset = _load_dataset(args.data)
    options = FitOptions()
    if args.fit:
        with open(args.fit) as fh:
            prior = json.load(fh)
        if not prior.get("converged"):
            print("bootstrap: the supplied fit is not converged", file=sys.stderr)
            return 1
        options = FitOptions(
            gamma_init=(tuple(prior["beta_hat"]), prior["theta_hat"]),
            left_restricted=prior.get("s0"),
        )
    config = BootstrapConfig(
        n_replicates=args.B,
        seed=args.seed if args.seed is not None else 0,
        ci_level=args.ci_level if args.ci_level is not None else 0.95,
        lambda_query_times=_parse_floats(args.lambda_at) if args.lambda_at else (),
        unit=args.unit or "matched_set",
    )
    result = bootstrap_fit(dataset, options, config, threads=_threads(args.threads))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        name: {
            "est": float(result.base_estimates[k]),
            "se": result.se[name],
            "ci_low": result.ci[name][0],
            "ci_high": result.ci[name][1],
        }
        for k, name in enumerate(result.estimand_names)
    }
    doc["n_replicates"] = config.n_replicates
    doc["n_failures"] = len(result.failures)
    _write_json(out / "bootstrap.json", doc)
    with open(out / "replicates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", *result.estimand_names])
        for b, row in enumerate(result.replicate_estimates):
            w.writerow([b, *(repr(float(x)) for x in row)])
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0


def cmd_validate(args) -> int:
    args = _apply_config(args, ["data"])
    if not args.data:
        print("validate: --data is required", file=sys.stderr)
        return 1
    dataset = _load_dataset(args.data)
    violations = validate(dataset)
    if not violations:
        print(f"{args.data}: ok ({dataset.n_sets} matched sets, p={dataset.p})")
        return 0
    for v in violations:
        print(f"set {v.set_index} {v.family} {v.subject}: {v.rule}: {v.message}")
    return 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frailtycc",
                                 description="Shared frailty models for matched "
                                             "case-control family survival data")
    sub = ap.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one dataset")
    p_fit.add_argument("--data")
    p_fit.add_argument("--out")
    p_fit.add_argument("--left-restricted", dest="left_restricted", type=float)
    p_fit.add_argument("--theta-init", dest="theta_init", type=float)
    p_fit.add_argument("--beta-init", dest="beta_init")
    p_fit.add_argument("--lambda-at", dest="lambda_at")
    p_fit.add_argument("--config")
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="run the replication harness")
    p_sim.add_argument("--design")
    p_sim.add_argument("--reps", type=int)
    p_sim.add_argument("--out")
    p_sim.add_argument("--bootstrap", type=int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--threads", type=int)
    p_sim.add_argument("--config")
    p_sim.set_defaults(func=cmd_simulate)

    p_boot = sub.add_parser("bootstrap", help="weighted bootstrap inference")
    p_boot.add_argument("--data")
    p_boot.add_argument("--fit", dest="fit")
    p_boot.add_argument("--B", dest="B", type=int)
    p_boot.add_argument("--out")
    p_boot.add_argument("--seed", type=int)
    p_boot.add_argument("--ci-level", dest="ci_level", type=float)
    p_boot.add_argument("--lambda-at", dest="lambda_at")
    p_boot.add_argument("--unit", choices=["matched_set", "family"])
    p_boot.add_argument("--threads", type=int)
    p_boot.add_argument("--config")
    p_boot.set_defaults(func=cmd_bootstrap)

    p_val = sub.add_parser("validate", help="check dataset invariants")
    p_val.add_argument("--data")
    p_val.add_argument("--config")
    p_val.set_defaults(func=cmd_validate)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataFormatError, DomainError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FrailtyCCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
