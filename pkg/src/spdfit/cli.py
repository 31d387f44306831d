"""Command line interface.

Subcommands: ``simulate``, ``fit``, ``cv``, ``reproduce-example`` and
``check``. Exit codes: 0 success, 1 input error, 2 non-coercive problem
(no minimizer), 3 numerical failure.
"""

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io, pipeline
from .coercivity import plan_coercivity
from .estimator import estimation_errors, fit_regularized
from .exceptions import InputError, NonCoerciveError, SpdFitError, StepFailureError

TRACE_COLUMNS = ("iteration", "objective", "grad_norm", "step_eps", "step_decrease", "halvings")
LONG_COLUMNS = ("seed", "panel", "log2_alpha", "value")
ARGMIN_COLUMNS = ("seed", "argmin_log2_alpha", "u_shaped", "unconverged_fits", "runtime_s")


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("SPDFIT_THREADS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise InputError(f"SPDFIT_THREADS must be an integer, got {env!r}") from None


def _outdir(args):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _load_spec(args):
    if args.spec is None:
        raise InputError("--spec is required")
    return io.ExperimentSpec.load(args.spec)


def _config(spec, args):
    return spec.solver_config(override_coercivity=args.override_coercivity)


def cmd_simulate(args):
    spec = _load_spec(args)
    if "simulate" not in spec.data:
        raise InputError("spec.data has no 'simulate' section")
    out = _outdir(args)
    x, sigma, meta = pipeline.simulate_from_spec(spec, args.seed)
    io.write_dataset_csv(out / "data.csv", x)
    io.write_matrix_csv(out / "sigma_true.csv", sigma)
    _write_json(out / "metadata.json", meta)
    print(out / "data.csv")
    return 0


def _trace_rows(res):
    rows = []
    for k, (f, g) in enumerate(zip(res.objective_trace, res.grad_norms)):
        step = k < len(res.step_eps)
        rows.append({"iteration": k, "objective": float(f), "grad_norm": float(g),
                     "step_eps": float(res.step_eps[k]) if step else np.nan,
                     "step_decrease": float(res.step_decrease[k]) if step else np.nan,
                     "halvings": int(res.step_halvings[k]) if step else ""})
    return rows


def _single_fit(spec, args, out):
    data, sigma_true, meta = pipeline.load_data(spec, args.seed)
    rho = spec.build_rho(data.dim)
    res = fit_regularized(rho, data, spec.build_penalty(), float(spec.alpha), _config(spec, args))
    io.write_matrix_csv(out / "sigma_hat.csv", res.sigma)
    io.write_rows_csv(out / "trace.csv", TRACE_COLUMNS, _trace_rows(res))
    errors = None if sigma_true is None else estimation_errors(sigma_true, res.sigma)
    report = {
        "mode": "fit",
        "alpha": float(spec.alpha),
        "converged": res.converged,
        "iterations": res.iterations,
        "halvings_total": res.halvings_total,
        "objective": res.objective_trace[-1],
        "grad_norm": res.grad_norms[-1],
        "runtime_ms": res.runtime_ms,
        "errors": None if errors is None else dict(zip(("eps0", "eps1", "eps2"), errors)),
        "coercivity": None if res.coercivity is None else res.coercivity.to_dict(),
        "diagnostic": None if res.diagnostic is None else res.diagnostic.to_dict(),
        "data": meta,
        "spec": spec.to_dict(),
    }
    _write_json(out / "report.json", report)
    print(f"converged={res.converged} iterations={res.iterations} "
          f"objective={res.objective_trace[-1]:.10g}")
    return 0


def _cv(spec, args, out):
    if not spec.alphas:
        raise InputError("spec.alphas (the CV grid) is required for cross-validation")
    data, sigma_true, meta = pipeline.load_data(spec, args.seed)
    rho = spec.build_rho(data.dim)
    cv, rows, fits = pipeline.cv_report(rho, data, spec.build_penalty(), spec.alphas,
                                        _config(spec, args), _threads(args), sigma_true)
    best = fits[cv.best_index]
    io.write_rows_csv(out / "cv.csv", io.REPORT_COLUMNS, rows)
    io.write_matrix_csv(out / "sigma_hat.csv", best.sigma)
    io.write_rows_csv(out / "trace.csv", TRACE_COLUMNS, _trace_rows(best))
    report = {
        "mode": "cv",
        "best_alpha": cv.best_alpha,
        "rows": rows,
        "unconverged_loo_fits": cv.unconverged.tolist(),
        "coercivity": None if best.coercivity is None else best.coercivity.to_dict(),
        "data": meta,
        "spec": spec.to_dict(),
    }
    _write_json(out / "report.json", report)
    for r in rows:
        flag = " *" if r["alpha"] == cv.best_alpha else ""
        print(f"alpha={r['alpha']:<8g} cv={r['cv_value']:.6g}{flag}")
    return 0


def cmd_fit(args):
    spec = _load_spec(args)
    out = _outdir(args)
    if spec.alphas:
        return _cv(spec, args, out)
    return _single_fit(spec, args, out)


def cmd_cv(args):
    return _cv(_load_spec(args), args, _outdir(args))


def cmd_check(args):
    spec = _load_spec(args)
    data, _, _ = pipeline.load_data(spec, args.seed)
    rho = spec.build_rho(data.dim)
    rep = plan_coercivity(rho, data, spec.build_penalty(), float(spec.alpha))
    text = json.dumps(rep.to_dict(), indent=2, sort_keys=True, default=_jsonable)
    if args.out is not None:
        _write_json(_outdir(args) / "coercivity.json", rep.to_dict())
    print(text)
    return 2 if rep.status == "fail" else 0


def cmd_reproduce(args):
    out = _outdir(args)
    base = 0 if args.seed is None else args.seed
    threads = _threads(args)
    results = []
    for seed in range(base, base + args.seeds):
        r = pipeline.run_example_seed(seed, threads)
        results.append(r)
        print(f"seed={seed} argmin=2^{r['argmin_log2_alpha']} u_shaped={r['u_shaped']} "
              f"time={r['runtime_s']:.1f}s", flush=True)
    io.write_rows_csv(out / "example_long.csv", LONG_COLUMNS, pipeline.long_format(results))
    io.write_rows_csv(out / "example_rows.csv", ("seed",) + io.REPORT_COLUMNS,
                      [{"seed": r["seed"], **row} for r in results for row in r["rows"]])
    io.write_rows_csv(out / "example_argmin.csv", ARGMIN_COLUMNS,
                      [{c: r[c] for c in ARGMIN_COLUMNS} for r in results])
    summary = pipeline.summarize(results)
    summary["spec"] = pipeline.example_spec(base).to_dict()
    _write_json(out / "summary.json", summary)
    print(f"argmin counts (log2 alpha): {summary['argmin_counts']}")
    print(f"U-shaped CV curves: {summary['u_shaped_fraction']:.0%}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="spdfit", description="Regularized scatter M-estimation.")
    p.add_argument("-v", "--verbose", action="store_true", help="show numerical warnings")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--spec", help="experiment spec (JSON)")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides the spec)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker processes (default $SPDFIT_THREADS or 1)")
        sp.add_argument("--override-coercivity", action="store_true",
                        help="run even if no minimizer exists")
        sp.set_defaults(func=fn)
        return sp

    add("simulate", cmd_simulate, "draw a dataset")
    add("fit", cmd_fit, "fit one alpha, or cross-validate if the spec has a grid")
    add("cv", cmd_cv, "leave-one-out cross-validation over the alpha grid")
    add("check", cmd_check, "coercivity diagnostic only")
    rep = add("reproduce-example", cmd_reproduce, "multi-seed Cauchy shrinkage example")
    rep.add_argument("--seeds", type=int, default=20, help="number of seeds (default 20)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.out is None and args.func is not cmd_check:
        args.out = "."
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return args.func(args)
    except NonCoerciveError as exc:
        reason = {"error": "non_coercive", "message": str(exc),
                  "report": None if exc.report is None else exc.report.to_dict()}
        print(json.dumps(reason, default=_jsonable), file=sys.stderr)
        return exc.exit_code
    except StepFailureError as exc:
        print(json.dumps({"error": "step_failure", "message": str(exc),
                          "diagnostics": exc.diagnostics}, default=_jsonable), file=sys.stderr)
        return exc.exit_code
    except SpdFitError as exc:
        kind = "input" if exc.exit_code == 1 else "numerical"
        print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "input", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
