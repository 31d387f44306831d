"""Experiment orchestration shared by the CLI: data loading, cross-validation
reports with estimation errors, and the multi-seed Cauchy example."""

import math
import time
from dataclasses import replace

import numpy as np

from .estimator import CvPlan, cross_validate, estimation_errors
from .io import ExperimentSpec, read_dataset_csv, sigma_from_spec
from .rho import Dataset
from .simulate import make_rng, sample_elliptical
from .solver import CompositeObjective, SolverConfig, fit

RNG_NAME = "numpy.random.Generator(Philox)"
EXAMPLE_Q = 50
EXAMPLE_N = 30
EXAMPLE_ALPHAS = tuple(2.0**k for k in range(1, 16))
PANELS = ("cv", "eps0", "eps1", "eps2")


def simulate_from_spec(spec, seed=None):
    """Draw the dataset described by ``spec.data["simulate"]``.

    Returns ``(points, sigma_true, metadata)``.
    """
    sim = spec.data["simulate"]
    seed = sim.get("seed", 0) if seed is None else seed
    sigma = sigma_from_spec(sim["sigma"])
    rng = make_rng(seed)
    x = sample_elliptical(sigma, sim["n"], sim.get("distribution", "cauchy"), sim.get("nu"), rng)
    meta = {"rng": RNG_NAME, "seed": int(seed), "distribution": sim.get("distribution", "cauchy"),
            "n": int(sim["n"]), "q": int(sigma.shape[0])}
    return x, sigma, meta


def load_data(spec, seed=None):
    """Return ``(Dataset, sigma_true or None, metadata)`` for a spec."""
    if "file" in spec.data:
        data = read_dataset_csv(spec.data["file"])
        return data, None, {"source": str(spec.data["file"])}
    x, sigma, meta = simulate_from_spec(spec, seed)
    return Dataset.from_points(x), sigma, meta


def report_row(alpha, cv_value, errors, iterations, runtime_ms):
    e = errors if errors is not None else (math.nan,) * 3
    return {"alpha": float(alpha), "cv_value": float(cv_value), "eps0": e[0], "eps1": e[1],
            "eps2": e[2], "iterations": int(iterations), "runtime_ms": round(float(runtime_ms), 3)}


def cv_report(rho, data, penalty, alphas, config=None, threads=1, sigma_true=None, check=True):
    """Cross-validate, then refit on all data along the grid.

    ``iterations`` and ``runtime_ms`` in each row cover the n leave-one-out
    fits plus the full-data fit at that alpha. Estimation errors are NaN
    when ``sigma_true`` is unknown.

    Returns ``(CvResult, rows, full_fits)``.
    """
    cfg = config or SolverConfig()
    cv = cross_validate(rho, data, penalty, CvPlan(tuple(alphas)), cfg, threads, check)
    rows, fits = [], []
    start = cfg.start
    for k, alpha in enumerate(cv.alphas):
        res = fit(CompositeObjective(rho, data, penalty, alpha), replace(cfg, start=start), check=False)
        start = res.sigma
        fits.append(res)
        err = None if sigma_true is None else estimation_errors(sigma_true, res.sigma)
        rows.append(report_row(alpha, cv.cv_values[k], err, cv.iterations[k] + res.iterations,
                               cv.runtime_ms[k] + res.runtime_ms))
    return cv, rows, fits


def example_spec(seed=0):
    """The Cauchy shrinkage example as an :class:`ExperimentSpec`."""
    return ExperimentSpec(
        rho={"name": "tyler"},
        penalty={"kind": "exp", "base": {"kind": "pi1"}},
        alphas=list(EXAMPLE_ALPHAS),
        data={"simulate": {"distribution": "cauchy", "n": EXAMPLE_N, "seed": int(seed),
                           "sigma": {"kind": "spiked", "q": EXAMPLE_Q, "leading": [10, 5, 3, 2]}}},
        solver={"start": "identity"},
    ).validate()


def is_u_shaped(values):
    """True if ``values`` is non-increasing up to its argmin, non-decreasing after."""
    v = np.asarray(values, float)
    k = int(np.argmin(v))
    return bool(np.all(np.diff(v[: k + 1]) <= 0) and np.all(np.diff(v[k:]) >= 0))


def run_example_seed(seed, threads=1, config=None):
    """One replicate of the example. Returns a dict with rows and summary."""
    spec = example_spec(seed)
    t0 = time.perf_counter()
    data, sigma, meta = load_data(spec)
    q = data.dim
    cfg = config or spec.solver_config()
    cv, rows, _ = cv_report(spec.build_rho(q), data, spec.build_penalty(), spec.alphas, cfg,
                            threads, sigma)
    return {
        "seed": int(seed),
        "rows": rows,
        "argmin_log2_alpha": int(round(math.log2(cv.best_alpha))),
        "u_shaped": is_u_shaped(cv.cv_values),
        "unconverged_fits": int(np.sum(cv.unconverged)),
        "runtime_s": time.perf_counter() - t0,
        "metadata": meta,
    }


def long_format(results):
    """Tidy rows ``(seed, panel, log2_alpha, value)`` for the four panels."""
    out = []
    for r in results:
        for row in r["rows"]:
            la = int(round(math.log2(row["alpha"])))
            for panel, col in zip(PANELS, ("cv_value", "eps0", "eps1", "eps2")):
                out.append({"seed": r["seed"], "panel": panel, "log2_alpha": la, "value": row[col]})
    return out


def summarize(results):
    argmins = [r["argmin_log2_alpha"] for r in results]
    counts = {str(k): argmins.count(k) for k in sorted(set(argmins))}
    eps1 = np.array([[row["eps1"] for row in r["rows"]] for r in results])
    return {
        "seeds": [r["seed"] for r in results],
        "rng": RNG_NAME,
        "argmin_counts": counts,
        "modal_log2_alpha": max(counts, key=lambda k: (counts[k], -int(k))) if counts else None,
        "u_shaped_fraction": float(np.mean([r["u_shaped"] for r in results])) if results else 0.0,
        "mean_eps1": eps1.mean(axis=0).tolist() if results else [],
        "max_runtime_s": max((r["runtime_s"] for r in results), default=0.0),
    }
