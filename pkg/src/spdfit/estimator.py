"""Regularized scatter fitting and leave-one-out cross-validation of the
penalty weight."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .coercivity import check_coercivity, plan_coercivity
from .exceptions import DimensionError, InputError, NonCoerciveError
from .solver import CompositeObjective, SolverConfig, fit
from .spd import as_spd, geodesic_distance

DEFAULT_ALPHAS = tuple(2.0**k for k in range(1, 16))


def fit_regularized(rho, data, penalty=None, alpha=0.0, config=None, check=True):
    """Minimize ``L_rho(S) + alpha * penalty(S)``.

    The returned :class:`~spdfit.solver.FitResult` carries the planner's
    coercivity report in ``coercivity``; for ``alpha == 0`` the unpenalized
    subspace diagnostic is also stored in ``diagnostic``.
    """
    obj = CompositeObjective(rho, data, penalty, alpha)
    res = fit(obj, config or SolverConfig(), check=check)
    if alpha == 0 or penalty is None:
        res.diagnostic = res.coercivity if res.coercivity is not None else check_coercivity(rho, data)
    return res


@dataclass(frozen=True)
class CvPlan:
    alphas: tuple = DEFAULT_ALPHAS
    refit_warm_start: bool = True
    keep_fits: bool = False

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        if a.ndim != 1 or a.size == 0:
            raise InputError("alpha grid must be a nonempty sequence")
        if np.any(a <= 0) or np.any(np.diff(a) <= 0):
            raise InputError("alpha grid must be positive and strictly ascending")
        object.__setattr__(self, "alphas", tuple(float(v) for v in a))


@dataclass(eq=False)
class CvResult:
    """Cross-validation curve.

    ``iterations``, ``unconverged`` and ``runtime_ms`` aggregate the n
    leave-one-out fits at each alpha. ``per_alpha_fits[k][i]`` is the fit
    without observation i at ``alphas[k]`` when the plan keeps fits.
    """

    alphas: np.ndarray
    cv_values: np.ndarray
    best_alpha: float
    leave_one_out_count: int
    iterations: np.ndarray
    unconverged: np.ndarray
    runtime_ms: np.ndarray
    per_alpha_fits: list = None

    @property
    def best_index(self):
        return int(np.flatnonzero(self.alphas == self.best_alpha)[0])


def score_point(rho, sigma, x):
    """``rho(x' S^{-1} x) + log det S``; tyler uses the det-one representative."""
    sigma = as_spd(sigma)
    logdet = sigma.logdet()
    s = float(x @ np.linalg.solve(sigma.entries, x))
    if rho.scale_invariant:
        q = sigma.dim
        s *= np.exp(logdet / q)
        logdet = 0.0
    return float(rho.rho(s)) + logdet


def _loo_curve(args):
    rho, data, penalty, i, alphas, cfg, warm, keep = args
    sub = data.leave_one_out(i)
    x = data.points[i]
    out = []
    start = cfg.start
    for alpha in alphas:
        c = replace(cfg, start=start) if warm else cfg
        res = fit(CompositeObjective(rho, sub, penalty, alpha), c, check=False)
        out.append((score_point(rho, res.sigma, x), res.iterations, res.converged,
                    res.runtime_ms, res.sigma if keep else None))
        if warm:
            start = res.sigma
    return out


def cross_validate(rho, data, penalty, plan=None, config=None, threads=1, check=True):
    """Leave-one-out cross-validation over the alpha grid.

    ``CV(alpha) = sum_i [rho(x_i' S_(i)^{-1} x_i) + log det S_(i)]`` where
    ``S_(i)`` is fitted without observation i (weights renormalized). The
    argmin breaks ties towards the smaller alpha.

    Raises
    ------
    NonCoerciveError
        If some leave-one-out problem provably has no minimizer; the
        message names the offending alpha and observation.
    """
    plan = plan or CvPlan()
    cfg = config or SolverConfig()
    if data.n < 2:
        raise InputError("cross-validation needs at least two observations")
    if rho.dim != data.dim:
        raise DimensionError("rho and data dimensions differ")
    alphas = plan.alphas
    if check and not cfg.override_coercivity:
        for i in range(data.n):
            sub = data.leave_one_out(i)
            for alpha in alphas:
                rep = plan_coercivity(rho, sub, penalty, alpha)
                if rep.status == "fail":
                    raise NonCoerciveError(
                        f"leave-one-out problem without observation {i} at alpha={alpha:g}: "
                        + rep.message, rep)
    jobs = [(rho, data, penalty, i, alphas, cfg, plan.refit_warm_start, plan.keep_fits)
            for i in range(data.n)]
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            curves = list(pool.map(_loo_curve, jobs))
    else:
        curves = [_loo_curve(j) for j in jobs]
    k = len(alphas)
    scores = np.array([[c[j][0] for j in range(k)] for c in curves])
    w = data.weights
    # unweighted sum for equal weights, the weighted analogue otherwise
    cv = data.n * (w @ scores)
    iters = np.array([sum(c[j][1] for c in curves) for j in range(k)])
    unconv = np.array([sum(not c[j][2] for c in curves) for j in range(k)])
    rt = np.array([sum(c[j][3] for c in curves) for j in range(k)])
    fits = [[c[j][4] for c in curves] for j in range(k)] if plan.keep_fits else None
    best = int(np.argmin(cv))
    return CvResult(np.asarray(alphas), cv, float(alphas[best]), data.n, iters, unconv, rt, fits)


def shape(sigma):
    """Determinant-one representative ``det(S)^{-1/q} S``."""
    s = as_spd(sigma)
    return s.entries * np.exp(-s.logdet() / s.dim)


def estimation_errors(sigma_true, sigma_hat):
    """Shape errors ``(eps0, eps1, eps2)`` between two scatter matrices.

    ``eps0`` compares leading eigenvectors up to sign, ``eps1`` the sorted
    log-eigenvalues and ``eps2`` is the geodesic distance of the shapes.
    """
    a, b = as_spd(shape(sigma_true)), as_spd(shape(sigma_hat))
    if a.dim != b.dim:
        raise DimensionError("dimension mismatch")
    u, v = a.eigvecs[:, 0], b.eigvecs[:, 0]
    eps0 = min(np.linalg.norm(u - v), np.linalg.norm(u + v))
    eps1 = np.linalg.norm(np.log(a.eigvals) - np.log(b.eigvals))
    return float(eps0), float(eps1), geodesic_distance(a, b)
