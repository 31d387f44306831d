"""Partial Newton iteration for minimizing ``L_rho + alpha * penalty`` over
SPD matrices, plus a dense full-Newton reference solver for small q."""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DomainError,
    IllConditionedHessianWarning,
    InputError,
    NonCoerciveError,
    RunawayError,
    StepFailureError,
)
from .rho import ScatterObjective, combine_models
from .spd import as_spd, eigh, eigvalsh, expm_sym, sym

# 4-point Gauss-Legendre rule on [0, 1]
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS

# below this relative size the decrease is integrated from slopes instead of
# differencing two objective values, which would be dominated by rounding
_DIRECT_DECREASE_RTOL = 1e-7


@dataclass(frozen=True, eq=False)
class CompositeObjective:
    """``f(S) = L_rho(S) + alpha * penalty(S)``."""

    rho: object
    data: object
    penalty: object = None
    alpha: float = 0.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise InputError("alpha must be nonnegative")
        object.__setattr__(self, "_scatter", ScatterObjective(self.rho, self.data))

    @property
    def dim(self):
        return self.data.dim

    @property
    def penalized(self):
        return self.penalty is not None and self.alpha > 0

    @property
    def scale_invariant_mode(self):
        return self.rho.scale_invariant and (
            not self.penalized or self.penalty.scale_invariant
        )

    def value_at_factor(self, b):
        v = self._scatter.value_at_factor(b)
        if self.penalized:
            v += self.alpha * self.penalty.value_at_factor(b)
        return v

    def value(self, sigma):
        sigma = as_spd(sigma)
        return self.value_at_factor(sigma.eigvecs * np.sqrt(sigma.eigvals))

    def local(self, b):
        parts = [(1.0, self._scatter.local(b))]
        if self.penalized:
            parts.append((self.alpha, self.penalty.local(b)))
        return parts[0][1] if len(parts) == 1 else combine_models(parts)

    def gradient(self, b):
        return self.local(b).gradient

    def hess_form(self, a, b):
        return self.local(b).hess_form(a)


@dataclass(frozen=True)
class SolverConfig:
    """Tuning of the partial Newton iteration.

    ``start`` is ``"auto"``, ``"identity"``, ``"sample_covariance"`` or an
    SPD array. ``"auto"`` uses the sample second moment for unpenalized
    gaussian/tdist fits and the identity otherwise.
    """

    step_constant: float = 3.0
    grad_tol: float = 1e-8
    max_iters: int = 500
    max_halvings: int = 60
    start: object = "auto"
    reorth_every: int = 50
    ridge: float = 1e-10
    runaway: float = 1e6
    override_coercivity: bool = False

    def __post_init__(self):
        if not self.step_constant > 2:
            raise InputError("step_constant must exceed 2")
        if self.max_iters < 1 or self.max_halvings < 0:
            raise InputError("max_iters must be positive and max_halvings nonnegative")


@dataclass
class StepInfo:
    """Diagnostics of one step. ``direction`` is the unscaled reduced step
    ``a`` in the gradient frame; ``eps`` is ``a'lambda`` after halvings."""

    grad_norm: float
    eps: float
    halvings: int
    decrease: float
    direct: bool
    ridge: bool = False
    direction: np.ndarray = None


@dataclass(eq=False)
class FitResult:
    """Outcome of :func:`fit`.

    ``objective_trace[k]`` is f at iterate k; ``step_eps[k]`` and
    ``step_decrease[k]`` describe the accepted step from iterate k to k+1.
    """

    sigma: np.ndarray
    factor: np.ndarray
    objective_trace: list
    grad_norms: list
    iterations: int
    halvings_total: int
    converged: bool
    step_eps: list = field(default_factory=list)
    step_decrease: list = field(default_factory=list)
    step_halvings: list = field(default_factory=list)
    step_constant: float = 3.0
    runtime_ms: float = 0.0
    coercivity: object = None
    diagnostic: object = None


def _normalize_det(b):
    q = b.shape[0]
    _, logabsdet = np.linalg.slogdet(b)
    return b * np.exp(-logabsdet / q)


def _newton_solve(h, g, constraint, ridge):
    """Minimize ``x'g + x'hx/2``, optionally subject to ``constraint'x = 0``.

    A ridge of ``ridge * lambda_max`` is added when ``h`` (restricted to the
    constraint's null space) is numerically singular. Returns (x, used_ridge).
    """
    m = g.size
    h = sym(h)
    if constraint is not None:
        c = constraint / np.linalg.norm(constraint)
        proj = np.eye(m) - np.outer(c, c)
        hp = proj @ h @ proj
        ev = eigvalsh(hp + max(np.abs(hp).max(), 1.0) * np.outer(c, c))
    else:
        ev = eigvalsh(h)
    top = max(ev[-1], 0.0)
    used = not ev[0] > ridge * top
    if used:
        h = h + ridge * max(top, 1.0) * np.eye(m)
        warnings.warn("Hessian is numerically singular; adding a ridge",
                      IllConditionedHessianWarning, stacklevel=3)
    if constraint is None:
        return -np.linalg.solve(h, g), used
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = h
    kkt[:m, m] = kkt[m, :m] = constraint
    x = np.linalg.solve(kkt, np.concatenate([-g, [0.0]]))[:m]
    return x - (c @ x) * c, used


def _solve_direction(h, lam, scale_invariant, ridge):
    """Reduced Newton system; returns (a, used_ridge) with step -a."""
    q = lam.size
    x, used = _newton_solve(h, lam, np.ones(q) if scale_invariant else None, ridge)
    return -x, used


def _backtrack(obj, path, slope, f0, eps, cfg):
    """Halve the step until the decrease reaches eps_m / C.

    ``path(s)`` is the factor after a step scaled by ``s``; ``slope(b)`` is
    minus the derivative of f along the unscaled direction at factor ``b``.
    Returns ``(b_new, halvings, decrease, eps_m, direct)``.
    """
    s = 1.0
    for m in range(cfg.max_halvings + 1):
        eps_m = s * eps
        direct = eps_m > _DIRECT_DECREASE_RTOL * (1.0 + abs(f0))
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                b_new = path(s)
                if not np.all(np.isfinite(b_new)):
                    raise DomainError("step left the domain")
                if direct:
                    dec = f0 - obj.value_at_factor(b_new)
                else:
                    dec = s * sum(w * slope(path(s * t)) for t, w in zip(_GL_NODES, _GL_WEIGHTS))
        except (DomainError, np.linalg.LinAlgError):
            dec = -np.inf
        if not np.isfinite(dec):
            dec = -np.inf
        if dec >= eps_m / cfg.step_constant:
            return b_new, m, dec, eps_m, direct
        s *= 0.5
    raise StepFailureError(
        f"no sufficient decrease after {cfg.max_halvings} halvings",
        {"eps": eps, "f0": f0, "last_decrease": dec},
    )


def phi_step(obj, b, cfg=None, f0=None, model=None, frame=None):
    """One partial Newton step from factor ``b``.

    Returns ``(b_new, info)``. When the gradient vanishes exactly the factor
    is returned unchanged. ``frame`` overrides the eigenvector frame of the
    gradient (it must diagonalize it).
    """
    cfg = cfg or SolverConfig()
    b = np.asarray(b, float)
    model = model if model is not None else obj.local(b)
    g = model.gradient
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return b.copy(), StepInfo(0.0, 0.0, 0, 0.0, True)
    if frame is None:
        lam, u = eigh(g)
        lam, u = lam[::-1], u[:, ::-1]
    else:
        u = np.asarray(frame, float)
        lam = np.sum(u * (g @ u), axis=0)
    si = obj.scale_invariant_mode
    a, used = _solve_direction(model.reduced(u), lam, si, cfg.ridge)
    eps = float(a @ lam)
    if not eps > 0:
        # fall back to the steepest descent direction within the frame
        a, used = lam - lam.mean() if si else lam, True
        eps = float(a @ lam)
    c = b @ u
    f0 = obj.value_at_factor(b) if f0 is None else f0

    def path(s):
        with np.errstate(over="ignore"):
            return c * np.exp(-0.5 * s * a)

    def slope(bt):
        # path factors stay in the frame of c, so the direction is -diag(a)
        return float(a @ np.diag(obj.local(bt).gradient))

    b_new, m, dec, eps_m, direct = _backtrack(obj, path, slope, f0, eps, cfg)
    if si:
        b_new = _normalize_det(b_new)
    return b_new, StepInfo(gnorm, eps_m, m, dec, direct, used, a)


def _start_factor(obj, cfg):
    q = obj.dim
    start = cfg.start
    if isinstance(start, str):
        if start == "auto":
            unpenalized = not obj.penalized
            start = ("sample_covariance"
                     if unpenalized and obj.rho.name in ("gaussian", "tdist") else "identity")
        if start == "identity":
            sigma = np.eye(q)
        elif start == "sample_covariance":
            m = obj.data.second_moment()
            try:
                sigma = as_spd(m).entries
            except DomainError:
                sigma = np.eye(q)
        else:
            raise InputError(f"unknown start {start!r}")
    else:
        sigma = as_spd(start).entries
    b = np.linalg.cholesky(sigma)
    return _normalize_det(b) if obj.scale_invariant_mode else b


def _log_norm(b):
    sv = np.linalg.svd(b, compute_uv=False)
    return float(np.linalg.norm(2.0 * np.log(sv)))


def fit(obj, cfg=None, check=True):
    """Minimize ``obj`` by iterating :func:`phi_step`.

    Raises
    ------
    NonCoerciveError
        If the coercivity planner proves that no minimizer exists (unless
        ``cfg.override_coercivity``).
    RunawayError
        If ``||log S_k||`` exceeds ``cfg.runaway``.
    StepFailureError
        If the step-size correction cannot find sufficient decrease.
    """
    cfg = cfg or SolverConfig()
    report = None
    if check:
        from .coercivity import plan_coercivity

        report = plan_coercivity(obj.rho, obj.data, obj.penalty, obj.alpha)
        if report.status == "fail" and not cfg.override_coercivity:
            raise NonCoerciveError(report.message, report)
    t0 = time.perf_counter()
    q = obj.dim
    b = _start_factor(obj, cfg)
    f = obj.value_at_factor(b)
    res = FitResult(None, None, [f], [], 0, 0, False, step_constant=cfg.step_constant,
                    coercivity=report)
    for k in range(cfg.max_iters + 1):
        model = obj.local(b)
        gnorm = float(np.linalg.norm(model.gradient))
        res.grad_norms.append(gnorm)
        if gnorm / np.sqrt(q) <= cfg.grad_tol:
            res.converged = True
            break
        if k == cfg.max_iters:
            break
        b, info = phi_step(obj, b, cfg, f0=f, model=model)
        f = f - info.decrease
        res.objective_trace.append(f)
        res.step_eps.append(info.eps)
        res.step_decrease.append(info.decrease)
        res.step_halvings.append(info.halvings)
        res.halvings_total += info.halvings
        res.iterations += 1
        if cfg.reorth_every and res.iterations % cfg.reorth_every == 0:
            b = np.linalg.qr(b.T, mode="r").T
        if not np.all(np.isfinite(b)) or (
            res.iterations % 10 == 0 and _log_norm(b) > cfg.runaway
        ):
            raise RunawayError(f"||log Sigma|| exceeded {cfg.runaway:g} at iteration {k + 1}")
    res.factor = b
    res.sigma = sym(b @ b.T)
    res.runtime_ms = 1e3 * (time.perf_counter() - t0)
    return res


def sym_basis(q):
    """Orthonormal basis of symmetric q x q matrices."""
    out = []
    for i in range(q):
        for j in range(i, q):
            e = np.zeros((q, q))
            if i == j:
                e[i, i] = 1.0
            else:
                e[i, j] = e[j, i] = np.sqrt(0.5)
            out.append(e)
    return out


def full_hessian(model, basis):
    diag = np.array([model.hess_form(e) for e in basis])
    m = len(basis)
    h = np.diag(diag)
    for i in range(m):
        for j in range(i + 1, m):
            h[i, j] = h[j, i] = 0.5 * (model.hess_form(basis[i] + basis[j]) - diag[i] - diag[j])
    return h


def full_newton_oracle(obj, cfg=None, start=None):
    """Reference minimizer using full Newton steps in geodesic coordinates.

    Builds the Hessian operator densely on an orthonormal basis of symmetric
    matrices, so it is limited to q <= 6. Uses the same halving rule as
    :func:`phi_step`.
    """
    cfg = cfg or SolverConfig()
    q = obj.dim
    if q > 6:
        raise InputError("full_newton_oracle supports q <= 6 only")
    if start is not None:
        cfg = SolverConfig(**{**cfg.__dict__, "start": start})
    basis = sym_basis(q)
    tr = np.array([np.trace(e) for e in basis])
    si = obj.scale_invariant_mode
    b = _start_factor(obj, cfg)
    f = obj.value_at_factor(b)
    res = FitResult(None, None, [f], [], 0, 0, False, step_constant=cfg.step_constant)
    for k in range(cfg.max_iters + 1):
        model = obj.local(b)
        gnorm = float(np.linalg.norm(model.gradient))
        res.grad_norms.append(gnorm)
        if gnorm / np.sqrt(q) <= cfg.grad_tol:
            res.converged = True
            break
        if k == cfg.max_iters:
            break
        gvec = np.array([np.sum(e * model.gradient) for e in basis])
        h = full_hessian(model, basis)
        x, _ = _newton_solve(h, gvec, tr if si else None, cfg.ridge)
        a_dir = sum(c * e for c, e in zip(x, basis))
        eps = -float(x @ gvec)
        if not eps > 0:
            raise StepFailureError("full Newton direction is not a descent direction")
        bb = b

        def path(s, bb=bb, a_dir=a_dir):
            return bb @ expm_sym(0.5 * s * a_dir)

        def slope(bt, a_dir=a_dir):
            return -float(np.sum(a_dir * obj.local(bt).gradient))

        b, m_h, dec, eps_m, _ = _backtrack(obj, path, slope, f, eps, cfg)
        if si:
            b = _normalize_det(b)
        f -= dec
        res.objective_trace.append(f)
        res.step_eps.append(eps_m)
        res.step_decrease.append(dec)
        res.step_halvings.append(m_h)
        res.halvings_total += m_h
        res.iterations += 1
    res.factor = b
    res.sigma = sym(b @ b.T)
    return res


def gradient_direction(obj, b):
    """Steepest-descent direction ``-(|G|^2 / H(G, B)) G`` at factor ``b``."""
    model = obj.local(np.asarray(b, float))
    g = model.gradient
    return -(np.sum(g * g) / model.hess_form(g)) * g
