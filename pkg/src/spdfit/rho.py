"""Rho families, weighted datasets and the M-estimation scatter objective
``L(S) = sum_i w_i [rho(x_i' S^{-1} x_i) - rho(|x_i|^2)] + log det S``."""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .exceptions import DimensionError, DomainError, InputError
from .spd import as_spd, sym


@dataclass(frozen=True)
class RhoFamily:
    """Base class. ``dim`` is the dimension q the family is built for."""

    dim: int

    name = "abstract"
    scale_invariant = False
    kappa = 1.0

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise InputError(f"dim must be a positive integer, got {self.dim}")
        self._validate()
        grid = np.logspace(-8, 8, 401)
        psi = self.psi(grid)
        if np.any(np.diff(psi) < -1e-12 * np.maximum(1.0, np.abs(psi[1:]))):
            raise InputError(f"{self.name}: psi is not nondecreasing")

    def _validate(self):
        pass

    def rho(self, s):
        raise NotImplementedError

    def rho1(self, s):
        raise NotImplementedError

    def rho2(self, s):
        raise NotImplementedError

    def psi(self, s):
        s = np.asarray(s, float)
        return s * self.rho1(s)

    def rho_diff(self, s, s0):
        """``rho(s) - rho(s0)``, overridden where a cancellation-free form exists."""
        return self.rho(s) - self.rho(s0)

    @property
    def psi_inf(self):
        raise NotImplementedError

    @property
    def psi_zero(self):
        """Limit of psi at 0+."""
        return 0.0

    def params(self):
        return {}

    def to_dict(self):
        return {"name": self.name, **self.params()}


@dataclass(frozen=True)
class Gaussian(RhoFamily):
    name = "gaussian"

    def rho(self, s):
        return np.asarray(s, float)

    def rho1(self, s):
        return np.ones_like(np.asarray(s, float))

    def rho2(self, s):
        return np.zeros_like(np.asarray(s, float))

    @property
    def psi_inf(self):
        return np.inf


@dataclass(frozen=True)
class Tyler(RhoFamily):
    name = "tyler"
    scale_invariant = True
    kappa = 0.0

    def rho(self, s):
        with np.errstate(divide="ignore"):
            return self.dim * np.log(np.asarray(s, float))

    def rho1(self, s):
        return self.dim / np.asarray(s, float)

    def rho2(self, s):
        return -self.dim / np.asarray(s, float) ** 2

    def psi(self, s):
        return np.full_like(np.asarray(s, float), float(self.dim))

    def rho_diff(self, s, s0):
        return self.dim * np.log(np.asarray(s, float) / s0)

    @property
    def psi_inf(self):
        return float(self.dim)

    @property
    def psi_zero(self):
        return float(self.dim)


@dataclass(frozen=True)
class Huber(RhoFamily):
    """Huber-type family with psi(s) = K min(s/c, 1); requires K > q."""

    c: float = 1.0
    K: float = None

    name = "huber"

    def _validate(self):
        if self.K is None:
            object.__setattr__(self, "K", float(self.dim) + 1.0)
        if not self.c > 0:
            raise InputError("huber: c must be positive")
        if not self.K > self.dim:
            raise InputError(f"huber: K must exceed q={self.dim}, got {self.K}")

    def rho(self, s):
        s = np.asarray(s, float)
        with np.errstate(divide="ignore"):
            tail = self.K * (1.0 + np.log(np.maximum(s, self.c) / self.c))
        return np.where(s <= self.c, self.K * s / self.c, tail)

    def rho1(self, s):
        s = np.asarray(s, float)
        return self.K / np.maximum(s, self.c)

    def rho2(self, s):
        # left value (0) at the kink
        s = np.asarray(s, float)
        return np.where(s <= self.c, 0.0, -self.K / np.maximum(s, self.c) ** 2)

    @property
    def psi_inf(self):
        return float(self.K)

    def params(self):
        return {"c": float(self.c), "K": float(self.K)}


@dataclass(frozen=True)
class TDist(RhoFamily):
    """Multivariate t likelihood with ``nu`` degrees of freedom."""

    nu: float = 1.0

    name = "tdist"

    def _validate(self):
        if not self.nu > 0:
            raise InputError("tdist: nu must be positive")

    def rho(self, s):
        return (self.nu + self.dim) * np.log(self.nu + np.asarray(s, float))

    def rho1(self, s):
        return (self.nu + self.dim) / (self.nu + np.asarray(s, float))

    def rho2(self, s):
        return -(self.nu + self.dim) / (self.nu + np.asarray(s, float)) ** 2

    def rho_diff(self, s, s0):
        s = np.asarray(s, float)
        return (self.nu + self.dim) * np.log1p((s - s0) / (self.nu + s0))

    @property
    def psi_inf(self):
        return float(self.nu + self.dim)

    def params(self):
        return {"nu": float(self.nu)}


_FAMILIES = {"gaussian": Gaussian, "tyler": Tyler, "huber": Huber, "tdist": TDist}


def make_rho(name, dim, **params):
    """Build a rho family by name: gaussian, tyler, huber(c, K) or tdist(nu)."""
    try:
        cls = _FAMILIES[name]
    except KeyError:
        raise InputError(f"unknown rho family {name!r}") from None
    try:
        return cls(dim, **params)
    except TypeError as exc:
        raise InputError(f"bad parameters for {name}: {exc}") from None


def rho_from_dict(d, dim):
    d = dict(d)
    return make_rho(d.pop("name"), dim, **d)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Weighted sample. ``points`` is (n, q); ``weights`` sum to one."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DimensionError(f"points must be a non-empty (n, q) array, got {x.shape}")
        if w.shape != (x.shape[0],):
            raise DimensionError("weights must have one entry per point")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise InputError("dataset contains non-finite values")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InputError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_points(cls, x, weights=None):
        x = np.asarray(x, dtype=float)
        if weights is None:
            w = np.full(x.shape[0], 1.0 / max(x.shape[0], 1))
        else:
            w = np.asarray(weights, dtype=float)
            if np.any(w < 0) or not w.sum() > 0:
                raise InputError("weights must be nonnegative with positive sum")
            w = w / w.sum()
        return cls(x, w)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @cached_property
    def sq_norms(self):
        return np.einsum("ij,ij->i", self.points, self.points)

    @property
    def zero_rows(self):
        return self.sq_norms == 0.0

    def second_moment(self):
        return sym((self.points.T * self.weights) @ self.points)

    def leave_one_out(self, i):
        keep = np.arange(self.n) != i
        return Dataset.from_points(self.points[keep], self.weights[keep])

    def scaled(self, c):
        return Dataset(c * self.points, self.weights)


@dataclass(frozen=True, eq=False)
class GeoGradHess:
    """Local second-order model of a function along geodesics ``B exp(A) B'``.

    Attributes
    ----------
    gradient : ndarray
        The geodesic gradient G(B).
    form : callable
        ``A -> H(A, B)``.
    reduced : callable
        ``U -> reduced Hessian`` in the orthonormal frame U.
    """

    gradient: np.ndarray
    form: Callable
    reduced: Callable
    frame: np.ndarray = None
    extra: object = None

    def hess_form(self, a):
        return float(self.form(sym(a)))

    def reduced_hess(self, u=None):
        if u is None:
            u = self.frame if self.frame is not None else np.eye(self.gradient.shape[0])
        return self.reduced(np.asarray(u, float))


def combine_models(parts):
    """Sum of ``(coef, GeoGradHess)`` pairs."""
    parts = [(c, m) for c, m in parts if c != 0]
    return GeoGradHess(
        sum(c * m.gradient for c, m in parts),
        lambda a: sum(c * m.form(a) for c, m in parts),
        lambda u: sum(c * m.reduced(u) for c, m in parts),
    )


def _check_factor(b, q):
    b = np.asarray(b, dtype=float)
    if b.shape != (q, q):
        raise DimensionError(f"factor must be {q}x{q}, got {b.shape}")
    return b


@dataclass(frozen=True, eq=False)
class ScatterObjective:
    rho: RhoFamily
    data: Dataset

    def __post_init__(self):
        if self.rho.dim != self.data.dim:
            raise DimensionError(
                f"rho built for q={self.rho.dim} but data has q={self.data.dim}"
            )
        if self.rho.scale_invariant and np.any(self.data.zero_rows):
            raise DomainError("tyler objective requires data without zero rows")

    @property
    def dim(self):
        return self.data.dim

    def _z(self, b):
        b = _check_factor(b, self.dim)
        try:
            return np.linalg.solve(b, self.data.points.T)
        except np.linalg.LinAlgError:
            raise DomainError("singular factor") from None

    def value_at_factor(self, b):
        z = self._z(b)
        s = np.einsum("ij,ij->j", z, z)
        _, logabsdet = np.linalg.slogdet(b)
        w = self.data.weights
        return float(w @ self.rho.rho_diff(s, self.data.sq_norms) + 2.0 * logabsdet)

    def value(self, sigma):
        sigma = as_spd(sigma)
        return self.value_at_factor(np.linalg.cholesky(sigma.entries))

    def local(self, b):
        z = self._z(b)
        s = np.einsum("ij,ij->j", z, z)
        w = self.data.weights
        r1 = w * self.rho.rho1(s)
        r2 = w * self.rho.rho2(s)
        psi = sym((z * r1) @ z.T)
        grad = np.eye(self.dim) - psi

        def form(a):
            quad = np.einsum("ij,ij->j", z, a @ z)
            return np.sum((a @ a) * psi) + r2 @ quad**2

        def reduced(u):
            y2 = (u.T @ z) ** 2
            psit = np.sum(u * (psi @ u), axis=0)
            return np.diag(psit) + (y2 * r2) @ y2.T

        return GeoGradHess(grad, form, reduced)

    def gradient(self, b):
        return self.local(b).gradient

    def hess_form(self, a, b):
        return self.local(b).hess_form(a)

    def reduced_hess(self, b, u=None):
        return self.local(b).reduced_hess(u)

    def estimating_residual(self, sigma):
        """Relative residual of ``S = sum_i w_i u(x_i'S^{-1}x_i) x_i x_i'``."""
        sigma = as_spd(sigma).entries
        x = self.data.points
        s = np.einsum("ij,ij->i", x, np.linalg.solve(sigma, x.T).T)
        rhs = (x.T * (self.data.weights * self.rho.rho1(s))) @ x
        return float(np.linalg.norm(sigma - rhs) / np.linalg.norm(sigma))


def objective(rho, data, sigma):
    """Value of the scatter objective at SPD ``sigma``."""
    return ScatterObjective(rho, data).value(sigma)


def grad_hess(rho, data, b, u=None):
    """Geodesic gradient and Hessian model at factor ``b``.

    The returned object's ``reduced_hess()`` uses ``u`` as default frame.
    """
    model = ScatterObjective(rho, data).local(b)
    return GeoGradHess(model.gradient, model.form, model.reduced, u)
