"""Symmetric and SPD matrices, spectral functions, geodesics and the
divided-difference calculus of the matrix exponential and logarithm."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import DegenerateInputError, DimensionError, DomainError

PD_RTOL = 1e-12


def sym(a):
    """Return the exactly symmetric part of a square array."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def eigh(a, eigvals_only=False):
    """Symmetric eigendecomposition (ascending) via LAPACK's MRRR driver.

    Falls back to the QR driver if MRRR fails to converge.
    """
    for driver in ("evr", "ev"):
        try:
            return scipy.linalg.eigh(a, eigvals_only=eigvals_only, driver=driver,
                                     check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            continue
    raise DomainError("eigendecomposition did not converge")


def eigvalsh(a):
    return eigh(a, eigvals_only=True)


def _eigh_desc(a):
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    lam, u = eigh(a)
    order = np.argsort(-lam, kind="stable")
    lam, u = lam[order], u[:, order]
    # deterministic sign: largest-magnitude entry of each eigenvector positive
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return lam, u * signs


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """A symmetric positive definite matrix with its spectral decomposition.

    Attributes
    ----------
    entries : ndarray, shape (q, q)
    eigvals : ndarray, shape (q,)
        Eigenvalues sorted in descending order.
    eigvecs : ndarray, shape (q, q)
        Orthogonal matrix whose columns match ``eigvals``.
    """

    entries: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @classmethod
    def from_array(cls, a):
        if isinstance(a, SpdMatrix):
            return a
        s = sym(a)
        if not np.all(np.isfinite(s)):
            raise DomainError("matrix has non-finite entries")
        lam, u = _eigh_desc(s)
        if not lam[0] > 0 or lam[-1] <= PD_RTOL * lam[0]:
            raise DomainError(
                f"matrix is not positive definite (eigenvalue range {lam[-1]:.3g}..{lam[0]:.3g})"
            )
        return cls(s, lam, u)

    @property
    def dim(self):
        return self.entries.shape[0]

    def apply(self, h):
        """Return U diag(h(lambda)) U^T."""
        return _recompose(self.eigvecs, h(self.eigvals))

    def logdet(self):
        return float(np.sum(np.log(self.eigvals)))


def as_spd(a):
    return SpdMatrix.from_array(a)


def _recompose(u, d):
    if not np.all(np.isfinite(d)):
        raise DomainError("spectral function produced non-finite values")
    return sym((u * d) @ u.T)


def spectral_fn(s, h):
    """Apply a scalar function to the spectrum of a symmetric matrix.

    Parameters
    ----------
    s : SpdMatrix or array_like
        Symmetric input. Plain arrays are only symmetrized, not checked for
        definiteness, so ``h`` must be defined on the whole real spectrum.
    h : callable
        Vectorized scalar function.
    """
    if isinstance(s, SpdMatrix):
        return s.apply(h)
    lam, u = _eigh_desc(sym(s))
    with np.errstate(all="ignore"):
        d = h(lam)
    return _recompose(u, d)


def expm_sym(a):
    return spectral_fn(a, np.exp)


def logm_spd(s):
    return as_spd(s).apply(np.log)


def powm_spd(s, p):
    return as_spd(s).apply(lambda lam: np.exp(p * np.log(lam)))


def sqrtm_spd(s):
    return as_spd(s).apply(np.sqrt)


def invsqrtm_spd(s):
    return as_spd(s).apply(lambda lam: 1.0 / np.sqrt(lam))


def _same_dim(s0, s1):
    if s0.dim != s1.dim:
        raise DimensionError(f"dimension mismatch: {s0.dim} vs {s1.dim}")


def geodesic_point(s0, s1, t):
    """Point at parameter ``t`` on the affine-invariant geodesic from s0 to s1."""
    s0, s1 = as_spd(s0), as_spd(s1)
    _same_dim(s0, s1)
    r = s0.apply(np.sqrt)
    ri = s0.apply(lambda lam: 1.0 / np.sqrt(lam))
    inner = as_spd(ri @ s1.entries @ ri).apply(lambda lam: np.exp(t * np.log(lam)))
    return sym(r @ inner @ r)


def geodesic_distance(s0, s1):
    """Affine-invariant distance ``||log(S0^{-1/2} S1 S0^{-1/2})||_F``."""
    s0, s1 = as_spd(s0), as_spd(s1)
    _same_dim(s0, s1)
    ri = s0.apply(lambda lam: 1.0 / np.sqrt(lam))
    lam = eigvalsh(sym(ri @ s1.entries @ ri))
    if lam[0] <= 0:
        raise DomainError("geodesic_distance: inner matrix lost definiteness")
    return float(np.linalg.norm(np.log(lam)))


@dataclass(frozen=True, eq=False)
class GeodesicPath:
    """Constant-speed geodesic ``t -> B exp(tA) B^T``."""

    start: SpdMatrix
    factor: np.ndarray
    direction: np.ndarray

    @classmethod
    def between(cls, s0, s1, factor=None):
        s0, s1 = as_spd(s0), as_spd(s1)
        _same_dim(s0, s1)
        b = np.linalg.cholesky(s0.entries) if factor is None else np.asarray(factor, float)
        bi = np.linalg.inv(b)
        a = logm_spd(bi @ s1.entries @ bi.T)
        return cls(s0, b, a)

    def __call__(self, t):
        return sym(self.factor @ expm_sym(t * self.direction) @ self.factor.T)


# --- divided differences of exp -------------------------------------------

def _sinhc(d):
    d = np.asarray(d, dtype=float)
    small = np.abs(d) < 1e-8
    safe = np.where(small, 1.0, d)
    return np.where(small, 1.0 + d * d / 6.0, np.sinh(safe) / safe)


def j2(x, y):
    """First divided difference of exp: ``(e^y - e^x)/(y - x)``, ``e^x`` if equal."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    out = np.exp(0.5 * (x + y)) * _sinhc(0.5 * (y - x))
    return out if out.ndim else float(out)


def _j3_series(x, y, z, nterms=30):
    # J(x,y,z) = e^m sum_k h_k(d)/(k+2)!, h_k complete homogeneous polynomial
    m = (x + y + z) / 3.0
    a, b, c = x - m, y - m, z - m
    hab = [np.ones_like(a)]
    for k in range(1, nterms):
        hab.append(hab[-1] * a + b**k)
    # h_k(a,b,c) = sum_j c^j h_{k-j}(a,b)
    h = [np.ones_like(a)]
    for k in range(1, nterms):
        h.append(hab[k] + c * h[-1])
    total = np.zeros_like(a)
    fact = 2.0
    for k in range(nterms):
        total = total + h[k] / fact
        fact *= k + 3
    return np.exp(m) * total


def j3(x, y, z):
    """Second divided difference of exp at (x, y, z).

    Equal to the integral of ``exp`` over the standard simplex. Arguments
    whose spread is at most one use a centred Taylor series; otherwise the
    two most distant arguments are differenced.
    """
    x, y, z = np.broadcast_arrays(*(np.asarray(v, float) for v in (x, y, z)))
    s = np.sort(np.stack([x, y, z]), axis=0)
    lo, mid, hi = s[0], s[1], s[2]
    spread = hi - lo
    close = spread <= 1.0
    wide_hi = np.where(close, lo + 2.0, hi)
    with np.errstate(all="ignore"):
        wide = (j2(wide_hi, mid) - j2(lo, mid)) / (wide_hi - lo)
    out = np.where(close, _j3_series(lo, mid, hi), wide)
    return out if out.ndim else float(out)


def _j2_matrix(lam):
    return j2(lam[:, None], lam[None, :])


def dexp(a, delta):
    """Derivative of the matrix exponential at ``a`` in direction ``delta``."""
    a, delta = sym(a), sym(delta)
    if a.shape != delta.shape:
        raise DimensionError("dexp: dimension mismatch")
    lam, v = _eigh_desc(a)
    return sym(v @ (_j2_matrix(lam) * (v.T @ delta @ v)) @ v.T)


def dlog(b, delta):
    """Derivative of the matrix logarithm at SPD ``b`` in direction ``delta``."""
    b = as_spd(b)
    delta = sym(delta)
    if b.entries.shape != delta.shape:
        raise DimensionError("dlog: dimension mismatch")
    lam, v = np.log(b.eigvals), b.eigvecs
    return sym(v @ ((v.T @ delta @ v) / _j2_matrix(lam)) @ v.T)


def log_geodesic_expansion(mu, a):
    """Linear and quadratic terms of ``log(D(mu)^{1/2} exp(A) D(mu)^{1/2})``.

    Returns ``(L, Q)`` such that the logarithm equals
    ``diag(log mu) + L + Q + O(||A||^3)``.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise DomainError("log_geodesic_expansion: mu must be positive")
    a = sym(a)
    if a.shape != (mu.size, mu.size):
        raise DimensionError("log_geodesic_expansion: dimension mismatch")
    lam = np.log(mu)
    jm = _j2_matrix(lam)
    root = np.sqrt(np.outer(mu, mu))
    lin = root * a / jm
    j3t = j3(lam[:, None, None], lam[None, :, None], lam[None, None, :])  # (i, z, j)
    factor = 0.5 - j3t * mu[None, :, None] / (jm[:, :, None] * jm[None, :, :])
    quad = np.einsum("iz,zj,izj->ij", a, a, factor) * root / jm
    return sym(lin), sym(quad)


def w_weight(li, lj):
    """``d / tanh(d)`` with ``d = (li - lj)/2`` and the value 1 at ``d = 0``."""
    d = 0.5 * (np.asarray(li, float) - np.asarray(lj, float))
    small = np.abs(d) < 1e-6
    safe = np.where(small, 1.0, d)
    out = np.where(small, 1.0 + d * d / 3.0, safe / np.tanh(safe))
    return out if out.ndim else float(out)


def lipschitz_bounds(a, b):
    """Bounds on ``||exp(B) - exp(A)|| / ||B - A||`` from extreme eigenvalues."""
    a, b = sym(a), sym(b)
    if a.shape != b.shape:
        raise DimensionError("lipschitz_bounds: dimension mismatch")
    if np.array_equal(a, b):
        raise DegenerateInputError("lipschitz_bounds: A == B")
    la, lb = eigvalsh(a), eigvalsh(b)
    return j2(la[0], lb[0]), j2(la[-1], lb[-1])


def log_lipschitz_bounds(a, b):
    """Bounds on ``||log(B) - log(A)|| / ||B - A||`` for SPD ``a`` and ``b``."""
    a, b = as_spd(a), as_spd(b)
    _same_dim(a, b)
    if np.array_equal(a.entries, b.entries):
        raise DegenerateInputError("log_lipschitz_bounds: A == B")
    la, lb = np.log(a.eigvals), np.log(b.eigvals)
    return 1.0 / j2(la[0], lb[0]), 1.0 / j2(la[-1], lb[-1])
