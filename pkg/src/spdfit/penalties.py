"""Geodesically convex penalties shrinking towards the identity (``Pi*``)
or towards multiples of it (``pi*``), and convex transforms of them."""

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, InputError
from .rho import GeoGradHess, _check_factor
from .spd import as_spd, eigh, invsqrtm_spd, sym, w_weight

KINDS = ("Pi0", "Pi1", "Pi2", "pi0", "pi1", "pi2")


class Penalty:
    """Interface shared by all penalties.

    Subclasses provide ``value_at_factor(B)`` (value at ``B B'``),
    ``local(B)`` (a :class:`GeoGradHess`), ``coercivity_limit(gamma)``,
    ``value_at_identity(q)`` and ``to_dict()``.
    """

    scale_invariant = False
    # "all": value -> inf along every ray; "shape": along every ray that is not
    # a pure rescaling; "finite": bounded slope along some rays
    divergence = "finite"

    def value(self, sigma):
        sigma = as_spd(sigma)
        return self.value_at_factor(sigma.eigvecs * np.sqrt(sigma.eigvals))

    def value_and_local(self, b):
        return self.value_at_factor(b), self.local(b)

    def gradient(self, b):
        return self.local(b).gradient

    def hess_form(self, a, b):
        return self.local(b).hess_form(a)

    def reduced_hess(self, b, u=None):
        return self.local(b).reduced_hess(u)


def _sq_singular(b):
    sv = np.linalg.svd(b, compute_uv=False)
    if sv[-1] <= 0 or not np.all(np.isfinite(sv)):
        raise DomainError("singular factor")
    return sv**2


def frame_diag(u, m):
    """Diagonal of ``u' m u``."""
    return np.sum(u * (m @ u), axis=0)


def _trace_free(a):
    q = a.shape[0]
    return a - (np.trace(a) / q) * np.eye(q)


@dataclass(frozen=True)
class SpectralPenalty(Penalty):
    """One of the six basic penalties, selected by ``kind``."""

    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown penalty kind {self.kind!r}")

    @property
    def scale_invariant(self):
        return self.kind.startswith("pi")

    @property
    def divergence(self):
        return {"Pi0": "all", "Pi2": "all", "pi2": "shape"}.get(self.kind, "finite")

    def value_from_eigvals(self, sig):
        sig = np.asarray(sig, float)
        lg = np.log(sig)
        k = self.kind
        if k == "Pi0":
            return float(np.sum(sig) + np.sum(1.0 / sig))
        if k == "Pi1":
            return float(np.sum(lg) + np.sum(1.0 / sig))
        if k == "Pi2":
            return float(lg @ lg)
        if k == "pi0":
            return float(np.log(np.sum(sig)) + np.log(np.sum(1.0 / sig)))
        if k == "pi1":
            return float(np.mean(lg) + np.log(np.sum(1.0 / sig)))
        c = lg - lg.mean()
        return float(c @ c)

    def value(self, sigma):
        return self.value_from_eigvals(as_spd(sigma).eigvals)

    def value_at_factor(self, b):
        if self.kind in ("Pi2", "pi2"):
            return self.value_from_eigvals(_sq_singular(b))
        try:
            bi = np.linalg.inv(b)
        except np.linalg.LinAlgError:
            raise DomainError("singular factor") from None
        return self._value_from_traces(b, np.sum(b * b), np.sum(bi * bi))

    def _value_from_traces(self, b, tr_p, tr_m):
        # tr_p = tr(B'B), tr_m = tr((B'B)^{-1})
        k = self.kind
        if not (np.isfinite(tr_m) and tr_m > 0):
            raise DomainError("singular factor")
        if k == "Pi0":
            return float(tr_p + tr_m)
        if k == "pi0":
            return float(np.log(tr_p) + np.log(tr_m))
        _, logdet = np.linalg.slogdet(b)
        if k == "Pi1":
            return float(2.0 * logdet + tr_m)
        return float(2.0 * logdet / b.shape[0] + np.log(tr_m))

    def value_and_local(self, b):
        model = self.local(b)
        if self.kind in ("Pi2", "pi2"):
            return self.value_from_eigvals(np.exp(model.extra)), model
        return self._value_from_traces(b, np.sum(b * b), model.extra), model

    def value_at_identity(self, q):
        return {"Pi0": 2.0 * q, "Pi1": float(q), "Pi2": 0.0,
                "pi0": 2.0 * np.log(q), "pi1": float(np.log(q)), "pi2": 0.0}[self.kind]

    def local(self, b):
        q = b.shape[0]
        b = _check_factor(b, q)
        k = self.kind
        if k in ("Pi2", "pi2"):
            return self._local_log(b)
        try:
            bi = np.linalg.inv(b)
        except np.linalg.LinAlgError:
            raise DomainError("singular factor") from None
        p = sym(b.T @ b)
        m = sym(bi @ bi.T)
        tr_m = np.trace(m)

        if k in ("Pi0", "Pi1"):
            grad = p - m if k == "Pi0" else np.eye(q) - m
            s = p + m if k == "Pi0" else m
            return GeoGradHess(
                grad,
                lambda a: np.sum((a @ a) * s),
                lambda u: np.diag(frame_diag(u, s)),
                extra=tr_m,
            )

        n2 = m / tr_m
        mats = [n2] if k == "pi1" else [p / np.trace(p), n2]
        grad = np.eye(q) / q - n2 if k == "pi1" else mats[0] - n2

        def form(a):
            return sum(np.sum((a @ a) * n) - np.sum(a * n) ** 2 for n in mats)

        def reduced(u):
            out = np.zeros((q, q))
            for n in mats:
                d = frame_diag(u, n)
                out += np.diag(d) - np.outer(d, d)
            return out

        return GeoGradHess(grad, form, reduced, extra=tr_m)

    def _local_log(self, b):
        q = b.shape[0]
        p = sym(b.T @ b)
        lam, v = eigh(p)
        if lam[0] <= 0:
            raise DomainError("singular factor")
        lam = np.log(lam)
        w = w_weight(lam[:, None], lam[None, :])
        grad = 2.0 * sym((v * lam) @ v.T)
        centre = self.kind == "pi2"
        if centre:
            grad = _trace_free(grad)
        proj = np.eye(q) - np.full((q, q), 1.0 / q)

        def form(a):
            if centre:
                a = _trace_free(a)
            at = v.T @ a @ v
            return 2.0 * np.sum(w * at**2)

        def reduced(u):
            vc = u.T @ v
            m = (vc[:, :, None] * vc[:, None, :]).reshape(q, q * q)
            h = 2.0 * (m * w.ravel()) @ m.T
            return proj @ h @ proj if centre else h

        return GeoGradHess(grad, form, reduced, extra=lam)

    def coercivity_limit(self, gamma):
        """Limit of ``d/dt penalty(exp(tA))`` as ``t -> inf`` for ``A = U D(-gamma) U'``.

        ``gamma`` must be sorted ascending and nonzero.
        """
        g = _check_direction(gamma)
        k = self.kind
        if k.startswith("pi") and not g[0] < g[-1]:
            raise InputError("pi penalties need a direction that is not a multiple of the identity")
        if k in ("Pi0", "Pi2", "pi2"):
            return np.inf
        if k == "Pi1":
            return np.inf if g[-1] > 0 else float(-np.sum(g))
        if k == "pi0":
            return float(g[-1] - g[0])
        return float(g[-1] - np.mean(g))

    def to_dict(self):
        return {"kind": self.kind}


def _check_direction(gamma):
    g = np.asarray(gamma, dtype=float)
    if g.ndim != 1 or not np.any(g != 0):
        raise InputError("direction must be a nonzero vector")
    if np.any(np.diff(g) < 0):
        raise InputError("direction must be sorted ascending")
    return g


@dataclass(frozen=True)
class ExpTransform(Penalty):
    """``exp(c (base - base(I))) / c``."""

    base: Penalty
    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise InputError("exp transform needs c > 0")

    @property
    def scale_invariant(self):
        return self.base.scale_invariant

    @property
    def divergence(self):
        return "shape" if self.base.scale_invariant else "all"

    def _level(self, raw, q):
        return raw - self.base.value_at_identity(q)

    def value_at_factor(self, b):
        return float(np.exp(self.c * self._level(self.base.value_at_factor(b), b.shape[0])) / self.c)

    def value(self, sigma):
        sigma = as_spd(sigma)
        return float(np.exp(self.c * self._level(self.base.value(sigma), sigma.dim)) / self.c)

    def value_at_identity(self, q):
        return 1.0 / self.c

    def local(self, b):
        b = np.asarray(b, float)
        raw, inner = self.base.value_and_local(b)
        e = np.exp(self.c * self._level(raw, b.shape[0]))
        g, c = inner.gradient, self.c

        def reduced(u):
            d = frame_diag(u, g)
            return e * (inner.reduced(u) + c * np.outer(d, d))

        return GeoGradHess(
            e * g,
            lambda a: e * (inner.form(a) + c * np.sum(a * g) ** 2),
            reduced,
        )

    def coercivity_limit(self, gamma):
        return np.inf if self.base.coercivity_limit(gamma) > 0 else 0.0

    def to_dict(self):
        return {"kind": "exp", "c": float(self.c), "base": self.base.to_dict()}


@dataclass(frozen=True)
class PowerTransform(Penalty):
    """``f^gamma / gamma`` with ``f = base`` (or ``1 + base - base(I)`` if anchored)."""

    base: Penalty
    gamma: float = 2.0
    anchored: bool = False

    def __post_init__(self):
        if not self.gamma > 1:
            raise InputError("power transform needs gamma > 1")

    @property
    def scale_invariant(self):
        return self.base.scale_invariant

    @property
    def divergence(self):
        return "shape" if self.base.scale_invariant else "all"

    def _level(self, raw, q):
        f = 1.0 + raw - self.base.value_at_identity(q) if self.anchored else raw
        if not f > 0:
            raise DomainError("power transform requires a positive base value")
        return f

    def value_at_factor(self, b):
        f = self._level(self.base.value_at_factor(b), b.shape[0])
        return float(f**self.gamma / self.gamma)

    def value(self, sigma):
        sigma = as_spd(sigma)
        f = self._level(self.base.value(sigma), sigma.dim)
        return float(f**self.gamma / self.gamma)

    def value_at_identity(self, q):
        f = 1.0 if self.anchored else self.base.value_at_identity(q)
        return f**self.gamma / self.gamma

    def local(self, b):
        b = np.asarray(b, float)
        raw, inner = self.base.value_and_local(b)
        f = self._level(raw, b.shape[0])
        gm = self.gamma
        c1, c2 = f ** (gm - 1.0), (gm - 1.0) * f ** (gm - 2.0)
        g = inner.gradient

        def reduced(u):
            d = frame_diag(u, g)
            return c1 * inner.reduced(u) + c2 * np.outer(d, d)

        return GeoGradHess(
            c1 * g,
            lambda a: c1 * inner.form(a) + c2 * np.sum(a * g) ** 2,
            reduced,
        )

    def coercivity_limit(self, gamma):
        return np.inf if self.base.coercivity_limit(gamma) > 0 else 0.0

    def to_dict(self):
        return {"kind": "power", "gamma": float(self.gamma), "anchored": bool(self.anchored),
                "base": self.base.to_dict()}


@dataclass(frozen=True, eq=False)
class TargetShifted(Penalty):
    """Base penalty evaluated at ``T^{-1/2} S T^{-1/2}``."""

    base: Penalty
    target: np.ndarray

    def __post_init__(self):
        t = as_spd(self.target)
        object.__setattr__(self, "target", t.entries)
        object.__setattr__(self, "_root_inv", invsqrtm_spd(t))

    @property
    def scale_invariant(self):
        return self.base.scale_invariant

    @property
    def divergence(self):
        return self.base.divergence

    def value_at_factor(self, b):
        return self.base.value_at_factor(self._root_inv @ b)

    def value(self, sigma):
        r = self._root_inv
        return self.base.value(sym(r @ as_spd(sigma).entries @ r))

    def value_at_identity(self, q):
        return self.base.value_at_identity(q)

    def local(self, b):
        return self.base.local(self._root_inv @ np.asarray(b, float))

    def value_and_local(self, b):
        return self.base.value_and_local(self._root_inv @ np.asarray(b, float))

    def coercivity_limit(self, gamma):
        # a fixed congruence does not change asymptotic slopes
        return self.base.coercivity_limit(gamma)

    def to_dict(self):
        return {"kind": "shifted", "target": self.target.tolist(), "base": self.base.to_dict()}


def make_penalty(kind, **params):
    """Build a penalty by name.

    ``kind`` is one of ``Pi0 Pi1 Pi2 pi0 pi1 pi2`` or ``exp``, ``power``,
    ``shifted``; the last three take a ``base`` penalty (object or dict).
    """
    if kind in KINDS:
        if params:
            raise InputError(f"{kind} takes no parameters")
        return SpectralPenalty(kind)
    base = params.pop("base", None)
    if base is None:
        raise InputError(f"{kind} transform needs a base penalty")
    if isinstance(base, dict):
        base = penalty_from_dict(base)
    try:
        if kind == "exp":
            return ExpTransform(base, **params)
        if kind == "power":
            return PowerTransform(base, **params)
        if kind == "shifted":
            return TargetShifted(base, np.asarray(params.pop("target"), float), **params)
    except (TypeError, KeyError) as exc:
        raise InputError(f"bad parameters for {kind}: {exc}") from None
    raise InputError(f"unknown penalty kind {kind!r}")


def penalty_from_dict(d):
    d = dict(d)
    return make_penalty(d.pop("kind"), **d)


def pen_value(p, sigma):
    return p.value(sigma)


def pen_grad_hess(p, b, u=None):
    m = p.local(np.asarray(b, float))
    return GeoGradHess(m.gradient, m.form, m.reduced, u)


def pen_coercivity_limit(p, gamma):
    return p.coercivity_limit(gamma)
