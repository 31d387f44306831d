"""Existence diagnostics: subspace-mass conditions for geodesic coercivity.

A weighted sample violates coercivity when some linear subspace V carries
too much mass, ``Q(V) >= bound(dim V)``. Only subspaces spanned by data
points matter (the mass of any subspace equals the mass of the span of the
points it contains), so we search spans of point subsets.
"""

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

_SPAN_RTOL = 1e-10
_ENUM_LIMIT = 50_000


@dataclass
class CoercivityReport:
    """Outcome of a coercivity check.

    ``status`` is ``"pass"`` (proved), ``"fail"`` (a witness subspace
    violates the condition) or ``"inconclusive"`` (no violation on the
    tested part of the lattice, or no usable criterion).
    """

    status: str
    setting: str
    message: str
    witness: np.ndarray = None
    witness_mass: float = None
    witness_bound: float = None
    exhaustive: bool = False
    tested: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status != "fail"

    def to_dict(self):
        return {
            "status": self.status,
            "setting": self.setting,
            "message": self.message,
            "witness_dim": None if self.witness is None else int(self.witness.shape[1]),
            "witness_basis": None if self.witness is None else self.witness.tolist(),
            "witness_mass": self.witness_mass,
            "witness_bound": self.witness_bound,
            "exhaustive": self.exhaustive,
            "tested_subspaces": self.tested,
        }


def _span_basis(xs):
    u, s, _ = np.linalg.svd(xs.T, full_matrices=False)
    r = int(np.sum(s > _SPAN_RTOL * s[0])) if s.size and s[0] > 0 else 0
    return u[:, :r]


def _members(basis, x, sq):
    proj = x @ basis
    resid = sq - np.einsum("ij,ij->i", proj, proj)
    return resid <= 1e-9 * sq


def lattice_search(x, w, bound, max_subset=None, n_random=1000, seed=0):
    """Search spans of subsets of the nonzero rows of ``x`` for violations.

    Parameters
    ----------
    x, w : ndarray
        Points and weights; rows with zero norm or zero weight are treated
        as sitting in every subspace (zero rows) or ignored (zero weight).
    bound : callable
        ``d -> bound`` for proper dimensions ``0 <= d < q``; a violation is
        ``Q(V) >= bound(d)``.

    Returns
    -------
    (violation, exhaustive, tested)
        ``violation`` is ``(basis, mass, bound)`` of the first witness found,
        or None.
    """
    n, q = x.shape
    sq = np.einsum("ij,ij->i", x, x)
    zero = sq == 0.0
    q0 = float(w[zero].sum())
    keep = (~zero) & (w > 0)
    xs, ws, sqs = x[keep], w[keep], sq[keep]
    m = xs.shape[0]
    cap = min(q - 1, 4) if max_subset is None else min(max_subset, q - 1)

    best = None
    seen = set()
    tested = 0

    class _Found(Exception):
        pass

    def consider(basis):
        nonlocal best, tested
        d = basis.shape[1]
        if d >= q:
            return
        inside = _members(basis, xs, sqs) if d else np.zeros(m, bool)
        key = inside.tobytes()
        if key in seen:
            return
        seen.add(key)
        tested += 1
        mass = q0 + float(ws[inside].sum())
        b = bound(d)
        if mass >= b:
            best = (basis, mass, b)
            raise _Found

    total = sum(comb(m, k) for k in range(1, cap + 1))
    exhaustive = cap >= q - 1 and total <= _ENUM_LIMIT
    rng = np.random.default_rng(seed)
    try:
        consider(np.zeros((q, 0)))
        if m:
            consider(_span_basis(xs))
        if total <= _ENUM_LIMIT:
            for k in range(1, cap + 1):
                for idx in combinations(range(m), k):
                    consider(_span_basis(xs[list(idx)]))
        elif m:
            for _ in range(n_random):
                k = int(rng.integers(1, cap + 1))
                consider(_span_basis(xs[rng.choice(m, size=min(k, m), replace=False)]))
        if not exhaustive and m > cap + 1 and q - 1 > cap:
            for _ in range(n_random):
                k = int(rng.integers(cap + 1, min(q - 1, m) + 1))
                consider(_span_basis(xs[rng.choice(m, size=k, replace=False)]))
    except _Found:
        pass
    return best, exhaustive, tested


def _from_search(setting, result, describe):
    best, exhaustive, tested = result
    if best is not None:
        basis, mass, b = best
        return CoercivityReport(
            "fail", setting,
            f"subspace of dimension {basis.shape[1]} carries mass {mass:.6g} >= {b:.6g} "
            f"({describe}); the objective has no minimizer",
            basis, mass, b, exhaustive, tested,
        )
    if exhaustive:
        return CoercivityReport("pass", setting, f"all data-spanned subspaces satisfy {describe}",
                                exhaustive=True, tested=tested)
    return CoercivityReport(
        "inconclusive", setting,
        f"no violation of {describe} on {tested} tested subspaces (not a proof)",
        exhaustive=False, tested=tested,
    )


def check_coercivity(rho, data, max_subset=None, n_random=1000, seed=0):
    """Subspace-mass diagnostic for the unpenalized objective.

    Tyler: ``Q(V) < dim V / q`` for proper V != {0}. Families with
    ``psi(0+) = 0``: ``Q(V) < 1 - (q - dim V) / psi_inf`` for proper V.
    """
    x, w = data.points, data.weights
    q = data.dim
    if rho.scale_invariant:
        if np.any(data.zero_rows & (w > 0)):
            return CoercivityReport(
                "fail", "tyler", "zero rows are not allowed for the tyler objective",
                np.zeros((q, 0)), float(w[data.zero_rows].sum()), 0.0, True, 1)
        return _from_search(
            "tyler", lattice_search(x, w, lambda d: d / q if d else np.inf,
                                    max_subset, n_random, seed),
            "Q(V) < dim(V)/q")
    psi_inf = rho.psi_inf
    if np.isinf(psi_inf):
        # the condition reduces to Q(V) < 1 for every proper V: a rank check
        pos = (w > 0) & ~data.zero_rows
        r = int(np.linalg.matrix_rank(x[pos])) if np.any(pos) else 0
        if r < q:
            basis = _span_basis(x[pos]) if r else np.zeros((q, 0))
            return CoercivityReport(
                "fail", "unbounded-psi",
                f"all mass lies in a subspace of dimension {r} < q={q}",
                basis, 1.0, 1.0, True, 1)
        return CoercivityReport("pass", "unbounded-psi", "data span the full space",
                                exhaustive=True, tested=1)
    return _from_search(
        "bounded-psi",
        lattice_search(x, w, lambda d: 1.0 - (q - d) / psi_inf, max_subset, n_random, seed),
        "Q(V) < 1 - (q - dim V)/psi_inf")


def _core_kind(penalty):
    """Kind of the underlying basic penalty when only target shifts wrap it."""
    from .penalties import SpectralPenalty, TargetShifted

    while isinstance(penalty, TargetShifted):
        penalty = penalty.base
    return penalty.kind if isinstance(penalty, SpectralPenalty) else None


def plan_coercivity(rho, data, penalty=None, alpha=0.0, max_subset=None, n_random=1000, seed=0):
    """Decide whether ``L_rho + alpha * penalty`` has a minimizer.

    Combines the direction limits of the penalty with the subspace-mass
    conditions of the data term. Returns a :class:`CoercivityReport`; only
    ``"fail"`` means a minimizer provably does not exist.
    """
    if penalty is None or alpha == 0:
        return check_coercivity(rho, data, max_subset, n_random, seed)
    q = data.dim
    x, w = data.points, data.weights
    div = penalty.divergence
    kind = _core_kind(penalty)
    search = dict(max_subset=max_subset, n_random=n_random, seed=seed)
    if div == "all":
        return CoercivityReport("pass", "penalty", "penalty diverges along every geodesic ray",
                                exhaustive=True)
    if rho.scale_invariant:
        if np.any(data.zero_rows & (w > 0)):
            return check_coercivity(rho, data)
        if penalty.scale_invariant and div == "shape":
            return CoercivityReport("pass", "penalty",
                                    "penalty diverges along every ray of det-one matrices",
                                    exhaustive=True)
        if kind == "pi0":
            bound, text = (lambda d: (d + alpha) / q if d else np.inf), "Q(V) < (dim V + alpha)/q"
        elif kind == "pi1":
            bound, text = ((lambda d: (1 + alpha / q) * d / q if d else np.inf),
                           "Q(V) < (1 + alpha/q) dim V/q")
        elif kind == "Pi1":
            bound, text = ((lambda d: (1 + alpha) * d / q if d else np.inf),
                           "Q(V) < (1 + alpha) dim V/q")
        else:
            return CoercivityReport("inconclusive", "tyler+penalty",
                                    "no criterion available for this penalty")
        return _from_search("tyler+" + kind, lattice_search(x, w, bound, **search), text)
    if rho.psi_zero == 0:
        if kind == "Pi1":
            return CoercivityReport("pass", "penalty",
                                    "Pi1 penalty makes every bounded-psi objective coercive",
                                    exhaustive=True)
        if div == "shape":
            q0 = float(w[data.zero_rows].sum())
            lim = 1.0 - q / rho.psi_inf
            if q0 < lim:
                return CoercivityReport("pass", "penalty",
                                        "penalty handles all shape directions; scale direction ok",
                                        exhaustive=True)
            return CoercivityReport(
                "fail", "penalty",
                f"mass at zero {q0:.6g} >= {lim:.6g}: the scale direction is not coercive",
                np.zeros((q, 0)), q0, lim, True, 1)
        base = check_coercivity(rho, data, **search)
        if base.status == "pass":
            base.message = "data term alone is coercive; penalty limits are nonnegative"
            return base
        return CoercivityReport("inconclusive", "penalty",
                                "data term is not coercive on its own; no criterion for this "
                                "penalty")
    return CoercivityReport("inconclusive", "penalty", "no criterion available")
