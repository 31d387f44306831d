import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import (
    fd_rel_errors,
    path_values,
    polarization_error,
    random_factor,
    random_orthogonal,
    random_spd,
    random_sym,
    rng_for,
    unit,
)
from spdfit.coercivity import check_coercivity
from spdfit.exceptions import DimensionError, DomainError, InputError
from spdfit.rho import (
    Dataset,
    ScatterObjective,
    grad_hess,
    make_rho,
    objective,
    rho_from_dict,
)


def families(q):
    return [make_rho("gaussian", q), make_rho("tyler", q), make_rho("huber", q, c=2.0, K=q + 1.5),
            make_rho("tdist", q, nu=1.0), make_rho("tdist", q, nu=4.0)]


def kink_straddled(rho, data, b, a, h=1e-4):
    """True if some point crosses the huber kink within the stencil."""
    if rho.name != "huber":
        return False
    sides = []
    for t in (-h, 0.0, h):
        f = b @ scipy.linalg.expm(0.5 * t * a)
        z = np.linalg.solve(f, data.points.T)
        sides.append(np.einsum("ij,ij->j", z, z) > rho.c)
    return not (np.array_equal(sides[0], sides[1]) and np.array_equal(sides[1], sides[2]))


# --- families ---------------------------------------------------------------

def test_psi_formulas():
    q = 3
    s = np.logspace(-3, 3, 13)
    assert np.allclose(make_rho("gaussian", q).psi(s), s)
    assert np.allclose(make_rho("tyler", q).psi(s), q)
    h = make_rho("huber", q, c=2.0, K=5.0)
    assert np.allclose(h.psi(s), 5.0 * np.minimum(s / 2.0, 1.0))
    t = make_rho("tdist", q, nu=2.5)
    assert np.allclose(t.psi(s), (2.5 + q) * s / (2.5 + s))


def test_psi_inf_and_flags():
    q = 4
    g, ty, h, t = (make_rho("gaussian", q), make_rho("tyler", q),
                   make_rho("huber", q, K=7.0), make_rho("tdist", q, nu=3.0))
    assert g.psi_inf == np.inf and ty.psi_inf == q and h.psi_inf == 7.0 and t.psi_inf == 7.0
    assert ty.scale_invariant and not any(r.scale_invariant for r in (g, h, t))


@pytest.mark.parametrize("name, params", [("huber", {"c": 0.5, "K": 6.0}), ("tdist", {"nu": 2.0})])
def test_setting_two_kappa_bound(name, params):
    rho = make_rho(name, 4, **params)
    s = np.logspace(-6, 6, 2001)
    s = s[np.abs(s - getattr(rho, "c", -1)) > 1e-9]
    dpsi = rho.rho1(s) + s * rho.rho2(s)
    assert np.all(s * dpsi <= rho.kappa * rho.psi(s) + 1e-12)


def test_rho_derivatives_consistent():
    for rho in families(3):
        s = np.array([0.3, 1.7, 5.0, 40.0])
        h = 1e-6 * s
        d1 = (rho.rho(s + h) - rho.rho(s - h)) / (2 * h)
        d2 = (rho.rho1(s + h) - rho.rho1(s - h)) / (2 * h)
        assert np.allclose(d1, rho.rho1(s), rtol=1e-7)
        if rho.name != "huber":
            assert np.allclose(d2, rho.rho2(s), rtol=1e-6, atol=1e-12)


def test_huber_second_derivative_sides():
    h = make_rho("huber", 2, c=1.0, K=3.0)
    assert h.rho2(0.5) == 0.0 and h.rho2(1.0) == 0.0
    assert h.rho2(2.0) == pytest.approx(-3.0 / 4.0)


def test_family_validation():
    with pytest.raises(InputError):
        make_rho("huber", 3, K=3.0)
    with pytest.raises(InputError):
        make_rho("huber", 3, c=0.0)
    with pytest.raises(InputError):
        make_rho("tdist", 3, nu=0.0)
    with pytest.raises(InputError):
        make_rho("cauchy", 3)
    with pytest.raises(InputError):
        make_rho("tyler", 3, nu=1.0)
    with pytest.raises(InputError):
        make_rho("tyler", 0)


def test_rho_dict_roundtrip():
    for rho in families(3):
        assert rho_from_dict(rho.to_dict(), 3) == rho


# --- datasets ---------------------------------------------------------------

def test_dataset_validation():
    x = np.ones((3, 2))
    with pytest.raises(InputError):
        Dataset(x, np.array([0.5, 0.5, 0.5]))
    with pytest.raises(InputError):
        Dataset(x, np.array([1.5, -0.5, 0.0]))
    with pytest.raises(DimensionError):
        Dataset(x, np.array([0.5, 0.5]))
    with pytest.raises(InputError):
        Dataset.from_points(np.array([[np.inf, 1.0]]))
    d = Dataset.from_points(x, [1.0, 1.0, 2.0])
    assert np.allclose(d.weights, [0.25, 0.25, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(0, 11), st.integers(0, 2**31))
def test_leave_one_out_renormalizes(n, i, seed):
    i = i % n
    rng = np.random.default_rng(seed)
    d = Dataset.from_points(rng.standard_normal((n, 2)), rng.uniform(0.1, 1, n))
    sub = d.leave_one_out(i)
    assert sub.n == n - 1
    assert abs(sub.weights.sum() - 1) <= 1e-12
    assert np.allclose(sub.weights, np.delete(d.weights, i) / (1 - d.weights[i]))


# --- objective values -------------------------------------------------------

def test_gaussian_identity_value_is_zero():
    d = Dataset.from_points(rng_for(0).standard_normal((7, 3)))
    assert objective(make_rho("gaussian", 3), d, np.eye(3)) == pytest.approx(0.0, abs=1e-14)


def test_tyler_scale_invariant_value():
    rng = rng_for(1)
    d = Dataset.from_points(rng.standard_normal((9, 4)))
    s = random_spd(rng, 4)
    rho = make_rho("tyler", 4)
    for c in (1e-3, 0.5, 7.0, 1e4):
        assert objective(rho, d, c * s) == pytest.approx(objective(rho, d, s), abs=1e-10)


def test_gaussian_second_moment_beats_identity():
    x = np.array([[1.0, 0.0, 2.0], [0.0, 3.0, 1.0], [1.0, 1.0, -1.0]])
    d = Dataset.from_points(x)
    rho = make_rho("gaussian", 3)
    m = d.second_moment()
    # log det M + q for the normal likelihood at its maximizer, minus the anchor
    assert objective(rho, d, m) < objective(rho, d, np.eye(3))
    anchor = np.mean(np.sum(x**2, 1))
    assert objective(rho, d, m) == pytest.approx(3.0 + np.linalg.slogdet(m)[1] - anchor, rel=1e-12)


def test_tyler_rejects_zero_rows():
    d = Dataset.from_points(np.array([[1.0, 2.0], [0.0, 0.0], [1.0, -1.0]]))
    with pytest.raises(DomainError):
        objective(make_rho("tyler", 2), d, np.eye(2))


def test_objective_rejects_non_pd_and_singular():
    d = Dataset.from_points(np.ones((3, 2)))
    rho = make_rho("gaussian", 2)
    with pytest.raises(DomainError):
        objective(rho, d, np.diag([1.0, -1.0]))
    with pytest.raises(DomainError):
        grad_hess(rho, d, np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        objective(make_rho("gaussian", 3), d, np.eye(3))


# --- gradient and Hessian ---------------------------------------------------

def test_gaussian_gradient_at_identity():
    d = Dataset.from_points(rng_for(2).standard_normal((6, 3)))
    m = grad_hess(make_rho("gaussian", 3), d, np.eye(3))
    assert np.allclose(m.gradient, np.eye(3) - d.second_moment(), atol=1e-14)


def test_tyler_gradient_formula_and_trace():
    rng = rng_for(3)
    q = 4
    d = Dataset.from_points(rng.standard_normal((11, q)))
    b = random_factor(rng, q)
    g = grad_hess(make_rho("tyler", q), d, b).gradient
    z = np.linalg.solve(b, d.points.T).T
    ref = np.eye(q) - q * sum(w * np.outer(zi, zi) / (zi @ zi) for w, zi in zip(d.weights, z))
    assert np.allclose(g, ref, atol=1e-13)
    assert abs(np.trace(g)) <= 1e-10


def test_gradient_and_hessian_finite_differences():
    rng = rng_for(4)
    skipped = 0
    for q in (2, 4, 6):
        d = Dataset.from_points(rng.standard_normal((3 * q, q)))
        for rho in families(q):
            obj = ScatterObjective(rho, d)
            for _ in range(10):
                b = random_factor(rng, q)
                a = unit(random_sym(rng, q))
                if kink_straddled(rho, d, b, a):
                    skipped += 1
                    continue
                eg, eh = fd_rel_errors(obj.local(b), obj.value_at_factor, b, a)
                assert eg <= 1e-6, (rho.name, q, eg)
                assert eh <= 1e-5, (rho.name, q, eh)
    assert skipped <= 5


def test_reduced_hessian_polarization():
    rng = rng_for(5)
    for q in (2, 3, 6):
        d = Dataset.from_points(rng.standard_normal((4 * q, q)))
        for rho in families(q):
            m = grad_hess(rho, d, random_factor(rng, q))
            assert polarization_error(m, random_orthogonal(rng, q)) <= 1e-10


def test_hess_form_is_quadratic():
    rng = rng_for(6)
    d = Dataset.from_points(rng.standard_normal((10, 3)))
    m = grad_hess(make_rho("tdist", 3, nu=2.0), d, random_factor(rng, 3))
    a = random_sym(rng, 3)
    assert m.hess_form(2.5 * a) == pytest.approx(6.25 * m.hess_form(a), rel=1e-12)


def test_geodesic_convexity_along_random_geodesics():
    rng = rng_for(7)
    worst = np.inf
    for q in (2, 4, 6):
        d = Dataset.from_points(rng.standard_normal((3 * q, q)))
        for rho in families(q):
            obj = ScatterObjective(rho, d)
            for _ in range(5):
                b, a = random_factor(rng, q), random_sym(rng, q, 0.5)
                ts = np.linspace(-1, 1, 21)
                dt = ts[1] - ts[0]
                for t in ts:
                    fm, f0, fp = path_values(obj.value_at_factor, b @ scipy.linalg.expm(0.5 * t * a),
                                             a, dt)
                    worst = min(worst, (fp - 2 * f0 + fm) / max(1.0, abs(f0)))
    assert worst >= -1e-8


def test_hessian_nonnegative():
    rng = rng_for(8)
    for q in (2, 5):
        d = Dataset.from_points(rng.standard_normal((2 * q, q)))
        for rho in families(q):
            m = grad_hess(rho, d, random_factor(rng, q, 2.0))
            for _ in range(20):
                assert m.hess_form(random_sym(rng, q)) >= -1e-10


def test_affine_equivariance_of_local_model():
    rng = rng_for(9)
    q = 4
    x = rng.standard_normal((12, q))
    b = random_factor(rng, q)
    u = random_orthogonal(rng, q)
    for rho in families(q):
        m = grad_hess(rho, Dataset.from_points(x), b @ u)
        z = np.linalg.solve(b @ u, x.T).T
        m0 = ScatterObjective(rho, Dataset.from_points(z)).local(np.eye(q))
        assert np.allclose(m.gradient, m0.gradient, atol=1e-12)
        a = random_sym(rng, q)
        assert m.hess_form(a) == pytest.approx(m0.hess_form(a), rel=1e-10)


def test_estimating_residual_zero_for_gaussian_second_moment():
    d = Dataset.from_points(rng_for(10).standard_normal((8, 3)))
    obj = ScatterObjective(make_rho("gaussian", 3), d)
    assert obj.estimating_residual(d.second_moment()) <= 1e-14


# --- coercivity diagnostic --------------------------------------------------

def test_tyler_fewer_points_than_dimension_fails():
    rng = rng_for(11)
    x = rng.standard_normal((3, 5))
    rep = check_coercivity(make_rho("tyler", 5), Dataset.from_points(x))
    assert rep.status == "fail"
    # witness spans the data and carries all mass
    assert rep.witness_mass == pytest.approx(1.0)
    assert np.linalg.matrix_rank(np.hstack([rep.witness, x.T])) == rep.witness.shape[1]


def test_gaussian_passes_when_data_span():
    rng = rng_for(12)
    rep = check_coercivity(make_rho("gaussian", 3), Dataset.from_points(rng.standard_normal((3, 3))))
    assert rep.status == "pass"
    rep = check_coercivity(make_rho("gaussian", 3), Dataset.from_points(rng.standard_normal((2, 3))))
    assert rep.status == "fail"


def test_huber_collinear_points_fail():
    x = np.array([[1.0, 2.0], [-2.0, -4.0], [0.5, 1.0]])
    rep = check_coercivity(make_rho("huber", 2, K=3.0), Dataset.from_points(x))
    assert rep.status == "fail"
    assert rep.witness_mass == pytest.approx(1.0)
    assert rep.witness_bound == pytest.approx(1 - 1 / 3)


def test_tyler_general_position_passes():
    rng = rng_for(13)
    rep = check_coercivity(make_rho("tyler", 3), Dataset.from_points(rng.standard_normal((10, 3))))
    assert rep.status == "pass" and rep.exhaustive
