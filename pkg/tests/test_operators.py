import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from parhyp.operators import (
    DimensionError,
    LinearOperatorSpec,
    apply,
    bilinear_norm,
    check_damping_elastic_pairing,
    check_growth,
    check_lipschitz,
    check_monotone,
    check_yosida,
    cubic_potential,
    estimate_coercivity,
    identity_operator,
    linear_perturbation,
    polynomial_potential,
    yosida_approx,
    yosida_derivative,
    yosida_resolvent,
)
from parhyp.spatial import BoundaryCondition, Grid, assemble_laplacian

CUBIC = cubic_potential(1.0)
LINEAR = polynomial_potential([0.0, 1.0])


def bisect(fn, lo, hi, tol=1e-15):
    """Plain bisection, the independent oracle for scalar roots."""
    flo = fn(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if (fn(mid) > 0) == (flo > 0):
            lo, flo = mid, fn(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_identity_apply():
    op = identity_operator(np.ones(3))
    np.testing.assert_array_equal(apply(op, np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])


def test_dirichlet_stencil_by_hand():
    A = assemble_laplacian(Grid(5, 1.0), "dirichlet")
    np.testing.assert_allclose(apply(A, np.array([1.0, 0.0, 0.0])), [32.0, -16.0, 0.0])


def test_apply_dimension_mismatch():
    with pytest.raises(DimensionError):
        apply(identity_operator(np.ones(3)), np.ones(4))


def test_laplacian_matches_dense_rows():
    rng = np.random.default_rng(3)
    for bc in BoundaryCondition:
        grid = Grid(9, 2.0)
        A = assemble_laplacian(grid, bc)
        n, dx = A.dim, grid.spacing
        dense = np.zeros((n, n))
        for i in range(n):
            dense[i, i] = 2.0
            if i > 0:
                dense[i, i - 1] = -1.0
            if i < n - 1:
                dense[i, i + 1] = -1.0
        if bc is BoundaryCondition.NEUMANN:
            dense[0, 1] = dense[-1, -2] = -2.0  # mirrored ghost nodes
        dense /= dx**2
        w = rng.standard_normal(n)
        np.testing.assert_allclose(apply(A, w), dense @ w, rtol=1e-13, atol=1e-10)


def test_bilinear_norm_cases():
    ident = identity_operator(np.ones(2))
    assert bilinear_norm(ident, np.zeros(2)) == 0.0
    assert bilinear_norm(ident, np.array([3.0, 4.0])) == pytest.approx(5.0)
    A = assemble_laplacian(Grid(11), "neumann")
    assert bilinear_norm(A, np.full(11, 2.5)) == pytest.approx(0.0, abs=1e-12)


def test_coercivity_of_identity():
    assert estimate_coercivity(identity_operator(np.full(5, 0.2))) == pytest.approx(1.0)


# resolvent and Yosida approximation

def test_resolvent_exact_roots():
    assert yosida_resolvent(CUBIC, 1.0, 2.0) == pytest.approx(1.0, abs=1e-14)
    assert yosida_resolvent(LINEAR, 1.0, 4.0) == pytest.approx(2.0, abs=1e-14)


def test_resolvent_against_bisection():
    oracle = bisect(lambda x: x + 0.1 * x**3 - 0.7, 0.0, 1.0)
    assert yosida_resolvent(CUBIC, 0.1, 0.7) == pytest.approx(oracle, abs=1e-14)


def test_resolvent_vectorised_matches_scalar():
    g = np.linspace(-50, 50, 41)
    vec = yosida_resolvent(CUBIC, 0.3, g)
    for gi, xi in zip(g, vec):
        assert xi == pytest.approx(yosida_resolvent(CUBIC, 0.3, float(gi)), abs=1e-12)


def test_resolvent_rejects_bad_lambda():
    with pytest.raises(ValueError):
        yosida_resolvent(CUBIC, 0.0, 1.0)


def test_yosida_approx_cases():
    assert yosida_approx(CUBIC, 0.5, 0.0) == 0.0
    assert yosida_approx(LINEAR, 1.0, 4.0) == pytest.approx(2.0)
    assert yosida_approx(CUBIC, 1e-6, 0.5) == pytest.approx(0.125, rel=1e-5)


def test_yosida_derivative_matches_difference():
    r, lam, eps = 0.8, 0.2, 1e-6
    fd = (yosida_approx(CUBIC, lam, r + eps) - yosida_approx(CUBIC, lam, r - eps)) / (2 * eps)
    assert float(yosida_derivative(CUBIC, lam, r)) == pytest.approx(fd, rel=1e-7)


lams = st.floats(1e-4, 10.0)
points = st.floats(-20.0, 20.0)


@settings(max_examples=200, deadline=None)
@given(lams, points, points)
def test_yosida_lipschitz_and_monotone(lam, r, s):
    a, b = yosida_approx(CUBIC, lam, r), yosida_approx(CUBIC, lam, s)
    assert abs(a - b) <= abs(r - s) / lam * (1 + 1e-9) + 1e-12
    assert (a - b) * (r - s) >= -1e-9 * (abs(a) + abs(b) + 1.0) * abs(r - s)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3.0, 3.0))
def test_yosida_converges_as_lambda_shrinks(r):
    errs = [abs(yosida_approx(CUBIC, lam, r) - r**3) for lam in (1e-1, 1e-3, 1e-5)]
    assert errs[1] <= errs[0] + 1e-12 and errs[2] <= errs[1] + 1e-12
    assert errs[2] <= 1e-3 * (1 + abs(r) ** 3)


@settings(max_examples=50, deadline=None)
@given(lams)
def test_yosida_vanishes_at_origin(lam):
    assert yosida_approx(CUBIC, lam, 0.0) == 0.0


def test_yosida_report_passes():
    assert all(r.passed for r in check_yosida(CUBIC))


# nonlinearity checks

def test_nonlinearity_checks():
    assert check_monotone(CUBIC).passed
    assert check_growth(CUBIC).passed
    assert check_lipschitz(linear_perturbation(2.0)).passed
    assert not check_monotone(polynomial_potential([0.0, -1.0])).passed


def test_polynomial_degree_guard():
    with pytest.raises(ValueError):
        polynomial_potential([0, 0, 0, 0, 1.0])


# damping / elastic pairing

def _samples(n, k=20, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(n) for _ in range(k)]


def test_pairing_identity_with_neumann():
    A2 = assemble_laplacian(Grid(9), "neumann")
    rep = check_damping_elastic_pairing(identity_operator(A2.weights), A2, _samples(9))
    assert rep.passed


def test_pairing_laplacian_with_itself():
    A2 = assemble_laplacian(Grid(9), "dirichlet")
    assert check_damping_elastic_pairing(A2, A2, _samples(7)).passed


def test_pairing_dimension_mismatch():
    B = assemble_laplacian(Grid(9), "dirichlet")
    A2 = assemble_laplacian(Grid(11), "dirichlet")
    with pytest.raises(DimensionError):
        check_damping_elastic_pairing(B, A2, _samples(7))


def test_pairing_detects_asymmetry():
    W = np.ones(3)
    B = LinearOperatorSpec(sp.csr_matrix(np.eye(3)), W)
    A2 = LinearOperatorSpec(sp.csr_matrix(np.array([[1.0, 1.0, 0], [0, 1.0, 0], [0, 0, 1.0]])), W)
    assert not check_damping_elastic_pairing(B, A2, _samples(3)).passed
