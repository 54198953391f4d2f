import numpy as np
import pytest

from parhyp.operators import ZERO_PERTURBATION, ZERO_POTENTIAL, apply, inner
from parhyp.spatial import (
    BoundaryCondition,
    FieldSpace,
    Grid,
    assemble_damping,
    assemble_laplacian,
    assemble_operators,
    discrete_norms,
    model_problem,
    sample_function,
    transfer,
)


def _instance(kind, n=9):
    zero = lambda x: 0 * x
    return model_problem(kind, Grid(n), ZERO_POTENTIAL, ZERO_PERTURBATION, zero, zero, zero)


def test_three_interior_nodes_tridiagonal():
    A = assemble_laplacian(Grid(5), "dirichlet").matrix.toarray()
    expected = np.array([[32, -16, 0], [-16, 32, -16], [0, -16, 32]], float)
    np.testing.assert_allclose(A, expected)


def test_neumann_kernel():
    A = assemble_laplacian(Grid(17, 3.0), "neumann")
    np.testing.assert_allclose(apply(A, np.full(17, -1.7)), 0.0, atol=1e-12)


@pytest.mark.parametrize("n", [17, 33, 65])
def test_dirichlet_first_eigenvalue(n):
    A = assemble_laplacian(Grid(n, 1.0), "dirichlet").matrix.toarray()
    lam = np.linalg.eigvalsh(A)[0]
    # discrete value 4/dx^2 sin^2(pi dx / 2) sits just below pi^2
    dx = 1.0 / (n - 1)
    assert lam == pytest.approx(4 / dx**2 * np.sin(np.pi * dx / 2) ** 2, rel=1e-12)
    assert abs(lam - np.pi**2) < np.pi**4 * dx**2 / 12 + 1e-9


def test_laplacian_selfadjoint_in_weighted_product():
    rng = np.random.default_rng(0)
    for bc in BoundaryCondition:
        for dim in (1, 2):
            A = assemble_laplacian(Grid(6, 1.3, dim), bc)
            w, z = rng.standard_normal(A.dim), rng.standard_normal(A.dim)
            assert inner(A.weights, apply(A, w), z) == pytest.approx(inner(A.weights, w, apply(A, z)), rel=1e-12)


def test_weighted_form_equals_edge_differences():
    """(A w, w)_H equals the sum of squared difference quotients."""
    rng = np.random.default_rng(1)
    for bc in BoundaryCondition:
        for dim in (1, 2):
            grid = Grid(7, 2.0, dim)
            A = assemble_laplacian(grid, bc)
            w = rng.standard_normal(A.dim)
            assert inner(A.weights, apply(A, w), w) == pytest.approx(discrete_norms(grid, bc).seminorm_sq(w), rel=1e-12)


def test_damping_choice():
    p1, p2 = _instance("P1"), _instance("P2")
    B1 = assemble_damping(p1)
    assert B1.is_identity
    B2 = assemble_damping(p2)
    ref = assemble_laplacian(p2.grid, "dirichlet")
    assert (B2.matrix != ref.matrix).nnz == 0
    assert np.linalg.norm(apply(B2, np.ones(B2.dim))) > 0
    assert p1.bc_theta is BoundaryCondition.DIRICHLET and p1.bc_phi is BoundaryCondition.NEUMANN


def test_norms_trivial_cases():
    grid = Grid(9)
    pack = discrete_norms(grid, "neumann")
    assert pack.h(np.zeros(9)) == 0 and pack.v(np.zeros(9)) == 0
    assert pack.h(np.full(9, -3.0)) == pytest.approx(3.0)
    assert pack.v(np.full(9, -3.0)) == pytest.approx(3.0)


def test_norms_against_explicit_sums():
    rng = np.random.default_rng(2)
    grid = Grid(9, 1.0)
    w = rng.standard_normal(7)
    pack = discrete_norms(grid, "dirichlet")
    full = np.concatenate([[0.0], w, [0.0]])
    dx = grid.spacing
    h_sq = sum(dx * x * x for x in w)  # boundary nodes carry zero
    semi = sum(((full[i + 1] - full[i]) / dx) ** 2 * dx for i in range(8))
    assert pack.h(w) ** 2 == pytest.approx(h_sq, rel=1e-13)
    assert pack.seminorm_sq(w) == pytest.approx(semi, rel=1e-13)
    assert pack.v(w) ** 2 == pytest.approx(h_sq + semi, rel=1e-13)


def test_sample_function():
    grid = Grid(5)
    np.testing.assert_array_equal(sample_function(grid, lambda x: 0 * x), 0.0)
    np.testing.assert_allclose(sample_function(grid, lambda x: x), [0, 0.25, 0.5, 0.75, 1.0])
    vals = sample_function(grid, lambda x: np.sin(np.pi * x), "dirichlet")
    np.testing.assert_allclose(vals, np.sin(np.pi * np.array([0.25, 0.5, 0.75])))


def test_transfer_round_trip():
    grid = Grid(6, 1.0, 2)
    d, n = FieldSpace(grid, "dirichlet"), FieldSpace(grid, "neumann")
    u = np.arange(d.dim, dtype=float)
    np.testing.assert_array_equal(transfer(transfer(u, d, n), n, d), u)
    assert inner(n.weights, transfer(u, d, n), transfer(u, d, n)) == pytest.approx(inner(d.weights, u, u))


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(2)
    with pytest.raises(ValueError):
        Grid(5, dimension=3)


def test_operators_bundle_dims():
    ops = assemble_operators(_instance("P1"))
    assert ops.A1.dim == 7 and ops.A2.dim == 9 and ops.B.dim == 9
    assert ops.c_L == 1.0
