"""Finite-difference grids, field spaces and the concrete operators of the two model problems.

A field with homogeneous Dirichlet conditions lives on the interior nodes only;
a Neumann field keeps every node and closes its stencil with mirrored ghosts.
Both use the trapezoidal weights of the full grid, so moving a vector between
two field spaces (:func:`transfer`) preserves inner products.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .operators import (
    LinearOperatorSpec,
    LipschitzPerturbation,
    NonlinearPotential,
    identity_operator,
    inner,
)


class BoundaryCondition(str, enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


class DampingKind(str, enum.Enum):
    IDENTITY = "identity"
    LAPLACIAN = "laplacian"


@dataclass(frozen=True)
class Grid:
    nodes_per_axis: int
    length: float = 1.0
    dimension: int = 1

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("only 1D and 2D tensor grids are supported")
        if self.nodes_per_axis < 3:
            raise ValueError("a grid needs at least 3 nodes per axis")
        if self.length <= 0:
            raise ValueError("domain length must be positive")

    @property
    def spacing(self) -> float:
        return self.length / (self.nodes_per_axis - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.nodes_per_axis)

    @property
    def axis_weights(self) -> np.ndarray:
        w = np.full(self.nodes_per_axis, self.spacing)
        w[[0, -1]] *= 0.5
        return w

    @property
    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape (n_nodes,) in 1D and (n_nodes, 2) in 2D."""
        x = self.axis
        if self.dimension == 1:
            return x
        X, Y = np.meshgrid(x, x, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def quadrature_weights(self) -> np.ndarray:
        w = self.axis_weights
        return w if self.dimension == 1 else np.kron(w, w)

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_axis ** self.dimension

    @property
    def volume(self) -> float:
        return self.length ** self.dimension

    def boundary_mask(self) -> np.ndarray:
        edge = np.zeros(self.nodes_per_axis, bool)
        edge[[0, -1]] = True
        if self.dimension == 1:
            return edge
        return (edge[:, None] | edge[None, :]).ravel()


@dataclass(frozen=True)
class FieldSpace:
    """The unknowns of one field on a grid: a node mask plus its weights."""

    grid: Grid
    bc: BoundaryCondition

    def __post_init__(self):
        object.__setattr__(self, "bc", BoundaryCondition(self.bc))

    @cached_property
    def mask(self) -> np.ndarray:
        if self.bc is BoundaryCondition.DIRICHLET:
            return ~self.grid.boundary_mask()
        return np.ones(self.grid.n_nodes, bool)

    @cached_property
    def weights(self) -> np.ndarray:
        return self.grid.quadrature_weights[self.mask]

    @cached_property
    def coordinates(self) -> np.ndarray:
        return self.grid.coordinates[self.mask]

    @property
    def dim(self) -> int:
        return int(self.mask.sum())

    def embed(self, u: np.ndarray) -> np.ndarray:
        """Full-grid vector, zero at eliminated nodes."""
        full = np.zeros(self.grid.n_nodes)
        full[self.mask] = u
        return full


def transfer(u: np.ndarray, source: FieldSpace, target: FieldSpace) -> np.ndarray:
    if source.mask is target.mask or np.array_equal(source.mask, target.mask):
        return np.asarray(u, float)
    return source.embed(u)[target.mask]


def _laplacian_1d(n: int, dx: float, bc: BoundaryCondition) -> sp.csr_matrix:
    if bc is BoundaryCondition.DIRICHLET:
        m = n - 2
        main = np.full(m, 2.0)
        off = np.full(m - 1, -1.0)
        return sp.diags([off, main, off], [-1, 0, 1], format="csr") / dx**2
    main = np.full(n, 2.0)
    upper = np.full(n - 1, -1.0)
    lower = np.full(n - 1, -1.0)
    upper[0] = -2.0
    lower[-1] = -2.0
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / dx**2


def assemble_laplacian(grid: Grid, bc: BoundaryCondition | str) -> LinearOperatorSpec:
    """Second-order stencil for -Laplacian with homogeneous bc."""
    bc = BoundaryCondition(bc)
    A1 = _laplacian_1d(grid.nodes_per_axis, grid.spacing, bc)
    if grid.dimension == 2:
        eye = sp.identity(A1.shape[0], format="csr")
        A = (sp.kron(A1, eye) + sp.kron(eye, A1)).tocsr()
    else:
        A = A1
    space = FieldSpace(grid, bc)
    bound = float(abs(A).sum(axis=1).max())
    return LinearOperatorSpec(A, space.weights, bound=bound, name=f"-Laplacian[{bc.value}]")


def first_difference_form(grid: Grid, bc: BoundaryCondition, w: np.ndarray, z: Optional[np.ndarray] = None) -> float:
    """sum over grid edges of (difference quotient products) * edge measure.

    Independent of the stencil: built from explicit first differences on the
    full grid, which is what the integration-by-parts identity compares to.
    """
    space = FieldSpace(grid, BoundaryCondition(bc))
    z = w if z is None else z
    W = space.embed(w)
    Z = space.embed(z)
    dx = grid.spacing
    if grid.dimension == 1:
        return float(np.sum(np.diff(W) * np.diff(Z)) / dx)
    n = grid.nodes_per_axis
    W2, Z2 = W.reshape(n, n), Z.reshape(n, n)
    wy = grid.axis_weights  # transverse trapezoid weights
    gx = np.sum((np.diff(W2, axis=0) * np.diff(Z2, axis=0)) * wy[None, :]) / dx
    gy = np.sum((np.diff(W2, axis=1) * np.diff(Z2, axis=1)) * wy[:, None]) / dx
    return float(gx + gy)


@dataclass(frozen=True)
class NormPack:
    space: FieldSpace

    def h(self, w: np.ndarray) -> float:
        return float(np.sqrt(inner(self.space.weights, w, w)))

    def seminorm_sq(self, w: np.ndarray) -> float:
        return first_difference_form(self.space.grid, self.space.bc, w)

    def v(self, w: np.ndarray) -> float:
        return float(np.sqrt(self.h(w) ** 2 + self.seminorm_sq(w)))


def discrete_norms(grid: Grid, bc: BoundaryCondition | str) -> NormPack:
    return NormPack(FieldSpace(grid, BoundaryCondition(bc)))


def sample_function(grid: Grid, fn: Callable, bc: BoundaryCondition | str | None = None) -> np.ndarray:
    """Evaluate fn at the nodes of the grid (or of the field space for bc)."""
    coords = grid.coordinates
    if bc is not None:
        coords = FieldSpace(grid, BoundaryCondition(bc)).coordinates
    if grid.dimension == 1:
        values = fn(coords)
    else:
        values = fn(coords[:, 0], coords[:, 1])
    return np.broadcast_to(np.asarray(values, dtype=float), (len(coords),)).copy()


Source = Callable[[float], np.ndarray]


@dataclass
class ProblemInstance:
    grid: Grid
    bc_theta: BoundaryCondition
    bc_phi: BoundaryCondition
    damping_kind: DampingKind
    potential: NonlinearPotential
    perturbation: LipschitzPerturbation
    theta0: np.ndarray
    phi0: np.ndarray
    v0: np.ndarray
    source: Source
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bc_theta = BoundaryCondition(self.bc_theta)
        self.bc_phi = BoundaryCondition(self.bc_phi)
        self.damping_kind = DampingKind(self.damping_kind)
        for label, vec, space in (
            ("theta0", self.theta0, self.theta_space),
            ("phi0", self.phi0, self.phi_space),
            ("v0", self.v0, self.phi_space),
        ):
            if np.shape(vec) != (space.dim,):
                raise ValueError(f"{label} has shape {np.shape(vec)}, expected ({space.dim},)")
        self.theta0 = np.asarray(self.theta0, float)
        self.phi0 = np.asarray(self.phi0, float)
        self.v0 = np.asarray(self.v0, float)

    @property
    def theta_space(self) -> FieldSpace:
        return FieldSpace(self.grid, self.bc_theta)

    @property
    def phi_space(self) -> FieldSpace:
        return FieldSpace(self.grid, self.bc_phi)


@dataclass(frozen=True)
class Operators:
    """Everything the stepper needs, assembled once per instance."""

    L: LinearOperatorSpec
    B: LinearOperatorSpec
    A1: LinearOperatorSpec
    A2: LinearOperatorSpec
    theta_space: FieldSpace
    phi_space: FieldSpace
    potential: NonlinearPotential
    perturbation: LipschitzPerturbation

    @property
    def c_L(self) -> float:
        return 1.0

    def to_phi(self, theta: np.ndarray) -> np.ndarray:
        return transfer(theta, self.theta_space, self.phi_space)

    def to_theta(self, phi: np.ndarray) -> np.ndarray:
        return transfer(phi, self.phi_space, self.theta_space)


def assemble_damping(instance: ProblemInstance) -> LinearOperatorSpec:
    """B = I for damping_kind identity, else the Laplacian in phi's space.

    The Laplacian damping of the second model problem is Dirichlet; for custom
    instances it follows bc_phi so that B and A2 act on the same unknowns.
    """
    if instance.damping_kind is DampingKind.IDENTITY:
        return identity_operator(instance.phi_space.weights, name="B=I")
    op = assemble_laplacian(instance.grid, instance.bc_phi)
    return LinearOperatorSpec(op.matrix, op.weights, bound=op.bound, name="B=-Laplacian")


def assemble_operators(instance: ProblemInstance) -> Operators:
    A1 = assemble_laplacian(instance.grid, instance.bc_theta)
    A2 = assemble_laplacian(instance.grid, instance.bc_phi)
    return Operators(
        L=identity_operator(instance.phi_space.weights, name="L=I"),
        B=assemble_damping(instance),
        A1=LinearOperatorSpec(A1.matrix, A1.weights, bound=A1.bound, name="A1"),
        A2=LinearOperatorSpec(A2.matrix, A2.weights, bound=A2.bound, name="A2"),
        theta_space=instance.theta_space,
        phi_space=instance.phi_space,
        potential=instance.potential,
        perturbation=instance.perturbation,
    )


def potential_energy(potential: NonlinearPotential, space: FieldSpace, phi: np.ndarray) -> float:
    """i(phi) = integral of beta_hat(phi), same quadrature as the H inner product."""
    return float(np.dot(space.weights, potential.beta_hat(phi)))


PROBLEMS = {
    "P1": (BoundaryCondition.DIRICHLET, BoundaryCondition.NEUMANN, DampingKind.IDENTITY),
    "P2": (BoundaryCondition.DIRICHLET, BoundaryCondition.DIRICHLET, DampingKind.LAPLACIAN),
}


def model_problem(
    kind: str,
    grid: Grid,
    potential: NonlinearPotential,
    perturbation: LipschitzPerturbation,
    theta0: Callable,
    phi0: Callable,
    v0: Callable,
    source: Optional[Callable[[float], np.ndarray]] = None,
) -> ProblemInstance:
    """Instance of one of the two model problems from analytic initial data."""
    bc_theta, bc_phi, damping = PROBLEMS[kind]
    theta_space = FieldSpace(grid, bc_theta)
    if source is None:
        zero = np.zeros(theta_space.dim)
        source = lambda t: zero
    return ProblemInstance(
        grid=grid, bc_theta=bc_theta, bc_phi=bc_phi, damping_kind=damping,
        potential=potential, perturbation=perturbation,
        theta0=sample_function(grid, theta0, bc_theta),
        phi0=sample_function(grid, phi0, bc_phi),
        v0=sample_function(grid, v0, bc_phi),
        source=source, name=kind,
    )
