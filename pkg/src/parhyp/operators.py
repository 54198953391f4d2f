"""Discrete linear operators, scalar monotone nonlinearities and their checks.

All inner products are weighted by per-node quadrature weights, so an
operator is "symmetric" when ``W @ A`` is symmetric, not ``A`` itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

SYMMETRY_TOL = 1e-12
CONDITION_TOL = 1e-10

ScalarFn = Callable[[np.ndarray], np.ndarray]


class DimensionError(ValueError):
    pass


class MonotonicityError(ArithmeticError):
    """A form or scalar map that should be monotone is not."""


def inner(weights: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(weights * u, v))


def h_norm(weights: np.ndarray, u: np.ndarray) -> float:
    return float(np.sqrt(max(inner(weights, u, u), 0.0)))


@dataclass(frozen=True)
class LinearOperatorSpec:
    """Sparse matrix acting on nodal vectors of one field space.

    ``coercivity_floor`` and ``bound`` are diagnostics only; the solvers never
    read them.
    """

    matrix: sp.csr_matrix
    weights: np.ndarray
    is_identity: bool = False
    coercivity_floor: Optional[float] = None
    bound: Optional[float] = None
    name: str = ""

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def action(self) -> Callable[[np.ndarray], np.ndarray]:
        return lambda w: apply(self, w)

    def __matmul__(self, w):
        return apply(self, w)


def identity_operator(weights: np.ndarray, name: str = "I") -> LinearOperatorSpec:
    n = len(weights)
    return LinearOperatorSpec(
        sp.identity(n, format="csr"), np.asarray(weights, float), is_identity=True,
        coercivity_floor=1.0, bound=1.0, name=name,
    )


def apply(op: LinearOperatorSpec, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape[0] != op.dim:
        raise DimensionError(f"operator {op.name or '?'} has dim {op.dim}, got vector of length {w.shape[0]}")
    if op.is_identity:
        return w.copy()
    return op.matrix @ w


def form(op: LinearOperatorSpec, w: np.ndarray, z: Optional[np.ndarray] = None) -> float:
    """(op w, z) in the weighted inner product; z defaults to w."""
    return inner(op.weights, apply(op, w), w if z is None else z)


def bilinear_norm(op: LinearOperatorSpec, w) -> float:
    """sqrt((op w, w)) without forming any operator square root."""
    w = np.asarray(w, dtype=float)
    value = form(op, w)
    scale = float(np.dot(op.weights * w, w))
    if op.bound is not None:
        scale *= op.bound
    if value < -SYMMETRY_TOL * max(scale, 1.0):
        raise MonotonicityError(f"(op w, w) = {value:.3e} < 0 for operator {op.name or '?'}")
    return float(np.sqrt(max(value, 0.0)))


def operator_norm_estimate(op: LinearOperatorSpec) -> float:
    """Row-sum bound on the weighted operator norm (exact enough for tolerances)."""
    return float(abs(op.matrix).sum(axis=1).max())


def estimate_coercivity(op: LinearOperatorSpec, n_vectors: int = 8, seed: int = 0) -> float:
    """Smallest Ritz value of op in the weighted inner product.

    Small operators use the full space (the Ritz value is then the exact
    smallest eigenvalue); larger ones a random subspace of ``n_vectors``.
    """
    rng = np.random.default_rng(seed)
    n = op.dim
    k = min(n, max(n_vectors, 1))
    W = op.weights
    if n <= 400:
        S = np.sqrt(W)
        M = (S[:, None] * op.matrix.toarray()) / S[None, :]
        M = 0.5 * (M + M.T)
        return float(np.linalg.eigvalsh(M)[0])
    V = rng.standard_normal((n, k))
    V, _ = np.linalg.qr(np.sqrt(W)[:, None] * V)
    AV = np.column_stack([np.sqrt(W) * apply(op, V[:, j] / np.sqrt(W)) for j in range(k)])
    H = V.T @ AV
    return float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])


@dataclass
class ConditionReport:
    label: str
    worst: float
    tolerance: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst) and self.worst <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.label}: worst={self.worst:.3e} tol={self.tolerance:.1e}"


def _check_dims(*ops: LinearOperatorSpec) -> None:
    dims = {op.dim for op in ops}
    if len(dims) != 1:
        raise DimensionError(f"operator dimensions disagree: {sorted(dims)}")


def check_symmetry(op: LinearOperatorSpec, samples: Sequence[np.ndarray], tol: float = CONDITION_TOL) -> ConditionReport:
    norm = operator_norm_estimate(op)
    worst = 0.0
    for w, z in zip(samples[::2], samples[1::2]):
        gap = abs(form(op, w, z) - form(op, z, w))
        scale = norm * h_norm(op.weights, w) * h_norm(op.weights, z)
        worst = max(worst, gap / scale if scale > 0 else gap)
    return ConditionReport(f"{op.name or 'operator'} symmetric", worst, tol)


def check_positivity(op: LinearOperatorSpec, samples: Sequence[np.ndarray], tol: float = CONDITION_TOL) -> ConditionReport:
    norm = operator_norm_estimate(op)
    worst = 0.0
    for w in samples:
        scale = norm * inner(op.weights, w, w)
        value = form(op, w)
        worst = max(worst, -value / scale if scale > 0 else -value)
    return ConditionReport(f"{op.name or 'operator'} positive semidefinite", worst, tol)


def check_lower_bound(op: LinearOperatorSpec, c: float, samples: Sequence[np.ndarray], tol: float = CONDITION_TOL) -> ConditionReport:
    """(op w, w) >= c ||w||^2, relative violation."""
    worst = 0.0
    for w in samples:
        ww = inner(op.weights, w, w)
        if ww > 0:
            worst = max(worst, (c * ww - form(op, w)) / ww)
    return ConditionReport(f"{op.name or 'operator'} coercive with c={c:g}", worst, tol)


def check_damping_elastic_pairing(B: LinearOperatorSpec, A2: LinearOperatorSpec, samples: Sequence[np.ndarray], tol: float = CONDITION_TOL) -> ConditionReport:
    """(Bw, A2 w) >= 0 and (Bw, A2 z) = (Bz, A2 w), worst relative violation."""
    _check_dims(B, A2)
    for w in samples:
        if len(w) != B.dim:
            raise DimensionError(f"sample of length {len(w)} for operators of dim {B.dim}")
    W = B.weights
    nb, na = operator_norm_estimate(B), operator_norm_estimate(A2)
    worst_pos = worst_sym = 0.0
    for i, w in enumerate(samples):
        Bw, Aw = apply(B, w), apply(A2, w)
        scale = nb * na * inner(W, w, w)
        if scale > 0:
            worst_pos = max(worst_pos, -inner(W, Bw, Aw) / scale)
        z = samples[(i + 1) % len(samples)]
        Bz, Az = apply(B, z), apply(A2, z)
        scale = nb * na * h_norm(W, w) * h_norm(W, z)
        if scale > 0:
            worst_sym = max(worst_sym, abs(inner(W, Bw, Az) - inner(W, Bz, Aw)) / scale)
    return ConditionReport(
        "damping/elastic pairing nonnegative and cross-symmetric",
        max(worst_pos, worst_sym), tol,
        {"nonnegativity": worst_pos, "cross_symmetry": worst_sym},
    )


# --------------------------------------------------------------------------
# scalar nonlinearities


@dataclass(frozen=True)
class NonlinearPotential:
    """Single-valued monotone beta = d(beta_hat)/dr with beta_hat(0) = 0, beta_hat >= 0."""

    beta: ScalarFn
    beta_prime: ScalarFn
    beta_hat: ScalarFn
    growth_constant: float
    lipschitz_exponents: tuple = (4.0, 4.0)
    phi_lipschitz: Optional[float] = None
    name: str = "beta"


@dataclass(frozen=True)
class LipschitzPerturbation:
    pi: ScalarFn
    pi_prime: Optional[ScalarFn]
    lipschitz_constant: float
    name: str = "pi"


def cubic_potential(d1: float = 1.0) -> NonlinearPotential:
    """beta(r) = d1 r^3."""
    if d1 <= 0:
        raise ValueError("d1 must be positive")
    return NonlinearPotential(
        beta=lambda r: d1 * np.asarray(r, float) ** 3,
        beta_prime=lambda r: 3.0 * d1 * np.asarray(r, float) ** 2,
        beta_hat=lambda r: 0.25 * d1 * np.asarray(r, float) ** 4,
        growth_constant=6.0 * d1,
        name=f"{d1:g} r^3",
    )


def polynomial_potential(coefficients: Sequence[float]) -> NonlinearPotential:
    """beta(r) = sum c_k r^k for k = 0..3; c_0 must vanish."""
    c = np.asarray(coefficients, dtype=float)
    if len(c) > 4 and np.any(c[4:] != 0):
        raise ValueError("beta polynomial degree above 3 breaks the |beta''| <= C(1+|r|) growth bound")
    c = np.pad(c, (0, max(0, 4 - len(c))))[:4]
    P = np.polynomial.Polynomial(c)
    dP, d2P, iP = P.deriv(), P.deriv(2), P.integ()
    d2 = d2P.coef
    growth = float(np.sum(np.abs(np.pad(d2, (0, 2))[:2])))
    return NonlinearPotential(
        beta=lambda r: P(np.asarray(r, float)),
        beta_prime=lambda r: dP(np.asarray(r, float)),
        beta_hat=lambda r: iP(np.asarray(r, float)),
        growth_constant=max(growth, 1e-300),
        name=f"poly{tuple(c)}",
    )


def linear_perturbation(d2: float = 1.0) -> LipschitzPerturbation:
    """pi(r) = -d2 r."""
    return LipschitzPerturbation(
        pi=lambda r: -d2 * np.asarray(r, float),
        pi_prime=lambda r: np.full_like(np.asarray(r, float), -d2),
        lipschitz_constant=abs(d2),
        name=f"-{d2:g} r",
    )


def affine_perturbation(coefficients: Sequence[float]) -> LipschitzPerturbation:
    c = np.asarray(coefficients, dtype=float)
    if len(c) > 2 and np.any(c[2:] != 0):
        raise ValueError("pi polynomial of degree >= 2 is not globally Lipschitz")
    c0 = float(c[0]) if len(c) > 0 else 0.0
    c1 = float(c[1]) if len(c) > 1 else 0.0
    return LipschitzPerturbation(
        pi=lambda r: c0 + c1 * np.asarray(r, float),
        pi_prime=lambda r: np.full_like(np.asarray(r, float), c1),
        lipschitz_constant=abs(c1),
        name=f"{c0:g} + {c1:g} r",
    )


ZERO_POTENTIAL = NonlinearPotential(
    beta=lambda r: np.zeros_like(np.asarray(r, float)),
    beta_prime=lambda r: np.zeros_like(np.asarray(r, float)),
    beta_hat=lambda r: np.zeros_like(np.asarray(r, float)),
    growth_constant=0.0,
    name="0",
)

ZERO_PERTURBATION = LipschitzPerturbation(
    pi=lambda r: np.zeros_like(np.asarray(r, float)),
    pi_prime=lambda r: np.zeros_like(np.asarray(r, float)),
    lipschitz_constant=0.0,
    name="0",
)


def _sample_pairs(samples: int, radius: float, seed: int):
    rng = np.random.default_rng(seed)
    r = rng.uniform(-radius, radius, samples)
    s = rng.uniform(-radius, radius, samples)
    return r, s


def check_monotone(potential: NonlinearPotential, samples: int = 1000, radius: float = 10.0, seed: int = 0) -> ConditionReport:
    r, s = _sample_pairs(samples, radius, seed)
    prod = (potential.beta(r) - potential.beta(s)) * (r - s)
    scale = np.maximum(np.abs(potential.beta(r)) + np.abs(potential.beta(s)), 1.0) * np.abs(r - s)
    worst = float(np.max(-prod / scale))
    b0 = abs(float(potential.beta(np.array(0.0))))
    return ConditionReport("beta monotone with beta(0) = 0", max(worst, b0), 1e-12, {"beta(0)": b0})


def check_growth(potential: NonlinearPotential, radius: float = 10.0, points: int = 401, step: float = 1e-4) -> ConditionReport:
    """|beta''| <= C_beta (1 + |r|) using central differences of beta_prime."""
    r = np.linspace(-radius, radius, points)
    d2 = (potential.beta_prime(r + step) - potential.beta_prime(r - step)) / (2 * step)
    bound = potential.growth_constant * (1.0 + np.abs(r))
    worst = float(np.max((np.abs(d2) - bound) / np.maximum(bound, 1.0)))
    return ConditionReport("beta'' growth at most linear", max(worst, 0.0), 1e-6)


def check_lipschitz(pert: LipschitzPerturbation, samples: int = 1000, radius: float = 10.0, seed: int = 1) -> ConditionReport:
    r, s = _sample_pairs(samples, radius, seed)
    lhs = np.abs(pert.pi(r) - pert.pi(s))
    rhs = pert.lipschitz_constant * np.abs(r - s)
    worst = float(np.max((lhs - rhs) / np.maximum(np.abs(r - s), 1e-300)))
    return ConditionReport("pi Lipschitz with its declared constant", max(worst, 0.0), 1e-12)


# --------------------------------------------------------------------------
# Yosida regularisation of a scalar monotone beta


def yosida_resolvent(potential: NonlinearPotential, lam: float, g, max_iter: int = 200):
    """Solve x + lam*beta(x) = g nodewise (vectorised safeguarded Newton)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    g_arr = np.asarray(g, dtype=float)
    scalar = g_arr.ndim == 0
    g = np.atleast_1d(g_arr).astype(float)
    tol = 1e-13 * (1.0 + np.abs(g))
    F = lambda x: x + lam * potential.beta(x) - g

    lo = np.minimum(0.0, g)
    hi = np.maximum(0.0, g)
    width = np.maximum(hi - lo, 1.0)
    for _ in range(200):
        bad_lo = F(lo) > 0
        bad_hi = F(hi) < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, lo - width, lo)
        hi = np.where(bad_hi, hi + width, hi)
        width *= 2
    else:
        raise MonotonicityError("could not bracket the resolvent root; beta is not monotone")

    x = g / (1.0 + lam * np.maximum(potential.beta_prime(np.zeros_like(g)), 0.0))
    x = np.clip(x, lo, hi)
    for _ in range(max_iter):
        fx = F(x)
        done = np.abs(fx) <= tol
        if done.all():
            break
        lo = np.where(fx < 0, x, lo)
        hi = np.where(fx > 0, x, hi)
        dfx = 1.0 + lam * potential.beta_prime(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - fx / dfx
        inside = np.isfinite(step) & (step > lo) & (step < hi) & (dfx > 0)
        x = np.where(done, x, np.where(inside, step, 0.5 * (lo + hi)))
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(np.abs(x), 1.0)):
            break
    fx = F(x)
    if np.any(np.abs(fx) > tol) and np.any(hi - lo > 8 * np.finfo(float).eps * np.maximum(np.abs(x), 1.0)):
        raise MonotonicityError("resolvent iteration did not converge; beta is not monotone")
    return float(x[0]) if scalar else x


def yosida_approx(potential: NonlinearPotential, lam: float, r):
    """beta_lambda(r) = (r - J_lambda(r)) / lambda."""
    r_arr = np.asarray(r, dtype=float)
    return (r_arr - yosida_resolvent(potential, lam, r_arr)) / lam if r_arr.ndim else (
        (float(r_arr) - yosida_resolvent(potential, lam, float(r_arr))) / lam
    )


def yosida_derivative(potential: NonlinearPotential, lam: float, r):
    """d/dr beta_lambda(r) = beta'(J) / (1 + lam beta'(J))."""
    J = yosida_resolvent(potential, lam, r)
    bp = potential.beta_prime(np.asarray(J))
    return bp / (1.0 + lam * bp)


def check_yosida(potential: NonlinearPotential, samples: int = 1000, radius: float = 5.0,
                 lams: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6), seed: int = 0) -> List[ConditionReport]:
    """Lipschitz 1/lam, monotonicity, beta_lam(0) = 0 and convergence to beta as lam -> 0."""
    r, s = _sample_pairs(samples, radius, seed)
    reports = []
    lip, mono, zero = 0.0, 0.0, 0.0
    for lam in lams:
        br, bs = yosida_approx(potential, lam, r), yosida_approx(potential, lam, s)
        d = np.abs(r - s)
        lip = max(lip, float(np.max((np.abs(br - bs) - d / lam) / np.maximum(d / lam, 1e-300))))
        mono = max(mono, float(np.max(-(br - bs) * (r - s) / np.maximum((np.abs(br) + np.abs(bs) + 1.0) * d, 1e-300))))
        zero = max(zero, abs(float(yosida_approx(potential, lam, 0.0))))
    reports.append(ConditionReport("Yosida approximation 1/lambda-Lipschitz", max(lip, 0.0), 1e-10))
    reports.append(ConditionReport("Yosida approximation monotone", max(mono, 0.0), 1e-12))
    reports.append(ConditionReport("Yosida approximation vanishes at 0", zero, 1e-14))

    exact = potential.beta(r)
    scale = np.abs(exact) + 1.0
    errs = [float(np.max(np.abs(yosida_approx(potential, lam, r) - exact) / scale)) for lam in lams]
    # errors must shrink as lambda does and end small
    growth = max((b - a for a, b in zip(errs, errs[1:])), default=0.0)
    worst = max(growth, errs[-1] - 1e-3, 0.0)
    reports.append(ConditionReport("Yosida approximation converges as lambda -> 0", worst, 1e-12,
                                   {"errors": dict(zip(map(float, lams), errs))}))
    return reports
