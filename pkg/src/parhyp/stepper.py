"""Implicit time stepping for the coupled heat / damped-wave phase-field system.

One step solves, for the unknowns (theta', phi'),

    theta' + h A1 theta' = theta + phi + h f - phi'
    L phi' + h B phi' + h^2 A2 phi' + h^2 beta(phi') + h^2 pi(phi')
        = L phi + h L v + h B phi + h^2 theta'

by iterating phi <- S(phi) = Bsolve(Asolve(phi)).  Asolve is a weighted
conjugate-gradient solve, Bsolve a damped Newton solve; S contracts with
factor at most h / (2 sqrt(c_L - h^2 - C_pi h^2)).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .operators import (
    LinearOperatorSpec,
    LipschitzPerturbation,
    NonlinearPotential,
    h_norm,
    yosida_approx,
    yosida_derivative,
)
from .spatial import Operators, ProblemInstance, assemble_operators

log = logging.getLogger(__name__)

# Successive differences below this multiple of machine precision are
# rounding noise; their ratios say nothing about contraction.
RATIO_NOISE_FLOOR = 1e3 * np.finfo(float).eps


class AdmissibilityError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        super().__init__(message if step is None else f"step {step}: {message}")


def admissibility_window(c_L: float, C_pi: float) -> float:
    """Upper bound sqrt(c_L / (1 + C_pi)) on the step size."""
    return math.sqrt(c_L / (1.0 + C_pi))


@dataclass(frozen=True)
class SchemeConfig:
    T: float
    N: int
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    fp_tol: float = 1e-11
    fp_max_iter: int = 200
    linear_tol: float = 1e-12
    linear_max_iter: int = 5000
    c_L: float = 1.0
    C_pi: float = 0.0

    @property
    def h(self) -> float:
        return self.T / self.N

    def with_N(self, N: int) -> "SchemeConfig":
        return replace(self, N=N)

    def validate(self) -> None:
        if self.T <= 0 or self.N < 1:
            raise AdmissibilityError(f"need T > 0 and N >= 1, got T={self.T}, N={self.N}")
        window = admissibility_window(self.c_L, self.C_pi)
        if self.h >= window:
            raise AdmissibilityError(
                f"h = {self.h:.6g} exceeds the step window sqrt(c_L/(1+C_pi)) = {window:.6g}"
                f" (c_L={self.c_L:g}, C_pi={self.C_pi:g})"
            )
        kappa = contraction_bound(self)
        if kappa >= 1.0:
            raise AdmissibilityError(f"contraction factor {kappa:.6g} >= 1 at h = {self.h:.6g}")


def contraction_bound(config: SchemeConfig) -> float:
    h = config.h
    gap = config.c_L - h * h * (1.0 + config.C_pi)
    if gap <= 0:
        window = admissibility_window(config.c_L, config.C_pi)
        raise AdmissibilityError(
            f"h = {h:.6g} outside the step window sqrt(c_L/(1+C_pi)) = {window:.6g}"
        )
    return h / (2.0 * math.sqrt(gap))


@dataclass
class StepState:
    theta: np.ndarray
    phi: np.ndarray
    v: np.ndarray
    z: np.ndarray
    n: int = 0
    t: float = 0.0


@dataclass
class StepReport:
    fp_iterations: int = 0
    ratios: List[float] = field(default_factory=list)
    fp_increments: List[float] = field(default_factory=list)
    newton_iterations: List[int] = field(default_factory=list)
    newton_residuals: List[float] = field(default_factory=list)
    linear_iterations: List[int] = field(default_factory=list)
    linear_residuals: List[float] = field(default_factory=list)
    kappa: float = 0.0
    error_bound: float = 0.0
    yosida_fallback: bool = False

    @property
    def max_ratio(self) -> float:
        return max(self.ratios, default=0.0)


def average_source(f: Callable[[float], np.ndarray], k: int, h: float, points: int = 5) -> np.ndarray:
    """(1/h) * integral of f over ((k-1)h, kh), 5-point Gauss-Legendre."""
    x, w = np.polynomial.legendre.leggauss(points)
    a = (k - 1) * h
    t = a + 0.5 * h * (x + 1.0)
    total = sum(wi * np.asarray(f(float(ti)), dtype=float) for wi, ti in zip(w, t))
    return 0.5 * total


# --------------------------------------------------------------------------
# theta sub-step


def weighted_cg(
    matvec: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    weights: np.ndarray,
    tol: float,
    x0: Optional[np.ndarray] = None,
    max_iter: int = 5000,
):
    """Conjugate gradients in the inner product (u, v) = sum w_i u_i v_i.

    Returns (x, iterations, relative residual).  The operator must be
    selfadjoint and positive definite for that inner product.
    """
    ip = lambda u, v: float(np.dot(weights * u, v))
    bnorm = math.sqrt(ip(b, b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    target = (tol * bnorm) ** 2
    it = 0
    r = b - matvec(x)
    rr = ip(r, r)
    # restart from the true residual whenever the recursive one claims convergence
    while rr > target and it < max_iter:
        p = r.copy()
        while rr > target and it < max_iter:
            Ap = matvec(p)
            pAp = ip(p, Ap)
            if pAp <= 0:
                raise SolverError("conjugate-gradient direction with nonpositive curvature; operator is indefinite")
            alpha = rr / pAp
            x += alpha * p
            r -= alpha * Ap
            rr_new = ip(r, r)
            p = r + (rr_new / rr) * p
            rr = rr_new
            it += 1
        r = b - matvec(x)
        rr = ip(r, r)
    res = math.sqrt(rr) / bnorm
    if res > tol:
        raise SolverError(f"conjugate gradients stalled at relative residual {res:.3e} (tol {tol:.1e})")
    return x, it, res


class ThetaSolver:
    """theta + h A1 theta = g."""

    def __init__(self, A1: LinearOperatorSpec, h: float, tol: float, max_iter: int = 5000):
        self.K = (sp.identity(A1.dim, format="csr") + h * A1.matrix).tocsr()
        self.weights = A1.weights
        self.tol = tol
        self.max_iter = max_iter

    def __call__(self, g: np.ndarray, x0: Optional[np.ndarray] = None):
        return weighted_cg(lambda u: self.K @ u, g, self.weights, self.tol, x0, self.max_iter)


def solve_theta_substep(g, h: float, A1: LinearOperatorSpec, tol: float = 1e-12) -> np.ndarray:
    x, _, _ = ThetaSolver(A1, h, tol)(np.asarray(g, dtype=float))
    return x


# --------------------------------------------------------------------------
# phi sub-step


class PhiSolver:
    """L phi + h B phi + h^2 A2 phi + h^2 beta(phi) + h^2 pi(phi) = g by damped Newton."""

    def __init__(
        self,
        L: LinearOperatorSpec,
        B: LinearOperatorSpec,
        A2: LinearOperatorSpec,
        potential: NonlinearPotential,
        perturbation: LipschitzPerturbation,
        h: float,
        tol: float = 1e-12,
        max_iter: int = 50,
    ):
        self.M = (L.matrix + h * B.matrix + h * h * A2.matrix).tocsc()
        self.weights = L.weights
        self.potential = potential
        self.perturbation = perturbation
        self.h2 = h * h
        self.tol = tol
        self.max_iter = max_iter
        self.diag = sp.identity(L.dim, format="csc")

    def residual(self, phi: np.ndarray, g: np.ndarray, lam: Optional[float] = None) -> np.ndarray:
        nonlin = self.potential.beta(phi) if lam is None else yosida_approx(self.potential, lam, phi)
        return self.M @ phi + self.h2 * (nonlin + self.perturbation.pi(phi)) - g

    def _slope(self, phi: np.ndarray, lam: Optional[float]) -> np.ndarray:
        d = self.potential.beta_prime(phi) if lam is None else yosida_derivative(self.potential, lam, phi)
        if self.perturbation.pi_prime is not None:
            d = d + self.perturbation.pi_prime(phi)
        return d

    def _newton(self, g, phi, lam, target):
        norm = lambda r: h_norm(self.weights, r)
        F = self.residual(phi, g, lam)
        res = norm(F)
        it = 0
        while res > target:
            if it >= self.max_iter:
                return phi, it, res, False
            J = self.M + self.h2 * sp.diags(self._slope(phi, lam), format="csc")
            step = splu(J).solve(-F)
            t = 1.0
            while True:
                trial = phi + t * step
                F_trial = self.residual(trial, g, lam)
                res_trial = norm(F_trial)
                if res_trial <= (1.0 - 1e-4 * t) * res or t < 1e-10:
                    break
                t *= 0.5
            it += 1
            if res_trial >= res and t < 1e-10:
                return phi, it, res, False
            phi, F, res = trial, F_trial, res_trial
        return phi, it, res, True

    def __call__(self, g: np.ndarray, x0: Optional[np.ndarray] = None):
        """Return (phi, newton iterations, residual norm, used_yosida)."""
        target = self.tol * (1.0 + h_norm(self.weights, g))
        phi = np.array(g if x0 is None else x0, dtype=float)
        phi, it, res, ok = self._newton(g, phi, None, target)
        if ok:
            return phi, it, res, False
        log.warning("Newton stalled (residual %.3e); continuing through Yosida-regularised problems", res)
        total = it
        lam = self.h2
        phi = np.array(g if x0 is None else x0, dtype=float)
        while lam > 1e-14:
            phi, it, res, ok = self._newton(g, phi, lam, target)
            total += it
            if not ok:
                break
            lam *= 0.1
        phi, it, res, ok = self._newton(g, phi, None, target)
        total += it
        if not ok:
            raise SolverError(f"Newton failed even after Yosida continuation (residual {res:.3e})")
        return phi, total, res, True


def solve_phi_substep(
    g,
    h: float,
    ops: Operators,
    potential: Optional[NonlinearPotential] = None,
    perturbation: Optional[LipschitzPerturbation] = None,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> np.ndarray:
    solver = PhiSolver(
        ops.L, ops.B, ops.A2,
        potential or ops.potential, perturbation or ops.perturbation,
        h, tol, max_iter,
    )
    phi, _, _, _ = solver(np.asarray(g, dtype=float))
    return phi


# --------------------------------------------------------------------------
# one step and whole trajectories


class StepContext:
    """Solvers and sizes fixed for a given (operators, config) pair."""

    def __init__(self, ops: Operators, config: SchemeConfig):
        config.validate()
        self.ops = ops
        self.config = config
        self.h = config.h
        self.kappa = contraction_bound(config)
        self.theta_solver = ThetaSolver(ops.A1, self.h, config.linear_tol, config.linear_max_iter)
        self.phi_solver = PhiSolver(
            ops.L, ops.B, ops.A2, ops.potential, ops.perturbation,
            self.h, config.newton_tol, config.newton_max_iter,
        )

    def theta_rhs(self, state: StepState, f_next: np.ndarray, phi: np.ndarray) -> np.ndarray:
        o = self.ops
        return state.theta + o.to_theta(state.phi - phi) + self.h * f_next

    def phi_rhs_base(self, state: StepState) -> np.ndarray:
        o, h = self.ops, self.h
        return o.L @ (state.phi + h * state.v) + h * (o.B @ state.phi)


def fixed_point_step(
    state: StepState,
    f_next: np.ndarray,
    config: SchemeConfig,
    ops: Operators,
    context: Optional[StepContext] = None,
    phi_start: Optional[np.ndarray] = None,
):
    """Advance one step by iterating S = Bsolve o Asolve from phi_n (or phi_start)."""
    ctx = context or StepContext(ops, config)
    h, W = ctx.h, ops.phi_space.weights
    report = StepReport(kappa=ctx.kappa)
    base = ctx.phi_rhs_base(state)
    fp_tol = config.fp_tol * (1.0 + h_norm(W, state.phi))
    noise = RATIO_NOISE_FLOOR * (1.0 + h_norm(W, state.phi))

    phi = np.array(state.phi if phi_start is None else phi_start, dtype=float)
    theta = state.theta.copy()
    prev_inc = None
    for k in range(config.fp_max_iter):
        theta, lit, lres = ctx.theta_solver(ctx.theta_rhs(state, f_next, phi), theta)
        report.linear_iterations.append(lit)
        report.linear_residuals.append(lres)
        g = base + h * h * ops.to_phi(theta)
        new_phi, nit, nres, fallback = ctx.phi_solver(g, phi)
        report.newton_iterations.append(nit)
        report.newton_residuals.append(nres)
        report.yosida_fallback |= fallback
        inc = h_norm(W, new_phi - phi)
        report.fp_increments.append(inc)
        if prev_inc is not None and prev_inc > noise:
            ratio = inc / prev_inc
            report.ratios.append(ratio)
            if ratio > 1.0 and prev_inc > 1e3 * fp_tol:
                raise SolverError(
                    f"fixed-point iteration expanded (ratio {ratio:.3g}); step size outside the contraction regime",
                    state.n,
                )
        prev_inc = inc
        phi = new_phi
        report.fp_iterations = k + 1
        if inc <= fp_tol:
            break
    else:
        raise SolverError(f"fixed-point iteration did not reach {fp_tol:.2e} in {config.fp_max_iter} sweeps", state.n)

    report.error_bound = ctx.kappa / (1.0 - ctx.kappa) * prev_inc
    theta, lit, lres = ctx.theta_solver(ctx.theta_rhs(state, f_next, phi), theta)
    report.linear_iterations.append(lit)
    report.linear_residuals.append(lres)
    v = (phi - state.phi) / h
    z = (v - state.v) / h
    return StepState(theta, phi, v, z, state.n + 1, (state.n + 1) * h), report


@dataclass
class Trajectory:
    states: List[StepState]
    config: SchemeConfig
    instance: ProblemInstance
    reports: List[StepReport]
    sources: List[np.ndarray]  # f_1 .. f_N

    def __repr__(self) -> str:
        return f"Trajectory({self.instance.name}, N={self.N}, h={self.h:.6g}, dim={self.states[0].phi.size})"

    @property
    def h(self) -> float:
        return self.config.h

    @property
    def N(self) -> int:
        return len(self.states) - 1

    def stack(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.states])

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h


def advance_trajectory(
    instance: ProblemInstance,
    config: SchemeConfig,
    ops: Optional[Operators] = None,
) -> Trajectory:
    ops = ops or assemble_operators(instance)
    ctx = StepContext(ops, config)
    h = config.h
    state = StepState(
        instance.theta0.copy(), instance.phi0.copy(), instance.v0.copy(),
        np.zeros_like(instance.phi0), 0, 0.0,
    )
    states, reports, sources = [state], [], []
    for n in range(config.N):
        f_next = average_source(instance.source, n + 1, h)
        try:
            state, report = fixed_point_step(state, f_next, config, ops, ctx)
        except SolverError as exc:
            if exc.step is None:
                raise SolverError(str(exc), n) from exc
            raise
        states.append(state)
        reports.append(report)
        sources.append(f_next)
        log.debug("step %d: %d sweeps, max ratio %.3g", n + 1, report.fp_iterations, report.max_ratio)
    states[0].z = states[1].z.copy()  # z_0 := z_1
    return Trajectory(states, config, instance, reports, sources)


def scheme_residuals(traj: Trajectory, ops: Optional[Operators] = None):
    """Per-step H-norm residuals of both scheme equations and their scales.

    Returns a list of dicts with keys heat, wave, heat_scale, wave_scale, where
    scale is the quantity the solver tolerance is relative to.
    """
    ops = ops or assemble_operators(traj.instance)
    h = traj.h
    Wt, Wp = ops.theta_space.weights, ops.phi_space.weights
    out = []
    for n in range(traj.N):
        s0, s1 = traj.states[n], traj.states[n + 1]
        f = traj.sources[n]
        heat = (s1.theta - s0.theta) / h + ops.to_theta(s1.phi - s0.phi) / h + ops.A1 @ s1.theta - f
        wave = (
            ops.L @ s1.z + ops.B @ s1.v + ops.A2 @ s1.phi
            + ops.potential.beta(s1.phi) + ops.perturbation.pi(s1.phi) - ops.to_phi(s1.theta)
        )
        g_heat = s0.theta + ops.to_theta(s0.phi - s1.phi) + h * f
        g_wave = ops.L @ (s0.phi + h * s0.v) + h * (ops.B @ s0.phi) + h * h * ops.to_phi(s1.theta)
        out.append({
            "heat": h_norm(Wt, heat),
            "wave": h_norm(Wp, wave),
            "heat_scale": h_norm(Wt, g_heat) / h,
            "wave_scale": (1.0 + h_norm(Wp, g_wave)) / (h * h),
        })
    return out
