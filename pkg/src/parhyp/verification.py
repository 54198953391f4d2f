"""The invariant suite behind `parhyp verify`.

Every check returns a ConditionReport; a run passes when all of them do.
"""
from __future__ import annotations

from typing import List, Optional

import numpy as np

from .analysis import energy_ledger, verify_interpolant_identities
from .operators import (
    ConditionReport,
    check_damping_elastic_pairing,
    check_growth,
    check_lipschitz,
    check_lower_bound,
    check_monotone,
    check_positivity,
    check_symmetry,
    check_yosida,
    h_norm,
)
from .spatial import Operators, ProblemInstance, assemble_operators
from .stepper import SchemeConfig, StepContext, StepState, Trajectory, average_source, fixed_point_step, scheme_residuals

RESIDUAL_FACTOR = 10.0
RATIO_SLACK = 1e-8


def random_samples(dim: int, count: int, seed: int) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(dim) for _ in range(count)]


def operator_checks(ops: Operators, samples: int = 100, seed: int = 0) -> List[ConditionReport]:
    phi_s = random_samples(ops.phi_space.dim, samples, seed)
    theta_s = random_samples(ops.theta_space.dim, samples, seed + 1)
    reports = []
    for op, s in ((ops.L, phi_s), (ops.B, phi_s), (ops.A2, phi_s), (ops.A1, theta_s)):
        reports.append(check_symmetry(op, s))
        reports.append(check_positivity(op, s))
    reports.append(check_lower_bound(ops.L, ops.c_L, phi_s))
    reports.append(check_damping_elastic_pairing(ops.B, ops.A2, phi_s))
    return reports


def nonlinearity_checks(ops: Operators, samples: int = 1000, seed: int = 0) -> List[ConditionReport]:
    return [
        check_monotone(ops.potential, samples=samples, seed=seed),
        check_growth(ops.potential),
        check_lipschitz(ops.perturbation, samples=samples, seed=seed + 1),
        *check_yosida(ops.potential, samples=samples, seed=seed + 2),
    ]


def contraction_check(traj: Trajectory) -> ConditionReport:
    kappa = traj.reports[0].kappa if traj.reports else 0.0
    worst_ratio = max((r.max_ratio for r in traj.reports), default=0.0)
    return ConditionReport(
        f"fixed-point ratios within kappa(h) = {kappa:.6g}",
        max(worst_ratio - kappa, 0.0), RATIO_SLACK, {"max_ratio": worst_ratio, "kappa": kappa},
    )


def residual_check(traj: Trajectory, ops: Operators) -> ConditionReport:
    """Scheme residuals against RESIDUAL_FACTOR times the solver tolerances."""
    cfg = traj.config
    worst = 0.0
    for row in scheme_residuals(traj, ops):
        heat_tol = RESIDUAL_FACTOR * cfg.linear_tol * max(row["heat_scale"], 1.0)
        wave_tol = RESIDUAL_FACTOR * cfg.newton_tol * row["wave_scale"]
        worst = max(worst, row["heat"] / heat_tol, row["wave"] / wave_tol)
    return ConditionReport("scheme residuals within 10x solver tolerances", worst, 1.0)


def identity_check(traj: Trajectory, ops: Operators, tolerance: float = 1e-10) -> ConditionReport:
    rep = verify_interpolant_identities(traj, ops, tolerance)
    return ConditionReport("interpolant identities", rep.worst, tolerance,
                           {c.name: c.gap for c in rep.checks})


def ledger_checks(traj: Trajectory, ops: Operators) -> List[ConditionReport]:
    led = energy_ledger(traj, ops)
    bad = led.negative_dissipation()
    worst_neg = 0.0
    for name, arr in led.dissipation.items():
        scale = max(1.0, float(np.max(np.abs(arr), initial=0.0)))
        worst_neg = max(worst_neg, float(np.max(-arr, initial=0.0)) / scale)
    scale = max(1.0, float(np.max(np.abs(led.step_lhs))))
    defect = float(np.max(np.abs(led.balance_defect), initial=0.0)) / scale
    return [
        ConditionReport("energy ledger dissipation terms nonnegative", worst_neg, led.tolerance,
                        {"first_negative": bad[:1]}),
        ConditionReport("energy balance closes per step", defect, 1e-8),
    ]


def uniqueness_probe(instance: ProblemInstance, config: SchemeConfig, ops: Operators, tol: float = 1e-9) -> ConditionReport:
    """First step from phi_n and from zero must land on the same fixed point."""
    ctx = StepContext(ops, config)
    state = StepState(instance.theta0.copy(), instance.phi0.copy(), instance.v0.copy(), np.zeros_like(instance.phi0))
    f1 = average_source(instance.source, 1, config.h)
    a, _ = fixed_point_step(state, f1, config, ops, ctx)
    b, _ = fixed_point_step(state, f1, config, ops, ctx, phi_start=np.zeros_like(instance.phi0))
    W = ops.phi_space.weights
    gap = h_norm(W, a.phi - b.phi) / (1.0 + h_norm(W, a.phi))
    return ConditionReport("fixed point independent of the starting guess", gap, tol)


def run_suite(instance: ProblemInstance, config: SchemeConfig, seed: int = 0,
              traj: Optional[Trajectory] = None, ops: Optional[Operators] = None) -> List[ConditionReport]:
    from .stepper import advance_trajectory

    ops = ops or assemble_operators(instance)
    reports = operator_checks(ops, seed=seed) + nonlinearity_checks(ops, seed=seed)
    traj = traj or advance_trajectory(instance, config, ops)
    reports.append(contraction_check(traj))
    reports.append(residual_check(traj, ops))
    reports.append(identity_check(traj, ops))
    reports.extend(ledger_checks(traj, ops))
    reports.append(uniqueness_probe(instance, config, ops))
    return reports
