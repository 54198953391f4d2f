import math

import numpy as np
import pytest

from parhyp.analysis import (
    build_interpolants,
    convergence_study,
    energy_ledger,
    error_norms,
    fit_slope,
    verify_interpolant_identities,
)
from parhyp.operators import ZERO_PERTURBATION, ZERO_POTENTIAL, cubic_potential, linear_perturbation
from parhyp.spatial import Grid, assemble_operators, model_problem
from parhyp.stepper import SchemeConfig, StepState, Trajectory, advance_trajectory

ZERO = lambda x: 0 * x


def smooth(kind="P1", n=17, source=None):
    if kind == "P1":
        data = (lambda x: np.sin(np.pi * x), lambda x: np.cos(np.pi * x), lambda x: 0.5 * np.cos(np.pi * x))
    else:
        data = (lambda x: np.sin(np.pi * x),) * 2 + (lambda x: 0.5 * np.sin(np.pi * x),)
    return model_problem(kind, Grid(n), cubic_potential(1.0), linear_perturbation(1.0), *data, source)


def handmade(inst, T, theta, phi, v=None):
    """Trajectory from explicit node values; v and z follow the scheme's definitions."""
    N = len(theta) - 1
    h = T / N
    phi = np.asarray(phi, float)
    if v is None:
        v = np.vstack([inst.v0, np.diff(phi, axis=0) / h])
    z = np.vstack([np.zeros_like(v[0]), np.diff(v, axis=0) / h])
    z[0] = z[1] if N else z[0]
    states = [StepState(np.asarray(theta[n], float), phi[n], v[n], z[n], n, n * h) for n in range(N + 1)]
    sources = [np.zeros(inst.theta_space.dim) for _ in range(N)]
    return Trajectory(states, SchemeConfig(T=T, N=N), inst, [], sources)


# interpolants

def test_constant_trajectory_interpolants():
    inst = model_problem("P1", Grid(5), ZERO_POTENTIAL, ZERO_PERTURBATION, ZERO, ZERO, ZERO)
    th = np.full((4, 3), 2.0)
    ph = np.full((4, 5), -1.0)
    ip = build_interpolants(handmade(inst, 1.0, th, ph, v=np.zeros((4, 5))))
    for t in (0.0, 0.1, 0.5, 0.99, 1.0):
        np.testing.assert_array_equal(ip.hat_theta(t), 2.0)
        np.testing.assert_array_equal(ip.bar_theta(t), 2.0)
        np.testing.assert_array_equal(ip.hat_phi(t), -1.0)


def test_hat_nodes_and_midpoints():
    traj = advance_trajectory(smooth(), SchemeConfig(T=0.5, N=5, C_pi=1.0))
    ip = build_interpolants(traj)
    for n, s in enumerate(traj.states):
        np.testing.assert_array_equal(ip.hat_theta(n * traj.h), s.theta)
    for n in range(traj.N):
        mid = ip.hat_theta((n + 0.5) * traj.h)
        np.testing.assert_allclose(mid, 0.5 * (traj.states[n].theta + traj.states[n + 1].theta), rtol=1e-14, atol=1e-15)
    with pytest.raises(ValueError):
        ip.hat_theta(0.6)


def test_identities_zero_trajectory():
    inst = model_problem("P1", Grid(5), ZERO_POTENTIAL, ZERO_PERTURBATION, ZERO, ZERO, ZERO)
    traj = advance_trajectory(inst, SchemeConfig(T=1.0, N=4))
    rep = verify_interpolant_identities(traj)
    assert rep.passed
    assert all(c.lhs == 0 and c.rhs == 0 for c in rep.checks)


@pytest.mark.parametrize("kind", ["P1", "P2"])
def test_identities_on_runs(kind):
    src = lambda t: np.sin(2 * t) * np.ones(15)
    traj = advance_trajectory(smooth(kind, source=src), SchemeConfig(T=1.0, N=20, C_pi=1.0))
    rep = verify_interpolant_identities(traj, tolerance=1e-12)
    phi_check = [c for c in rep.checks if c.name.startswith("sup norm of bar phi")][0]
    assert phi_check.gap <= 1e-12
    assert rep.passed, [(c.name, c.gap) for c in rep.checks]


def test_theta_l2_identity_by_hand():
    # one interior node of unit weight; theta goes 0 -> 1 over h = 1
    inst = model_problem("P1", Grid(3, 2.0), ZERO_POTENTIAL, ZERO_PERTURBATION, ZERO, ZERO, ZERO)
    traj = handmade(inst, 1.0, [[0.0], [1.0]], np.zeros((2, 3)))
    rep = verify_interpolant_identities(traj)
    last = rep.checks[-1]
    assert last.lhs == pytest.approx(1 / 3, rel=1e-14)
    assert last.rhs == pytest.approx(1 / 3, rel=1e-14)


# energy ledger

def test_ledger_zero_trajectory():
    inst = model_problem("P2", Grid(9), cubic_potential(1.0), linear_perturbation(1.0), ZERO, ZERO, ZERO)
    led = energy_ledger(advance_trajectory(inst, SchemeConfig(T=1.0, N=8, C_pi=1.0)))
    for arr in led.quantities().values():
        np.testing.assert_array_equal(arr, 0.0)
    assert all(v == 0 for v in led.bounded_summary().values())


@pytest.mark.parametrize("kind", ["P1", "P2"])
def test_ledger_balance_and_signs(kind):
    traj = advance_trajectory(smooth(kind), SchemeConfig(T=1.0, N=16, C_pi=1.0))
    led = energy_ledger(traj)
    assert not led.negative_dissipation()
    assert np.all(np.diff(led.damping_sum) >= 0)
    assert np.all(led.dissipation["v increment"] >= 0)
    assert np.max(np.abs(led.balance_defect)) <= 1e-9 * max(1.0, np.max(np.abs(led.step_lhs)))
    assert np.all(led.convexity_gap >= -1e-13)


def test_combined_energy_uniform_over_sweep():
    inst = smooth("P1")
    ops = assemble_operators(inst)
    peaks = []
    for N in (8, 16, 32, 64):
        led = energy_ledger(advance_trajectory(inst, SchemeConfig(T=1.0, N=N, C_pi=1.0), ops), ops)
        combined = led.kinetic + led.elastic + led.phi_sq + led.theta_sq
        peaks.append(combined.max())
    assert max(peaks) / min(peaks) <= 1.5


# error norms

def test_error_against_itself_is_zero():
    traj = advance_trajectory(smooth(), SchemeConfig(T=1.0, N=8, C_pi=1.0))
    rep = error_norms(traj, traj)
    assert rep.composite == 0.0


def test_error_swap_roughly_symmetric():
    inst = smooth("P1", n=8)
    ops = assemble_operators(inst)
    a = advance_trajectory(inst, SchemeConfig(T=1.0, N=8, C_pi=1.0), ops)
    b = advance_trajectory(inst, SchemeConfig(T=1.0, N=32, C_pi=1.0), ops)
    ab, ba = error_norms(a, b, ops).composite, error_norms(b, a, ops).composite
    assert 0.5 < ab / ba < 2.0


def test_coarse_against_fine_reference():
    inst = smooth("P1", n=17)
    ops = assemble_operators(inst)
    ref = advance_trajectory(inst, SchemeConfig(T=1.0, N=4096, C_pi=1.0), ops)
    coarse = advance_trajectory(inst, SchemeConfig(T=1.0, N=16, C_pi=1.0), ops)
    rep = error_norms(coarse, ref, ops)
    assert math.isfinite(rep.composite) and rep.composite > 0
    assert rep.source_l2 == 0.0


def test_error_rejects_other_grid():
    a = advance_trajectory(smooth(n=9), SchemeConfig(T=1.0, N=4, C_pi=1.0))
    b = advance_trajectory(smooth(n=17), SchemeConfig(T=1.0, N=4, C_pi=1.0))
    with pytest.raises(ValueError):
        error_norms(a, b)


# rates

def test_fit_slope_exact_power_law():
    hs = [0.1, 0.05, 0.025]
    slope, intercept = fit_slope(hs, [3 * h**0.7 for h in hs])
    assert slope == pytest.approx(0.7, rel=1e-12)
    assert math.exp(intercept) == pytest.approx(3.0, rel=1e-12)


def test_zero_data_gives_degenerate_rate():
    inst = model_problem("P1", Grid(9), cubic_potential(1.0), linear_perturbation(1.0), ZERO, ZERO, ZERO)
    rep = convergence_study(inst, [4, 8], 16, SchemeConfig(T=1.0, N=4, C_pi=1.0))
    assert rep.degenerate and rep.slope is None


def test_small_study_threads_agree():
    inst = smooth("P2", n=9)
    cfg = SchemeConfig(T=1.0, N=4, C_pi=1.0)
    serial = convergence_study(inst, [4, 8, 16], 64, cfg)
    pooled = convergence_study(inst, [4, 8, 16], 64, cfg, threads=3)
    assert serial.slope == pooled.slope
    assert serial.slope > 0.45
    with pytest.raises(ValueError):
        convergence_study(inst, [5], 64, cfg)
