"""Diagnostics over finished trajectories.

Interpolants are stored piece by piece: on step interval n the hat
(piecewise linear) reconstruction is ``start[n] + s * slope[n]`` for
``s in [0, h]`` and the bar (piecewise constant) one is ``value[n]``.  Sup
norms of affine pieces are attained at piece endpoints and squared L2
norms of affine pieces integrate exactly, so every time norm below is exact
up to rounding.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .operators import inner
from .spatial import Operators, assemble_operators, first_difference_form, potential_energy
from .stepper import SchemeConfig, Trajectory, advance_trajectory

HAT_FIELDS = ("theta", "phi", "v")
BAR_FIELDS = ("theta", "phi", "v", "z", "f")


@dataclass
class Interpolants:
    T: float
    h: float
    nodes: Dict[str, np.ndarray]  # hat fields: values at t_0..t_N
    bars: Dict[str, np.ndarray]   # bar fields: value on (t_n, t_{n+1}], n = 0..N-1

    @property
    def N(self) -> int:
        return len(next(iter(self.bars.values())))

    def _locate(self, t: float):
        if t < -1e-12 * self.T or t > self.T * (1 + 1e-12):
            raise ValueError(f"t = {t} outside [0, {self.T}]")
        n = min(max(int(math.ceil(t / self.h - 1e-12)) - 1, 0), self.N - 1)
        return n, t - n * self.h

    def hat(self, name: str, t: float) -> np.ndarray:
        n, s = self._locate(t)
        c = s / self.h
        if abs(c - round(c)) < 1e-12:  # grid times return node values exactly
            c = float(round(c))
        return (1.0 - c) * self.nodes[name][n] + c * self.nodes[name][n + 1]

    def bar(self, name: str, t: float) -> np.ndarray:
        n, _ = self._locate(t)
        return self.bars[name][n]

    def hat_slope(self, name: str) -> np.ndarray:
        return np.diff(self.nodes[name], axis=0) / self.h

    # convenience accessors matching the usual notation
    def hat_theta(self, t): return self.hat("theta", t)
    def hat_phi(self, t): return self.hat("phi", t)
    def hat_v(self, t): return self.hat("v", t)
    def bar_theta(self, t): return self.bar("theta", t)
    def bar_phi(self, t): return self.bar("phi", t)
    def bar_v(self, t): return self.bar("v", t)
    def bar_z(self, t): return self.bar("z", t)
    def bar_f(self, t): return self.bar("f", t)


def build_interpolants(traj: Trajectory) -> Interpolants:
    nodes = {name: traj.stack(name) for name in HAT_FIELDS}
    bars = {name: traj.stack(name)[1:] for name in ("theta", "phi", "v", "z")}
    bars["f"] = np.array(traj.sources)
    return Interpolants(traj.config.T, traj.h, nodes, bars)


# --------------------------------------------------------------------------
# norms of piecewise polynomial time functions


class FieldNorms:
    """H and V norms for the theta (V1) and phi (V2) field spaces."""

    def __init__(self, ops: Operators):
        self.ops = ops

    def weights(self, kind: str) -> np.ndarray:
        return (self.ops.theta_space if kind == "theta" else self.ops.phi_space).weights

    def h_sq(self, kind: str, u: np.ndarray) -> np.ndarray:
        """Squared H norm along the last axis (u may be a stack)."""
        return np.einsum("...i,i,...i->...", u, self.weights(kind), u)

    def semi_sq(self, kind: str, u: np.ndarray) -> np.ndarray:
        space = self.ops.theta_space if kind == "theta" else self.ops.phi_space
        u = np.atleast_2d(u)
        return np.array([first_difference_form(space.grid, space.bc, row) for row in u])

    def v_sq(self, kind: str, u: np.ndarray) -> np.ndarray:
        return self.h_sq(kind, np.atleast_2d(u)) + self.semi_sq(kind, u)

    def op_sq(self, op, u: np.ndarray) -> np.ndarray:
        """(op u, u) for each row of a stack."""
        u = np.atleast_2d(u)
        return np.einsum("ni,i,ni->n", (op.matrix @ u.T).T, op.weights, u)


def _sup_affine(start_sq: np.ndarray, end_sq: np.ndarray) -> float:
    return float(np.sqrt(max(np.max(start_sq, initial=0.0), np.max(end_sq, initial=0.0))))


def _affine_l2_sq(h: float, a_sq, ad, d_sq) -> float:
    """sum over pieces of integral_0^h ||a + s d||^2 ds."""
    return float(np.sum(h * a_sq + h * h * ad + h**3 / 3.0 * d_sq))


@dataclass
class IdentityCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def gap(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        return 0.0 if scale == 0.0 else abs(self.lhs - self.rhs) / scale


@dataclass
class IdentityReport:
    checks: List[IdentityCheck]
    tolerance: float = 1e-10

    @property
    def worst(self) -> float:
        return max((c.gap for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def verify_interpolant_identities(traj: Trajectory, ops: Optional[Operators] = None, tolerance: float = 1e-10) -> IdentityReport:
    """Both sides of the six interpolant identities.

    Left-hand sides are evaluated from the interpolant objects (sampled at
    piece endpoints and midpoints); right-hand sides straight from the states.
    """
    ops = ops or assemble_operators(traj.instance)
    fn = FieldNorms(ops)
    ip = build_interpolants(traj)
    h, N = ip.h, ip.N
    mids = (np.arange(N) + 0.5) * h
    grid_t = np.arange(N + 1) * h
    checks = []

    def hat_samples(name):
        return np.array([ip.hat(name, t) for t in np.concatenate([grid_t, mids])])

    for name, kind, nrm in (("phi", "phi", "v"), ("v", "phi", "v"), ("theta", "theta", "v")):
        lhs = math.sqrt(np.max(fn.v_sq(kind, hat_samples(name))))
        s = traj.stack(name)
        rhs = max(math.sqrt(fn.v_sq(kind, s[0])[0]), math.sqrt(np.max(fn.v_sq(kind, s[1:]))))
        checks.append(IdentityCheck(f"sup V-norm of hat {name} = max(initial, sup of bar {name})", lhs, rhs))

    # bar - hat on piece n is (h - s) * slope: sup at s -> 0+, i.e. the right-limit gap
    for name, kind, which, rate in (("phi", "phi", "v", "v"), ("v", "phi", "h", "z")):
        starts = ip.bars[name] - ip.nodes[name][:-1]
        ends = ip.bars[name] - ip.nodes[name][1:]
        sq = fn.v_sq if which == "v" else (lambda k, u: fn.h_sq(k, np.atleast_2d(u)))
        lhs = _sup_affine(sq(kind, starts), sq(kind, ends))
        rhs = h * math.sqrt(np.max(sq(kind, ip.bars[rate])))
        checks.append(IdentityCheck(f"sup norm of bar {name} - hat {name} = h sup norm of bar {rate}", lhs, rhs))

    starts = ip.bars["theta"] - ip.nodes["theta"][:-1]
    slope = -ip.hat_slope("theta")
    W = fn.weights("theta")
    a_sq = fn.h_sq("theta", starts)
    ad = np.einsum("ni,i,ni->n", starts, W, slope)
    d_sq = fn.h_sq("theta", slope)
    lhs = _affine_l2_sq(h, a_sq, ad, d_sq)
    rhs = h * h / 3.0 * h * float(np.sum(fn.h_sq("theta", ip.hat_slope("theta"))))
    checks.append(IdentityCheck("L2 norm^2 of bar theta - hat theta = h^2/3 L2 norm^2 of d/dt hat theta", lhs, rhs))
    return IdentityReport(checks, tolerance)


# --------------------------------------------------------------------------
# energy ledger


@dataclass
class EnergyLedger:
    h: float
    kinetic: np.ndarray              # ||L^1/2 v_m||^2
    damping_sum: np.ndarray          # h sum ||B^1/2 v_{n+1}||^2
    elastic: np.ndarray              # (A2 phi_m, phi_m)
    phi_sq: np.ndarray               # ||phi_m||^2
    potential: np.ndarray            # i(phi_m)
    theta_sq: np.ndarray             # ||theta_m||^2
    theta_v1_sum: np.ndarray         # h sum ||theta_{n+1}||_V1^2
    theta_increment_sum: np.ndarray  # h^2 sum ||delta theta_n||^2
    v_increment_sum: np.ndarray      # sum ||L^1/2 (v_{n+1} - v_n)||^2
    phi_increment_sum: np.ndarray    # sum (A2 dphi, dphi) + ||dphi||^2
    v_v2_sum: np.ndarray             # h^2 sum ||v_{n+1}||_V2^2
    step_lhs: np.ndarray             # per-step energy balance, left side
    step_rhs: np.ndarray             # per-step balance, right side from inner products
    convexity_gap: np.ndarray        # (beta(phi'), phi' - phi) - (i(phi') - i(phi)) >= 0
    dissipation: Dict[str, np.ndarray] = field(default_factory=dict)
    tolerance: float = 1e-9

    @property
    def balance_defect(self) -> np.ndarray:
        """rhs - lhs - convexity gap: zero up to solver residuals."""
        return self.step_rhs - self.step_lhs - self.convexity_gap

    def negative_dissipation(self) -> List[tuple]:
        """(name, step) for every dissipation entry below -tolerance * scale."""
        bad = []
        for name, arr in self.dissipation.items():
            scale = max(1.0, float(np.max(np.abs(arr), initial=0.0)))
            for n in np.nonzero(arr < -self.tolerance * scale)[0]:
                bad.append((name, int(n)))
        return bad

    def quantities(self) -> Dict[str, np.ndarray]:
        names = (
            "kinetic", "damping_sum", "elastic", "phi_sq", "potential", "theta_sq",
            "theta_v1_sum", "theta_increment_sum", "v_increment_sum", "phi_increment_sum", "v_v2_sum",
        )
        return {n: getattr(self, n) for n in names}

    def bounded_summary(self) -> Dict[str, float]:
        """h-independent shadows of the a-priori bounds.

        Sums weighted by a power of h that vanish as h -> 0 are divided by
        that power so they become time integrals of the corresponding
        derivative (e.g. sum ||v_{n+1} - v_n||^2 / h = integral of ||z_bar||^2).
        """
        h = self.h
        return {
            "sup kinetic": float(np.max(self.kinetic)),
            "damping integral": float(self.damping_sum[-1]),
            "sup elastic": float(np.max(self.elastic)),
            "sup phi^2": float(np.max(self.phi_sq)),
            "sup potential": float(np.max(self.potential)),
            "sup theta^2": float(np.max(self.theta_sq)),
            "theta V1 integral": float(self.theta_v1_sum[-1]),
            "theta_t integral": float(self.theta_increment_sum[-1] / h),
            "z integral": float(self.v_increment_sum[-1] / h),
            "v V2 integral": float(self.v_v2_sum[-1] / h),
        }


def energy_ledger(traj: Trajectory, ops: Optional[Operators] = None) -> EnergyLedger:
    ops = ops or assemble_operators(traj.instance)
    fn = FieldNorms(ops)
    h = traj.h
    th, ph, v = traj.stack("theta"), traj.stack("phi"), traj.stack("v")
    f = np.array(traj.sources)
    Wp, Wt = ops.phi_space.weights, ops.theta_space.weights
    pot = ops.potential

    kinetic = fn.op_sq(ops.L, v)
    elastic = fn.op_sq(ops.A2, ph)
    phi_sq = fn.h_sq("phi", ph)
    energy_i = np.array([potential_energy(pot, ops.phi_space, p) for p in ph])
    theta_sq = fn.h_sq("theta", th)

    dv, dph, dth = np.diff(v, axis=0), np.diff(ph, axis=0), np.diff(th, axis=0)
    damp = h * fn.op_sq(ops.B, v[1:])
    dv_L = fn.op_sq(ops.L, dv)
    dph_A2 = fn.op_sq(ops.A2, dph)
    dph_H = fn.h_sq("phi", dph)
    dth_H = fn.h_sq("theta", dth)
    heat_diss = h * fn.op_sq(ops.A1, th[1:])
    theta_v1 = h * fn.v_sq("theta", th[1:])
    v_v2 = h * h * fn.v_sq("phi", v[1:])

    cum = lambda a: np.concatenate([[0.0], np.cumsum(a)])

    lhs = (
        0.5 * np.diff(kinetic) + 0.5 * dv_L + damp
        + 0.5 * np.diff(elastic) + 0.5 * dph_A2
        + 0.5 * np.diff(phi_sq) + 0.5 * dph_H
        + np.diff(energy_i)
        + 0.5 * np.diff(theta_sq) + 0.5 * dth_H + heat_diss
    )
    rhs = np.empty(traj.N)
    gap = np.empty(traj.N)
    for n in range(traj.N):
        p1, v1, t1 = ph[n + 1], v[n + 1], th[n + 1]
        t1_on_phi = ops.to_phi(t1)
        v1_on_theta = ops.to_theta(v1)
        rhs[n] = h * (
            inner(Wp, t1_on_phi, v1) - inner(Wp, ops.perturbation.pi(p1), v1) + inner(Wp, p1, v1)
            + inner(Wt, f[n], t1) - inner(Wt, v1_on_theta, t1)
        )
        gap[n] = inner(Wp, pot.beta(p1), dph[n]) - (energy_i[n + 1] - energy_i[n])

    dissipation = {
        "v increment": dv_L,
        "damping": damp,
        "phi increment (A2)": dph_A2,
        "phi increment (H)": dph_H,
        "theta increment": dth_H,
        "heat dissipation": heat_diss,
        "convexity gap": gap,
        "potential i(phi)": energy_i,
    }
    return EnergyLedger(
        h=h, kinetic=kinetic, damping_sum=cum(damp), elastic=elastic, phi_sq=phi_sq,
        potential=energy_i, theta_sq=theta_sq, theta_v1_sum=cum(theta_v1),
        theta_increment_sum=cum(dth_H), v_increment_sum=cum(dv_L),
        phi_increment_sum=cum(dph_A2 + dph_H), v_v2_sum=cum(v_v2),
        step_lhs=lhs, step_rhs=rhs, convexity_gap=gap, dissipation=dissipation,
    )


def ledger_spread(ledgers: Sequence[EnergyLedger]) -> Dict[str, float]:
    """max/min over a sweep of each bounded summary quantity."""
    summaries = [led.bounded_summary() for led in ledgers]
    out = {}
    for key in summaries[0]:
        vals = np.array([s[key] for s in summaries])
        if np.all(vals == 0):
            out[key] = 1.0
        elif np.any(vals <= 0):
            out[key] = math.inf
        else:
            out[key] = float(vals.max() / vals.min())
    return out


# --------------------------------------------------------------------------
# error norms against a reference trajectory

ERROR_NAMES = ("kinetic_sup", "damping_l2", "phi_sup_v2", "theta_sup_h", "theta_l2_v1")


@dataclass
class ErrorReport:
    h: float
    kinetic_sup: float   # sup ||L^1/2 (hat v - v)||
    damping_l2: float    # ||B^1/2 (bar v - v)||_{L2(H)}
    phi_sup_v2: float    # sup ||hat phi - phi||_V2
    theta_sup_h: float   # sup ||hat theta - theta||_H
    theta_l2_v1: float   # ||bar theta - theta||_{L2(V1)}
    source_l2: float = 0.0  # ||bar f - f||_{L2(H)}, reported only

    @property
    def composite(self) -> float:
        return sum(getattr(self, n) for n in ERROR_NAMES)

    def as_dict(self) -> dict:
        d = {n: getattr(self, n) for n in ERROR_NAMES}
        d.update(h=self.h, composite=self.composite, source_l2=self.source_l2)
        return d


def _refine(ip: Interpolants, N_fine: int):
    """Values of the hat fields at fine-grid times and bar fields per fine interval."""
    r = N_fine // ip.N
    s = np.arange(r) / r  # local positions of fine nodes inside a coarse piece
    hats = {}
    for name in HAT_FIELDS:
        a, b = ip.nodes[name][:-1], ip.nodes[name][1:]
        pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        hats[name] = np.concatenate([pts.reshape(-1, a.shape[1]), ip.nodes[name][-1:]], axis=0)
    bars = {name: np.repeat(val, r, axis=0) for name, val in ip.bars.items()}
    return hats, bars


def error_norms(
    traj: Trajectory,
    reference: Trajectory,
    ops: Optional[Operators] = None,
    source: Optional[Callable[[float], np.ndarray]] = None,
) -> ErrorReport:
    """The five error norms against a fine reference trajectory.

    Sup norms compare hat interpolants, L2 norms compare bar interpolants, so a
    trajectory measured against itself scores exactly zero.  Both sides are
    refined to the common grid of lcm(N, N_ref) steps; there every hat
    difference is affine and every bar difference constant, so sup norms come
    from endpoints and L2 norms from plain sums.
    """
    if traj.instance.grid != reference.instance.grid or traj.instance.bc_phi != reference.instance.bc_phi:
        raise ValueError("trajectories live on different spatial grids")
    if not math.isclose(traj.config.T, reference.config.T):
        raise ValueError("trajectories cover different time intervals")
    ops = ops or assemble_operators(traj.instance)
    fn = FieldNorms(ops)
    Nf = math.lcm(traj.N, reference.N)
    hf = traj.config.T / Nf
    a_hat, a_bar = _refine(build_interpolants(traj), Nf)
    r_hat, r_bar = _refine(build_interpolants(reference), Nf)

    dv = a_hat["v"] - r_hat["v"]
    kinetic_sup = float(np.sqrt(np.max(fn.op_sq(ops.L, dv))))
    dphi = a_hat["phi"] - r_hat["phi"]
    phi_sup = float(np.sqrt(np.max(fn.v_sq("phi", dphi))))
    dth = a_hat["theta"] - r_hat["theta"]
    theta_sup = float(np.sqrt(np.max(fn.h_sq("theta", dth))))
    l2_damp = hf * float(np.sum(fn.op_sq(ops.B, a_bar["v"] - r_bar["v"])))
    l2_theta = hf * float(np.sum(fn.v_sq("theta", a_bar["theta"] - r_bar["theta"])))

    src_sq = 0.0
    f = source or traj.instance.source
    x, w = np.polynomial.legendre.leggauss(5)
    for n in range(traj.N):
        for xi, wi in zip(x, w):
            t = (n + 0.5 * (xi + 1)) * traj.h
            src_sq += 0.5 * traj.h * wi * float(fn.h_sq("theta", traj.sources[n] - np.asarray(f(t), float)))

    return ErrorReport(
        h=traj.h, kinetic_sup=kinetic_sup, damping_l2=math.sqrt(l2_damp),
        phi_sup_v2=phi_sup, theta_sup_h=theta_sup, theta_l2_v1=math.sqrt(l2_theta),
        source_l2=math.sqrt(src_sq),
    )


# --------------------------------------------------------------------------
# convergence study


@dataclass
class RateReport:
    Ns: List[int]
    errors: List[ErrorReport]
    slope: Optional[float]
    intercept: Optional[float]
    degenerate: bool
    ledgers: List[EnergyLedger] = field(default_factory=list)
    trajectories: List[Trajectory] = field(default_factory=list)

    def __repr__(self) -> str:
        slope = "None" if self.slope is None else f"{self.slope:.4f}"
        return f"RateReport(Ns={self.Ns}, slope={slope}, M_spread={self.M_spread:.3f})"

    @property
    def hs(self) -> List[float]:
        return [e.h for e in self.errors]

    @property
    def M(self) -> List[float]:
        return [e.composite / math.sqrt(e.h) for e in self.errors]

    @property
    def M_spread(self) -> float:
        M = np.array(self.M)
        if np.any(M <= 0):
            return math.inf if np.any(M > 0) else 1.0
        return float(M.max() / M.min())

    def rows(self) -> List[dict]:
        out = []
        for N, e, M in zip(self.Ns, self.errors, self.M):
            row = {"N": N}
            row.update(e.as_dict())
            row["M"] = M
            out.append(row)
        return out


def fit_slope(hs: Sequence[float], errors: Sequence[float]):
    """Least-squares slope of log(error) against log(h); None if any error is 0."""
    e = np.asarray(errors, float)
    if len(e) < 2 or np.any(e <= 0) or not np.all(np.isfinite(e)):
        return None, None
    slope, intercept = np.polyfit(np.log(hs), np.log(e), 1)
    return float(slope), float(intercept)


def convergence_study(
    instance,
    N_list: Sequence[int],
    N_ref: int,
    config: SchemeConfig,
    threads: int = 1,
    keep_trajectories: bool = False,
) -> RateReport:
    for N in N_list:
        if N_ref % N:
            raise ValueError(f"N = {N} does not divide N_ref = {N_ref}")
    ops = assemble_operators(instance)
    runs = [N_ref, *N_list]
    run = lambda N: advance_trajectory(instance, config.with_N(N), ops)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trajs = list(pool.map(run, runs))
    else:
        trajs = [run(N) for N in runs]
    ref, coarse = trajs[0], trajs[1:]
    errors = [error_norms(t, ref, ops) for t in coarse]
    ledgers = [energy_ledger(t, ops) for t in coarse]
    slope, intercept = fit_slope([e.h for e in errors], [e.composite for e in errors])
    return RateReport(
        list(N_list), errors, slope, intercept, slope is None, ledgers,
        trajs if keep_trajectories else [],
    )
