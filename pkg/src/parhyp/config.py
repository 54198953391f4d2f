"""JSON run configurations: presets for beta, pi, initial data and sources."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from .operators import (
    affine_perturbation,
    check_growth,
    check_lipschitz,
    check_monotone,
    cubic_potential,
    linear_perturbation,
    polynomial_potential,
)
from .spatial import PROBLEMS, BoundaryCondition, DampingKind, FieldSpace, Grid, ProblemInstance
from .stepper import AdmissibilityError, SchemeConfig, admissibility_window


class ConfigError(ValueError):
    def __init__(self, label: str, message: str):
        self.label = label
        super().__init__(f"[{label}] {message}")


DEFAULTS: Dict[str, Any] = {
    "problem": "P1",
    "length": 1.0,
    "nodes": 65,
    "dimension": 1,
    "T": 1.0,
    "N": 64,
    "N_list": [16, 32, 64, 128, 256],
    "N_ref": 4096,
    "beta": {"preset": "cubic", "d1": 1.0},
    "pi": {"preset": "linear", "d2": 1.0},
    "source": {"preset": "zero"},
    "tolerances": {},
    "output": "out",
    "seed": 0,
}

# initial data that satisfy each problem's boundary conditions
DEFAULT_INITIAL = {
    BoundaryCondition.DIRICHLET: {
        "theta0": {"preset": "sine", "amplitude": 1.0, "mode": 1},
        "phi0": {"preset": "sine", "amplitude": 1.0, "mode": 1},
        "v0": {"preset": "sine", "amplitude": 0.5, "mode": 1},
    },
    BoundaryCondition.NEUMANN: {
        "theta0": {"preset": "sine", "amplitude": 1.0, "mode": 1},
        "phi0": {"preset": "cosine", "amplitude": 1.0, "mode": 1},
        "v0": {"preset": "cosine", "amplitude": 0.5, "mode": 1},
    },
}

TOLERANCE_KEYS = ("newton_tol", "newton_max_iter", "fp_tol", "fp_max_iter", "linear_tol", "linear_max_iter")


@dataclass
class RunSettings:
    N_list: List[int]
    N_ref: int
    output: str
    seed: int
    normalized: Dict[str, Any] = field(default_factory=dict)


@dataclass
class LoadedConfig:
    instance: ProblemInstance
    scheme: SchemeConfig
    run: RunSettings

    def __iter__(self):
        return iter((self.instance, self.scheme, self.run))


def _profile(entry: Dict[str, Any], grid: Grid, where: str):
    """Analytic function of space for a preset dict."""
    preset = entry.get("preset", "zero")
    ell = grid.length
    if preset == "zero":
        return lambda *x: np.zeros_like(x[0])
    if preset == "constant":
        c = float(entry.get("value", 0.0))
        return lambda *x: np.full_like(x[0], c)
    if preset in ("sine", "cosine"):
        a = float(entry.get("amplitude", 1.0))
        k = float(entry.get("mode", 1))
        trig = np.sin if preset == "sine" else np.cos
        return lambda *x: a * np.prod([trig(k * np.pi * xi / ell) for xi in x], axis=0)
    raise ConfigError("unknown-preset", f"unknown preset {preset!r} for {where}")


def _field_values(entry, grid: Grid, bc: BoundaryCondition, where: str) -> np.ndarray:
    space = FieldSpace(grid, bc)
    if isinstance(entry, dict) and "values" in entry:
        values = np.asarray(entry["values"], dtype=float)
        if values.shape == (grid.n_nodes,):
            if bc is BoundaryCondition.DIRICHLET and np.any(values[~space.mask] != 0):
                raise ConfigError("initial-boundary", f"{where} is nonzero on the Dirichlet boundary")
            return values[space.mask]
        if values.shape == (space.dim,):
            return values
        raise ConfigError("parse", f"{where} has {values.size} values, expected {grid.n_nodes} or {space.dim}")
    fn = _profile(entry, grid, where)
    coords = grid.coordinates
    full = fn(coords) if grid.dimension == 1 else fn(coords[:, 0], coords[:, 1])
    full = np.broadcast_to(np.asarray(full, float), (grid.n_nodes,))
    scale = max(1.0, float(np.max(np.abs(full))))
    if bc is BoundaryCondition.DIRICHLET:
        if np.max(np.abs(full[~space.mask])) > 1e-12 * scale:
            raise ConfigError("initial-boundary", f"{where} does not vanish on the boundary (Dirichlet field)")
    return full[space.mask].copy()


def _check_neumann_compatible(entry, grid: Grid, where: str) -> None:
    """phi0 must have zero normal derivative when phi carries Neumann conditions."""
    if not isinstance(entry, dict) or "values" in entry or grid.dimension != 1:
        return
    fn = _profile(entry, grid, where)
    eps = 1e-6 * grid.length
    ends = np.array([0.0, grid.length])
    slope = (fn(ends + eps) - fn(ends - eps)) / (2 * eps)
    scale = max(1.0, float(np.max(np.abs(fn(grid.axis)))))
    if np.max(np.abs(slope)) > 1e-5 * scale / grid.length:
        raise ConfigError("initial-boundary", f"{where} has nonzero normal derivative at the boundary (Neumann field)")


def _source(entry: Dict[str, Any], grid: Grid, bc: BoundaryCondition):
    preset = entry.get("preset", "zero")
    space = FieldSpace(grid, bc)
    profile_entry = entry.get("profile", {"preset": "constant", "value": 1.0})
    coords = grid.coordinates
    fn = _profile(profile_entry, grid, "source profile")
    shape = np.asarray(fn(coords) if grid.dimension == 1 else fn(coords[:, 0], coords[:, 1]), float)
    shape = np.broadcast_to(shape, (grid.n_nodes,))[space.mask].copy()
    if preset == "zero":
        zero = np.zeros(space.dim)
        return lambda t: zero
    if preset == "constant":
        c = float(entry.get("value", 1.0))
        return lambda t: c * shape
    if preset == "sin":
        a = float(entry.get("amplitude", 1.0))
        w = float(entry.get("frequency", 1.0))
        return lambda t: a * math.sin(w * t) * shape
    raise ConfigError("unknown-preset", f"unknown source preset {preset!r}")


def _potential(entry: Dict[str, Any]):
    if "coefficients" in entry:
        try:
            pot = polynomial_potential(entry["coefficients"])
        except ValueError as exc:
            raise ConfigError("beta-growth", str(exc)) from exc
        if abs(float(pot.beta(np.array(0.0)))) > 0:
            raise ConfigError("beta-zero", "beta(0) must vanish (beta_hat(0) = 0 with beta_hat >= 0)")
    elif entry.get("preset", "cubic") == "cubic":
        d1 = float(entry.get("d1", 1.0))
        if d1 <= 0:
            raise ConfigError("beta-monotone", "cubic preset needs d1 > 0")
        pot = cubic_potential(d1)
    else:
        raise ConfigError("unknown-preset", f"unknown beta preset {entry.get('preset')!r}")
    for report, label in ((check_monotone(pot), "beta-monotone"), (check_growth(pot), "beta-growth")):
        if not report.passed:
            raise ConfigError(label, report.line())
    return pot


def _perturbation(entry: Dict[str, Any]):
    if "coefficients" in entry:
        try:
            pert = affine_perturbation(entry["coefficients"])
        except ValueError as exc:
            raise ConfigError("pi-lipschitz", str(exc)) from exc
    elif entry.get("preset", "linear") == "linear":
        pert = linear_perturbation(float(entry.get("d2", 1.0)))
    elif entry.get("preset") == "zero":
        pert = affine_perturbation([0.0])
    else:
        raise ConfigError("unknown-preset", f"unknown pi preset {entry.get('preset')!r}")
    report = check_lipschitz(pert)
    if not report.passed:
        raise ConfigError("pi-lipschitz", report.line())
    return pert


def normalize(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Fill defaults so that equal configurations compare equal."""
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        cfg[key] = copy.deepcopy(value)
    problem = cfg["problem"]
    if problem in PROBLEMS:
        bc_t, bc_p, damping = PROBLEMS[problem]
    elif problem == "custom":
        try:
            bc_t = BoundaryCondition(cfg.get("bc_theta", "dirichlet"))
            bc_p = BoundaryCondition(cfg.get("bc_phi", "neumann"))
            damping = DampingKind(cfg.get("damping", "identity"))
        except ValueError as exc:
            raise ConfigError("parse", str(exc)) from exc
    else:
        raise ConfigError("unknown-preset", f"unknown problem {problem!r}")
    cfg["bc_theta"], cfg["bc_phi"], cfg["damping"] = bc_t.value, bc_p.value, damping.value
    initial = copy.deepcopy(DEFAULT_INITIAL[bc_p])
    initial.update(cfg.get("initial", {}))
    cfg["initial"] = initial
    tol = {k: v for k, v in cfg["tolerances"].items()}
    unknown = set(tol) - set(TOLERANCE_KEYS)
    if unknown:
        raise ConfigError("parse", f"unknown tolerance keys {sorted(unknown)}")
    cfg["tolerances"] = tol
    cfg["N_list"] = [int(n) for n in cfg["N_list"]]
    return cfg


def build(raw: Dict[str, Any]) -> LoadedConfig:
    cfg = normalize(raw)
    try:
        grid = Grid(int(cfg["nodes"]), float(cfg["length"]), int(cfg["dimension"]))
    except ValueError as exc:
        raise ConfigError("parse", str(exc)) from exc
    bc_t, bc_p = BoundaryCondition(cfg["bc_theta"]), BoundaryCondition(cfg["bc_phi"])
    pot = _potential(cfg["beta"])
    pert = _perturbation(cfg["pi"])
    init = cfg["initial"]
    theta0 = _field_values(init["theta0"], grid, bc_t, "theta0")
    phi0 = _field_values(init["phi0"], grid, bc_p, "phi0")
    v0 = _field_values(init["v0"], grid, bc_p, "v0")
    if bc_p is BoundaryCondition.NEUMANN:
        _check_neumann_compatible(init["phi0"], grid, "phi0")
    instance = ProblemInstance(
        grid=grid, bc_theta=bc_t, bc_phi=bc_p, damping_kind=DampingKind(cfg["damping"]),
        potential=pot, perturbation=pert, theta0=theta0, phi0=phi0, v0=v0,
        source=_source(cfg["source"], grid, bc_t), name=cfg["problem"],
    )
    scheme = SchemeConfig(T=float(cfg["T"]), N=int(cfg["N"]), c_L=1.0, C_pi=pert.lipschitz_constant, **cfg["tolerances"])
    for N in sorted({scheme.N, *cfg["N_list"], int(cfg["N_ref"])}):
        try:
            scheme.with_N(N).validate()
        except AdmissibilityError as exc:
            window = admissibility_window(scheme.c_L, scheme.C_pi)
            label = "step-window" if scheme.T / N >= window else "contraction"
            raise ConfigError(label, str(exc)) from exc
    for N in cfg["N_list"]:
        if int(cfg["N_ref"]) % N:
            raise ConfigError("parse", f"N_list entry {N} does not divide N_ref = {cfg['N_ref']}")
    run = RunSettings(cfg["N_list"], int(cfg["N_ref"]), str(cfg["output"]), int(cfg["seed"]), cfg)
    return LoadedConfig(instance, scheme, run)


def load_config(path) -> LoadedConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("parse", f"cannot read {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("parse", "top-level JSON value must be an object")
    return build(raw)


def dump_config(loaded: LoadedConfig, path=None) -> Dict[str, Any]:
    data = copy.deepcopy(loaded.run.normalized)
    if path is not None:
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True))
    return data
