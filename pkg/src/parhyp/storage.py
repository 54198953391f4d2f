"""CSV trajectories, JSON manifests and rate tables."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .stepper import Trajectory

FIELDS = ("theta", "phi", "v", "z")
FMT = "%.17g"


def _coord_label(c) -> str:
    c = np.atleast_1d(c)
    return " ".join(FMT % x for x in c)


def write_field_csv(path: Path, coords: np.ndarray, values: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(_coord_label(c) for c in coords) + "\n")
        np.savetxt(fh, np.atleast_2d(values), fmt=FMT, delimiter=",")


def read_field_csv(path: Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, dtype=float))


def _jsonable(x: Any):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def step_summary(traj: Trajectory) -> list:
    rows = []
    for n, rep in enumerate(traj.reports, start=1):
        rows.append({
            "step": n,
            "fp_iterations": rep.fp_iterations,
            "max_ratio": rep.max_ratio,
            "error_bound": rep.error_bound,
            "newton_iterations": int(sum(rep.newton_iterations)),
            "max_newton_residual": max(rep.newton_residuals, default=0.0),
            "linear_iterations": int(sum(rep.linear_iterations)),
            "max_linear_residual": max(rep.linear_residuals, default=0.0),
            "yosida_fallback": rep.yosida_fallback,
        })
    return rows


def write_trajectory(traj: Trajectory, directory, config_echo: Optional[Dict] = None,
                     ledger_summary: Optional[Dict] = None, extra: Optional[Dict] = None) -> Path:
    """One CSV per field plus manifest.json; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    spaces = {"theta": traj.instance.theta_space, "phi": traj.instance.phi_space}
    for name in FIELDS:
        space = spaces["theta" if name == "theta" else "phi"]
        write_field_csv(out / f"{name}.csv", space.coordinates, traj.stack(name))
    kappa = traj.reports[0].kappa if traj.reports else 0.0
    manifest = {
        "config": config_echo or {},
        "problem": traj.instance.name,
        "T": traj.config.T,
        "N": traj.N,
        "h": traj.h,
        "kappa": kappa,
        "max_empirical_ratio": max((r.max_ratio for r in traj.reports), default=0.0),
        "fields": {name: f"{name}.csv" for name in FIELDS},
        "steps": step_summary(traj),
        "ledger": ledger_summary or {},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True))
    return path


def read_trajectory(directory) -> Dict[str, Any]:
    """Field arrays (rows = time steps) plus the manifest."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    data: Dict[str, Any] = {name: read_field_csv(d / file) for name, file in manifest["fields"].items()}
    data["manifest"] = manifest
    return data


def write_rate_table(rows, path) -> None:
    cols = ["N", "h", "kinetic_sup", "damping_l2", "phi_sup_v2", "theta_sup_h", "theta_l2_v1", "composite", "M"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([row["N"]] + [FMT % row[c] for c in cols[1:]])
