"""Run orchestration: cell problems, effective model, macro and fine runs,
the eps-convergence study, and the text report.

Every ``run_*`` function takes a validated :class:`SimConfig` and an output
directory and writes versioned CSVs (see :mod:`viscohom.csvio`). Independent
runs (one per eps) go through a bounded thread pool; results are keyed and
written in a fixed order, so outputs do not depend on scheduling.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .config import SimConfig, serialize_config
from .csvio import COLUMNS, append_timing, read_csv, write_csv
from .errors import ConfigError
from .fem import interpolate_at
from .fine import (
    FineTrajectory,
    assemble_fine_operators,
    energy_report,
    fluid_cell_divergence,
    solve_fine,
)
from .geometry import build_epsilon_domain, mesh_cell
from .homogenizer import (
    ElasticCellProblem,
    EffectiveModel,
    StokesCellProblem,
    _phase_average,
    assemble_effective,
    unit_loads,
)
from .macro import MacroTrajectory, macro_mesh, solve_macro
from .memory import trapezoid_weights

NORM_DEFINITION = (
    "e(eps) = ( sum_n w_n ( ||u_eps(t_n) - u0(t_n)||^2 + ||v_eps(t_n) - v0(t_n)||^2 ) )^(1/2); "
    "w_n composite trapezoid weights in time; ||.|| the L2 norm on the fine mesh by the "
    "consistent Q1 mass matrix (unit density); u0, v0 interpolated at the fine-mesh vertices"
)
FLOOR_DEFINITION = (
    "floor(eps) = the same norm between the homogenized solution on the macro mesh and the "
    "homogenized solution recomputed on the fine mesh (pure discretization difference)"
)
ENERGY_DEFINITION = (
    "sup_u = max_n ||u||^2 over the solid; sup_grad_u = max_n ||grad u||^2 over the solid; "
    "sup_v = max_n ||v||^2 over the fluid; int_grad_v = trapezoid sum of ||grad v||^2 over "
    "the fluid; p_l2 = (trapezoid sum of ||p||^2 over the fluid)^(1/2)"
)


def _out(out) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _key(eps: float) -> str:
    return f"{int(round(1 / eps))}"


def build_effective(cfg: SimConfig, keep_correctors: bool = False) -> EffectiveModel:
    mesh = mesh_cell(cfg.geometry, cfg.mesh.cell, cfg.theta)
    return assemble_effective(
        cfg.geometry, mesh, cfg.A0, cfg.A1, cfg.B0, cfg.B1, cfg.rho1, cfg.rho2, cfg.theta,
        reduction=cfg.solver.reduction, full_cell=cfg.solver.full_cell,
        density_resolution=cfg.mesh.density, keep_correctors=keep_correctors,
        A0_matrix=cfg.A0_matrix,
    )


def run_cell(cfg: SimConfig, out) -> list:
    """Correctors for the ``N^2`` unit loads; writes ``cell.csv`` and the cell mesh."""
    out = _out(out)
    mesh = mesh_cell(cfg.geometry, cfg.mesh.cell, cfg.theta)
    inst = cfg.solver.reduction == "instantaneous"
    single = cfg.solver.full_cell or cfg.geometry.single_phase
    problems = [("elastic", ElasticCellProblem(
        mesh, cfg.A0, cfg.A1, single, with_memory=inst, tol=cfg.solver.tol,
        matrix=cfg.A0_matrix if cfg.solver.full_cell else None))]
    if not single:
        problems.append(("stokes", StokesCellProblem(
            mesh, cfg.B0, cfg.B1, with_memory=inst, tol=cfg.solver.saddle_tol,
            alpha=cfg.solver.alpha)))
    rows = []
    for p, xi in enumerate(unit_loads(mesh.dimension)):
        for kind, prob in problems:
            c = prob.solve(xi)
            flux = _phase_average(mesh, prob.mask, prob.coeff, c.total_gradient())
            l2 = float(np.sqrt(np.sum(c.values**2) * mesh.cell_volume))
            rows.append([p, kind, l2, float(np.abs(c.values).max()),
                         " ".join(f"{v:.12e}" for v in flux)])
    write_csv(out / "cell.csv", "cell", COLUMNS["cell"], rows)
    (out / "cell_mesh.txt").write_text(mesh.to_text())
    return rows


def run_effective(cfg: SimConfig, out) -> EffectiveModel:
    """Effective model; writes ``effective.txt`` (report) and ``effective.csv``."""
    out = _out(out)
    model = build_effective(cfg)
    (out / "effective.txt").write_text(model.to_text())
    write_csv(out / "effective.csv", "effective", COLUMNS["effective"], model.csv_rows())
    return model


def _snapshot(path, mesh, fields: dict):
    x = mesh.vertices
    names = [f"x{i}" for i in range(x.shape[1])]
    cols = [x[:, i] for i in range(x.shape[1])]
    for name, vals in fields.items():
        vals = np.asarray(vals)
        vals = vals.reshape(-1, mesh.n_nodes).T if vals.size != mesh.n_nodes else vals[:, None]
        for c in range(vals.shape[1]):
            names.append(f"{name}{c}" if vals.shape[1] > 1 else name)
            cols.append(vals[:, c])
    write_csv(path, "snapshot", names, (list(map(float, r)) for r in zip(*cols)))


def _snapshot_steps(cfg: SimConfig):
    return [(t, int(round(t / cfg.dt))) for t in cfg.output.snapshots]


def run_macro(cfg: SimConfig, out, model: Optional[EffectiveModel] = None) -> MacroTrajectory:
    out = _out(out)
    model = model or build_effective(cfg)
    mesh = macro_mesh(cfg.dimension, cfg.mesh.macro)
    traj = solve_macro(model, mesh, cfg.f, cfg.g, cfg.T, cfg.dt, tol=cfg.solver.tol)
    traj.write_csv(out / "macro.csv")
    for t, k in _snapshot_steps(cfg):
        _snapshot(out / f"macro_snapshot_t{t:g}.csv", mesh,
                  {"u": traj.full_field(k, "u"), "v": traj.full_field(k, "v")})
    return traj


def _fine_run(cfg: SimConfig, eps: float):
    t0 = time.perf_counter()
    dom = build_epsilon_domain(cfg.geometry, eps, cfg.theta, cfg.mesh.fine)
    ops = assemble_fine_operators(dom, cfg.A0, cfg.A1, cfg.B0, cfg.B1, cfg.rho1, cfg.rho2,
                                  cfg.solver.alpha)
    traj = solve_fine(ops, cfg.f, cfg.g, cfg.T, cfg.dt)
    return traj, time.perf_counter() - t0


def _pool_map(func, keys, threads: int) -> dict:
    """``{key: func(key)}`` through a bounded pool; ordering fixed by ``keys``."""
    if threads <= 1 or len(keys) <= 1:
        return {k: func(k) for k in keys}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {k: pool.submit(func, k) for k in keys}
        return {k: futures[k].result() for k in keys}


def _require_eps(cfg: SimConfig):
    if not cfg.eps:
        raise ConfigError("study.eps is empty", "study.eps")


def run_fine(cfg: SimConfig, out, eps_list=None) -> Dict[float, FineTrajectory]:
    """Fine runs per eps; writes trajectories, snapshots and ``fine_energy.csv``."""
    out = _out(out)
    eps_list = tuple(eps_list) if eps_list is not None else cfg.eps
    if not eps_list:
        _require_eps(cfg)
    runs = _pool_map(lambda e: _fine_run(cfg, e), list(eps_list), cfg.output.threads)
    rows = []
    result = {}
    for eps in eps_list:
        traj, secs = runs[eps]
        result[eps] = traj
        traj.write_csv(out / f"fine_eps{_key(eps)}.csv")
        rep = energy_report(traj)
        div = max((float(np.abs(fluid_cell_divergence(traj.ops, v)).max(initial=0.0))
                   for v in traj.V), default=0.0)
        rows.append([eps, rep["sup_u"], rep["sup_grad_u"], rep["sup_v"], rep["int_grad_v"],
                     rep["p_l2"], rep["max_identity_residual"], div])
        append_timing(out, f"fine eps={eps:g}", secs)
        mesh = traj.ops.mesh
        for t, k in _snapshot_steps(cfg):
            p = np.full(mesh.n_nodes, np.nan)
            p[traj.ops.pressure_nodes] = traj.P[k]
            cons = traj.ops.constraints
            _snapshot(out / f"fine_eps{_key(eps)}_snapshot_t{t:g}.csv", mesh,
                      {"u": cons.expand(traj.U[k]), "v": cons.expand(traj.V[k]), "p": p})
    write_csv(out / "fine_energy.csv", "fine_energy", COLUMNS["fine_energy"], rows)
    return result


def trajectory_distance(mesh_a, free_a, unit_mass_a, U_a, V_a, mesh_b, cons_b, U_b, V_b, dt):
    """The ``e(eps)`` norm between a fine-mesh trajectory ``a`` and any trajectory ``b``.

    ``b`` is interpolated at the vertices of ``mesh_a``; both share the time grid.
    """
    X = mesh_a.vertices
    w = trapezoid_weights(U_a.shape[0] - 1, dt)
    total = 0.0
    for k in range(U_a.shape[0]):
        ub = interpolate_at(mesh_b, cons_b.expand(U_b[k]), X).T.ravel()[free_a]
        vb = interpolate_at(mesh_b, cons_b.expand(V_b[k]), X).T.ravel()[free_a]
        du, dv = U_a[k] - ub, V_a[k] - vb
        total += w[k] * (du @ (unit_mass_a @ du) + dv @ (unit_mass_a @ dv))
    return float(np.sqrt(total))


@dataclass
class ConvergenceEntry:
    eps: float
    error: float
    relative_error: float
    floor: float
    h_fine: float
    h_macro: float
    dt: float
    steps: int
    fine_dofs: int
    runtime_s: float

    def row(self) -> list:
        return [self.eps, self.error, self.relative_error, self.floor, self.h_fine, self.h_macro,
                self.dt, self.steps, self.fine_dofs]


@dataclass
class ConvergenceRecord:
    """Per-eps errors of the fine solution against the homogenized one."""

    entries: Dict[float, ConvergenceEntry] = field(default_factory=dict)
    norm: str = NORM_DEFINITION

    def ordered(self):
        return [self.entries[e] for e in sorted(self.entries, reverse=True)]

    @property
    def errors(self) -> list:
        return [e.error for e in self.ordered()]

    @property
    def monotone(self) -> bool:
        """Strict decrease of ``e(eps)`` as ``eps`` decreases."""
        errs = self.errors
        return all(b < a for a, b in zip(errs, errs[1:]))

    @property
    def status(self) -> str:
        return "PASSED" if self.monotone else "FAILED"

    def at_floor(self, rtol: float = 1e-6, atol: float = 1e-9) -> bool:
        return all(e.error <= e.floor * (1 + rtol) + atol for e in self.ordered())

    def write_csv(self, path):
        write_csv(path, "convergence", COLUMNS["convergence"], (e.row() for e in self.ordered()))

    def write_dat(self, path):
        """Whitespace-separated columns for gnuplot: eps, error, floor."""
        lines = [f"# {self.norm}", "# eps error floor relative_error"]
        lines += [f"{e.eps:.12e} {e.error:.12e} {e.floor:.12e} {e.relative_error:.12e}"
                  for e in self.ordered()]
        Path(path).write_text("\n".join(lines) + "\n")


def _convergence_entry(cfg, model, macro, mmesh, eps):
    traj, secs = _fine_run(cfg, eps)
    ops = traj.ops
    fmesh = ops.mesh
    free = ops.constraints.free
    mcons = macro.ops.constraints
    err = trajectory_distance(fmesh, free, ops.unit_mass, traj.U, traj.V, mmesh, mcons,
                              macro.U, macro.V, cfg.dt)
    zero = np.zeros_like(traj.U)
    ref = trajectory_distance(fmesh, free, ops.unit_mass, zero, zero, mmesh, mcons,
                              macro.U, macro.V, cfg.dt)
    # homogenized solution on the fine mesh: the pure discretization part
    on_fine = solve_macro(model, fmesh, cfg.f, cfg.g, cfg.T, cfg.dt, tol=cfg.solver.tol)
    floor = trajectory_distance(fmesh, free, ops.unit_mass, on_fine.U, on_fine.V, mmesh, mcons,
                                macro.U, macro.V, cfg.dt)
    return ConvergenceEntry(
        eps, err, err / ref if ref > 0 else float("inf"), floor, fmesh.h[0], mmesh.h[0],
        cfg.dt, cfg.steps, ops.size, secs,
    )


def run_convergence(cfg: SimConfig, out, model: Optional[EffectiveModel] = None) -> ConvergenceRecord:
    """e(eps) for every configured eps; writes ``convergence.csv`` and ``convergence.dat``.

    A non-monotone sequence is reported through ``record.status``, not raised.
    """
    _require_eps(cfg)
    out = _out(out)
    model = model or run_effective(cfg, out)
    mmesh = macro_mesh(cfg.dimension, cfg.mesh.macro)
    macro = solve_macro(model, mmesh, cfg.f, cfg.g, cfg.T, cfg.dt, tol=cfg.solver.tol)
    macro.write_csv(out / "macro.csv")
    entries = _pool_map(lambda e: _convergence_entry(cfg, model, macro, mmesh, e),
                        list(cfg.eps), cfg.output.threads)
    record = ConvergenceRecord(entries)
    record.write_csv(out / "convergence.csv")
    record.write_dat(out / "convergence.dat")
    for e in record.ordered():
        append_timing(out, f"convergence eps={e.eps:g}", e.runtime_s)
    (out / "convergence_status.txt").write_text(
        f"monotone decrease: {record.status}\nat discretization floor: "
        f"{'yes' if record.at_floor() else 'no'}\n")
    return record


def write_report(out, cfg: Optional[SimConfig] = None) -> str:
    """Collect whatever outputs exist in ``out`` into ``report.txt``."""
    out = _out(out)
    lines = ["viscohom report", "", "Definitions:", f"  {NORM_DEFINITION}",
             f"  {FLOOR_DEFINITION}", f"  {ENERGY_DEFINITION}", ""]
    if cfg is not None:
        lines += ["Configuration:", serialize_config(cfg), ""]
    eff = out / "effective.txt"
    if eff.exists():
        m = EffectiveModel.from_text(eff.read_text())
        lines += ["Effective model:", f"  rho0 = {m.rho0:.10g}",
                  f"  load weights = {m.load_weights[0]:.10g}, {m.load_weights[1]:.10g}"]
        for name in ("C0", "C1", "C0_memory", "C1_memory"):
            mat = getattr(m, name)
            lines.append(f"  {name} =")
            lines += ["    " + " ".join(f"{v: .6e}" for v in row) for row in mat]
        lines.append("  H = " + " ".join(f"{v: .6e}" for v in m.H))
        lines.append("")
    for name, title in (("macro.csv", "Macro trajectory (final step)"),):
        path = out / name
        if path.exists():
            _, header, rows = read_csv(path)
            lines += [f"{title}:"] + [f"  {h} = {v}" for h, v in zip(header, rows[-1])] + [""]
    for name, title in (("fine_energy.csv", "Fine-scale energy quantities"),
                        ("convergence.csv", "Convergence study"),
                        ("properties.csv", "Property suite")):
        path = out / name
        if path.exists():
            _, header, rows = read_csv(path)
            lines += [f"{title}:", "  " + " | ".join(header)]
            lines += ["  " + " | ".join(r) for r in rows]
            lines.append("")
    status = out / "convergence_status.txt"
    if status.exists():
        lines += [status.read_text()]
    text = "\n".join(lines)
    (out / "report.txt").write_text(text)
    return text
