"""Benchmark drivers: initial data, the adaptive time loop and its logs."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptivity import Discretization, IndicatorConfig, adaptation_cycle, estimate, mark
from .config import RunConfig
from .fe import enforce
from .mesh import Mark, MeshForest, apply_marks
from .solver import BoundaryConditions, Solver, SolverError
from .systems import make_system
from .vtk import write_vtk

log = logging.getLogger(__name__)

DEFAULT_QUANTITIES = {"shallow_water": ("h",), "euler": ("rho", "pressure")}


# -- setup -------------------------------------------------------------------
def build_system(cfg: RunConfig):
    params = dict(cfg.system_params)
    if cfg.system == "shallow_water":
        factor = params.pop("h_cut_factor", 1e-6)
        ic = cfg.initial
        href = max(ic.get("h_left", 1.0), ic.get("h_right", 0.0)) if ic["kind"] == "dam_break" else 1.0
        params["h_cut"] = factor * href
    elif "h_cut_factor" in params:
        raise ValueError("h_cut_factor only applies to shallow water")
    return make_system(cfg.system, **params)


def indicator_config(cfg: RunConfig) -> IndicatorConfig:
    kw = dict(cfg.indicator)
    kw.setdefault("quantities", DEFAULT_QUANTITIES[cfg.system])
    return IndicatorConfig(max_level=cfg.max_level, **kw)


def initial_state(cfg: RunConfig, system, coords) -> np.ndarray:
    ic = cfg.initial
    x, y = coords[:, 0], coords[:, 1]
    kind = ic["kind"]
    if kind == "dam_break":
        h = np.where(x <= ic.get("x_dam", 0.0), ic.get("h_left", 1.0), ic.get("h_right", 0.0))
        return np.stack([h, 0.0 * h, 0.0 * h], axis=1)
    if kind == "blast":
        r = np.hypot(x - ic.get("x_center", 0.0), y - ic.get("y_center", 0.0))
        p = np.where(r <= ic.get("radius", 0.05), ic.get("p_blast", 100.0), ic.get("p_ambient", 0.1))
        return system.from_primitive(ic.get("rho", 1.0) + 0 * x, 0 * x, 0 * x, p)
    if kind == "jet":
        return system.from_primitive(ic.get("rho", 1.0) + 0 * x, 0 * x, 0 * x, ic.get("p_ambient", 1.0) + 0 * x)
    if kind == "constant":
        state = np.array([float(s) for s in ic["state"]])
        if state.shape != (system.n_comp,):
            raise ValueError(f"constant state needs {system.n_comp} components")
        return np.tile(state, (len(coords), 1))
    raise ValueError(f"unknown initial condition {kind!r}")


def jet_slot(cfg: RunConfig):
    """Predicate on cell bounds: cell touches the inflow slot on the left wall."""
    ic = cfg.initial
    x0 = cfg.extent[0][0]
    lo, hi = ic.get("y_jet_min", -0.05), ic.get("y_jet_max", 0.05)
    return lambda b: b[0] <= x0 + 1e-14 and b[3] >= lo and b[1] <= hi


def boundary_conditions(cfg: RunConfig, system) -> BoundaryConditions:
    sides = dict(cfg.boundary)
    dirichlet = None
    if cfg.initial["kind"] == "jet":
        ic = cfg.initial
        x0 = cfg.extent[0][0]
        lo, hi = ic.get("y_jet_min", -0.05), ic.get("y_jet_max", 0.05)
        jet = system.from_primitive(ic.get("rho_jet", 5.0), ic.get("v_jet", 10.0), 0.0, ic.get("p_jet", 0.4127))

        def dirichlet(coords, t):
            mask = (np.abs(coords[:, 0] - x0) < 1e-12) & (coords[:, 1] >= lo) & (coords[:, 1] <= hi)
            return np.broadcast_to(jet, (len(coords), system.n_comp)), mask

    return BoundaryConditions(sides=sides, dirichlet=dirichlet)


def interpolate(cfg, system, disc) -> np.ndarray:
    U = initial_state(cfg, system, disc.dofmap.coords)
    return enforce(disc.constraints, U)


def initial_discretization(cfg: RunConfig, system, ind: IndicatorConfig | None = None):
    """Mesh and nodal interpolant of the initial data.

    Uniform runs start at ``max_level``.  Adaptive runs refine from the
    coarse grid where the indicator of the interpolant asks for it,
    re-interpolating after every round.
    """
    if cfg.uniform:
        mesh = MeshForest.uniform(cfg.nx, cfg.ny, cfg.extent, level=cfg.max_level, max_level=cfg.max_level)
        disc = Discretization(mesh, cfg.degree)
        return disc, interpolate(cfg, system, disc)
    ind = ind or indicator_config(cfg)
    pinned = jet_slot(cfg) if cfg.initial["kind"] == "jet" else None
    mesh = MeshForest.uniform(cfg.nx, cfg.ny, cfg.extent, level=0, max_level=cfg.max_level)
    disc = Discretization(mesh, cfg.degree)
    U = interpolate(cfg, system, disc)
    for _ in range(cfg.max_level):
        marks = mark(disc.dofmap, estimate(system, disc, U, ind), ind)
        marks = {k: (Mark.REFINE if v == Mark.REFINE else Mark.KEEP) for k, v in marks.items()}
        if pinned is not None:
            for k in marks:
                if k[0] < cfg.max_level and pinned(mesh.cell_bounds(k)):
                    marks[k] = Mark.REFINE
        if not any(v == Mark.REFINE for v in marks.values()):
            break
        mesh = apply_marks(mesh, marks)
        disc = Discretization(mesh, cfg.degree)
        U = interpolate(cfg, system, disc)
    return disc, U


# -- time loop ---------------------------------------------------------------
@dataclass
class RunResult:
    status: str
    message: str = ""
    steps: int = 0
    t: float = 0.0
    wall_time: float = 0.0
    dt: list = field(default_factory=list)
    totals: list = field(default_factory=list)
    impulse: list = field(default_factory=list)
    min_psi: list = field(default_factory=list)
    magnitude: list = field(default_factory=list)
    adapt_min_psi: list = field(default_factory=list)  # right after each adaptation
    vector_groups: tuple = ()
    dofs: list = field(default_factory=list)
    adapt_drift: float = 0.0
    constraint_residual: float = 0.0
    psi_names: tuple = ()

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def balance_drift(self) -> np.ndarray:
        """Relative per-component error of ``totals(t) - totals(0) - impulse(t)``.

        Each component is scaled by the largest value of ``sum m |U_k|``
        reached during the run; components forming one vector (momentum)
        share the largest scale of the group.
        """
        tot = np.asarray(self.totals)
        imp = np.asarray(self.impulse)
        err = np.abs(tot - tot[0] - imp).max(axis=0)
        scale = np.asarray(self.magnitude).max(axis=0)
        for group in self.vector_groups:
            scale[list(group)] = scale[list(group)].max()
        return np.divide(err, scale, out=np.zeros_like(err), where=scale > 0)

    def overall_min_psi(self) -> np.ndarray:
        """Minimum of every constraint over all steps and adapted states."""
        return np.asarray(self.min_psi + self.adapt_min_psi).min(axis=0)

    def summary(self) -> dict:
        dts = np.asarray(self.dt) if self.dt else np.array([np.nan])
        return {
            "status": self.status,
            "message": self.message,
            "steps": self.steps,
            "t_final_reached": self.t,
            "wall_time_s": self.wall_time,
            "dt_initial": float(dts[0]),
            "dt_min": float(np.min(dts)),
            "balance_drift": self.balance_drift().tolist() if self.totals else [],
            "adaptation_drift": self.adapt_drift,
            "max_constraint_residual": self.constraint_residual,
            "min_psi": dict(zip(self.psi_names, self.overall_min_psi().tolist())) if self.min_psi else {},
            "dofs_initial": self.dofs[0][2] if self.dofs else 0,
            "dofs_final": self.dofs[-1][2] if self.dofs else 0,
            "dofs_max": max(d[2] for d in self.dofs) if self.dofs else 0,
        }


class _Logs:
    def __init__(self, output_dir, system):
        self.dir = Path(output_dir) if output_dir else None
        self.system = system
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)
            self._cons = open(self.dir / "conservation.csv", "w", newline="")
            self._dofs = open(self.dir / "dofs.csv", "w", newline="")
            self.cons = csv.writer(self._cons)
            self.dofw = csv.writer(self._dofs)
            comps = system.components
            self.cons.writerow(
                ["step", "t", "dt"] + [f"total_{c}" for c in comps] + [f"impulse_{c}" for c in comps]
                + [f"min_{n}" for n in system.constraint_names]
            )
            self.dofw.writerow(["step", "t", "n_dofs", "n_free", "n_cells"])

    def step(self, row):
        if self.dir:
            self.cons.writerow([repr(float(v)) if not isinstance(v, int) else v for v in row])

    def dof(self, row):
        if self.dir:
            self.dofw.writerow(row)

    def close(self):
        if self.dir:
            self._cons.close()
            self._dofs.close()


def run(cfg: RunConfig, output_dir=None, progress=None) -> RunResult:
    """Run one benchmark; writes logs to ``output_dir`` when given."""
    t_start = time.perf_counter()
    np.random.seed(cfg.seed)  # nothing random in the loop; kept for reproducible extensions
    system = build_system(cfg)
    ind = indicator_config(cfg)
    disc, U_full = initial_discretization(cfg, system, ind)
    bc = boundary_conditions(cfg, system)
    pinned = jet_slot(cfg) if cfg.initial["kind"] == "jet" else None
    logs = _Logs(output_dir, system)
    res = RunResult(status="running", psi_names=system.constraint_names, vector_groups=(system.slip_momentum(),))
    m = system.n_comp

    def snapshot(step):
        if logs.dir and (cfg.vtk_every > 0 or step == 0 or res.status != "running"):
            comps = list(system.components)
            write_vtk(logs.dir / f"snapshot_{step:06d}.vtk", disc.dofmap, U_full, comps,
                      cell_data={"level": disc.dofmap.cell_levels})

    def record(step, t, dt, impulse):
        tot = disc.mass.total(U_full)
        psi = system.constraint_values(U_full).min(axis=0)
        res.totals.append(tot)
        res.magnitude.append(disc.mass.m_tilde @ np.abs(U_full))
        res.impulse.append(impulse.copy())
        res.min_psi.append(psi)
        if step == 0 or step % max(cfg.log_every, 1) == 0:
            logs.step([step, t, dt, *tot, *impulse, *psi])

    def record_dofs(step, t):
        row = (step, t, disc.n_dofs, len(disc.constraints.free_dofs), disc.dofmap.n_cells)
        res.dofs.append(row)
        logs.dof(list(row))

    t, step = 0.0, 0
    impulse = np.zeros(m)
    record(0, 0.0, 0.0, impulse)
    record_dofs(0, 0.0)
    snapshot(0)
    adaptive = not cfg.uniform
    solver = Solver(system, disc, bc, cfg.cfl)
    free = disc.constraints.free_dofs
    try:
        if not np.all(system.is_admissible(U_full)):
            raise SolverError("initial state is not admissible")
        while t < cfg.t_final and step < cfg.max_steps:
            if adaptive and step > 0 and step % ind.period == 0:
                scale = np.maximum(disc.mass.m_tilde @ np.abs(U_full), 1e-300)
                new, U_new, rep = adaptation_cycle(system, disc, U_full, ind, limit=cfg.limiter, pinned=pinned)
                res.adapt_drift = max(res.adapt_drift, float(np.max(np.abs(rep.totals_after - rep.totals_before) / scale)))
                res.constraint_residual = max(res.constraint_residual, rep.constraint_residual)
                if new is not disc:
                    disc, U_full = new, U_new
                    solver = Solver(system, disc, bc, cfg.cfl)
                    free = disc.constraints.free_dofs
                    record_dofs(step, t)
                res.adapt_min_psi.append(system.constraint_values(U_full).min(axis=0))
                bad = ~system.is_admissible(U_full)
                if np.any(bad):
                    i = int(np.argmax(bad))
                    raise SolverError(f"inadmissible state {U_full[i]} after adaptation at {disc.dofmap.coords[i]}")
            U, dt, imp = solver.advance(np.ascontiguousarray(U_full[free]), t, cfg.t_final)
            U_full = disc.constraints.condensation @ U
            t = cfg.t_final if cfg.t_final - t - dt < 1e-14 * cfg.t_final else t + dt
            step += 1
            impulse = impulse + imp
            res.dt.append(dt)
            record(step, t, dt, impulse)
            if cfg.vtk_every and step % cfg.vtk_every == 0:
                snapshot(step)
            if progress:
                progress(step, t, dt, disc.n_dofs)
            if dt < cfg.min_dt and t < cfg.t_final:
                res.status = "dt_collapse"
                res.message = f"time step {dt:.3e} below {cfg.min_dt:.1e} at t={t:.6g}"
                break
        else:
            res.status = "completed" if t >= cfg.t_final else "max_steps"
    except SolverError as exc:
        res.status = "inadmissible"
        res.message = str(exc)
    res.steps, res.t = step, t
    res.wall_time = time.perf_counter() - t_start
    snapshot(step)
    logs.close()
    if logs.dir:
        (logs.dir / "summary.json").write_text(json.dumps(res.summary(), indent=2) + "\n")
    log.info("%s: %s after %d steps, t=%.4g", cfg.name, res.status, step, t)
    return res


def compare_uniform_vs_amr(cfg: RunConfig, output_dir=None) -> dict:
    """Run the same problem on the uniform finest mesh and adaptively."""
    out = Path(output_dir) if output_dir else None
    uni = run(cfg.with_overrides(uniform=True), out / "uniform" if out else None)
    amr = run(cfg.with_overrides(uniform=False), out / "amr" if out else None)
    report = {
        "uniform": uni.summary(),
        "amr": amr.summary(),
        "dof_ratio_final": amr.dofs[-1][2] / uni.dofs[-1][2],
        "wall_time_ratio": uni.wall_time / amr.wall_time if amr.wall_time > 0 else float("nan"),
        "initial_totals_uniform": np.asarray(uni.totals[0]).tolist(),
        "initial_totals_amr": np.asarray(amr.totals[0]).tolist(),
    }
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
