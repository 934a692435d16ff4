"""Adaptive loop, uniform-refinement baseline, reference solves and output.

The loop is SOLVE -> ESTIMATE -> MARK -> REFINE and is independent of the
physics: a *problem adapter* supplies the solve, the DWR report, the
reference solution and the output fields.  Adapters exist for linear
elasticity (single or sign-weighted combined goals), hyperelasticity and
the coupled interaction toy; :func:`build_adapter` creates one from an
:class:`~dwr_adapt.config.AdaptConfig`.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dwr
from .config import AdaptConfig, ConfigError, GoalConfig
from .elasticity import (ActiveFibers, LinearMaterial, LinearStress, Loads, circumferential, residual_vector,
                         solve_dual, solve_primal)
from .fem.space import DirichletBC, Field, Space, embed, extrapolate, interpolate, transfer
from .fsi_toy import FluidIntegral, FsiDomain, FsiProblem, InterfaceFlux, fsi_dwr, smooth_bump
from .geometry import ArteryGeometry, SiliconeGeometry, ellipse_locator, two_subdomain_square
from .goals import BoundaryFlux, Combined, PointValue, SubdomainIntegral, resolve_signs
from .hyperelastic import HyperelasticProblem, HyperMaterial, NewtonConfig, NewtonDivergence
from .mesh import Mesh, dorfler_mark, load_mesh, refine, uniform_refine, unit_square
from .vtk import vertex_values, write_vtk

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("iteration", "cells", "dofs", "J_value", "eta_global", "sum_local", "reference_error",
               "relative_error", "effectivity_global", "effectivity_sum")


@dataclass
class ConvergenceRow:
    iteration: int
    cells: int
    dofs: int
    J_value: float
    eta_global: float
    sum_local: float
    reference_error: float | None = None
    relative_error: float | None = None
    effectivity_global: float | None = None
    effectivity_sum: float | None = None


@dataclass
class IterationRecord:
    """Everything produced in one iteration (kept for output)."""

    mesh: Mesh
    state: object
    report: dwr.DwrReport


class RunHistory(list):
    """List of :class:`ConvergenceRow` with the run status attached.

    ``status`` is ``"converged"`` (eta_h <= epsilon), ``"max_iterations"``
    (iteration or dof budget exhausted) or ``"failed"``.
    """

    def __init__(self, rows=()):
        super().__init__(rows)
        self.status = "max_iterations"
        self.records: list[IterationRecord] = []
        self.reference_value: float | None = None
        self.model_error: float | None = None
        self.reference_dofs: int | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class RunFailed(RuntimeError):
    """Raised when an iteration fails; ``history`` holds the rows completed so far."""

    def __init__(self, message: str, history: RunHistory):
        super().__init__(message)
        self.history = history


@dataclass
class Reference:
    """Reference goal components (one per sub-goal) and their dof count."""

    components: np.ndarray
    dofs: int = 0


# ---------------------------------------------------------------------------
# adapters
# ---------------------------------------------------------------------------
@dataclass
class ElasticState:
    mesh: Mesh
    space: Space
    u: Field


class LinearElasticityAdapter:
    """Linear (active) elasticity with P_k primal and P_{k+1} dual weights.

    ``goal`` may be a :class:`~dwr_adapt.goals.Combined`; its weights are then
    re-resolved every iteration from a P_{k+1} primal solution (enriched
    strategy) or the patchwise extrapolation of u_h.  ``exact`` optionally
    gives the exact goal components, which then replace the reference solve.
    """

    def __init__(self, material: LinearMaterial, bcs, goal, fibers: ActiveFibers | None = None,
                 loads: Loads | None = None, degree: int = 1, dual_strategy: str = "enriched_solve",
                 cell_order: int | None = None, exact=None):
        self.material, self.bcs, self.goal = material, list(bcs), goal
        self.fibers, self.loads = fibers, loads or Loads()
        self.degree, self.dual_strategy = degree, dual_strategy
        self.cell_order = cell_order
        self.exact = None if exact is None else np.atleast_1d(np.asarray(exact, dtype=float))

    @property
    def goals(self):
        return list(self.goal.goals) if isinstance(self.goal, Combined) else [self.goal]

    def space(self, mesh: Mesh, degree: int) -> Space:
        return Space(mesh, degree, 2, self.bcs)

    def solve(self, mesh: Mesh, previous=None) -> ElasticState:
        V = self.space(mesh, self.degree)
        return ElasticState(mesh, V, solve_primal(V, self.material, self.fibers, self.loads))

    def _higher(self, st: ElasticState, V2: Space) -> Field:
        if self.dual_strategy == "enriched_solve":
            return solve_primal(V2, self.material, self.fibers, self.loads)
        return extrapolate(st.u, V2)

    def resolved_goal(self, st: ElasticState, V2: Space):
        """The goal with sign weights resolved for this iteration (unchanged if single)."""
        if not isinstance(self.goal, Combined):
            return self.goal, np.ones(1)
        w = resolve_signs(self.goal.goals, self.goal.omegas, st.u, self._higher(st, V2))
        return Combined(self.goal.goals, self.goal.omegas, w), w

    def estimate(self, st: ElasticState) -> dwr.DwrReport:
        k, mesh, mat = self.degree, st.mesh, self.material
        V2 = self.space(mesh, k + 1)
        goal, weights = self.resolved_goal(st, V2)
        if self.dual_strategy == "enriched_solve":
            z = solve_dual(V2, mat, goal)
        else:
            z = extrapolate(solve_dual(st.space, mat, goal), V2.homogenized())
        r = residual_vector(st.u, V2, mat, self.fibers, self.loads)
        eta = dwr.global_estimator(r, z)
        w = dwr.weight(z, k)
        cell_order = self.cell_order or max(mat.quadrature_order(k + 1), 2 * k + 2)
        rho = dwr.residual_contributions(mesh, w, LinearStress(st.u, mat, self.fibers), body=self.loads.body,
                                         tractions=self.loads.tractions, weak=True, cell_order=cell_order)
        comps = np.array([g.evaluate(st.u) for g in self.goals])
        rep = dwr.DwrReport(eta, np.abs(rho), rho, dofs=st.space.num_dofs, cells=mesh.num_cells,
                            J_value=float(weights @ comps))
        rep.extras.update(components=comps, weights=weights, adjoint=z,
                          conservativity=dwr.conservativity(rho, r, w.coefficients))
        return rep

    def reference(self, mesh: Mesh, last: ElasticState, levels: int) -> Reference:
        if self.exact is not None:
            return Reference(self.exact, 0)
        for _ in range(levels):
            mesh = uniform_refine(mesh)
        st = self.solve(mesh)
        return Reference(np.array([g.evaluate(st.u) for g in self.goals]), st.space.num_dofs)

    def fields(self, st: ElasticState, rep: dwr.DwrReport):
        point = {"u_h": vertex_values(st.u), "z_hat": vertex_values(rep.extras["adjoint"])}
        return point, {"eta_K": rep.eta_local, "region": st.mesh.region}


@dataclass
class HyperState:
    mesh: Mesh
    problem: HyperelasticProblem
    x: np.ndarray
    newton_iterations: int = 0


class HyperelasticAdapter:
    """Quasi-static hyperelasticity with displacement (and pressure) Dirichlet data.

    The first mesh is solved with the configured load stepping; later
    meshes start from the transferred previous solution with a single load
    step, falling back to full load stepping if that Newton run fails.
    """

    def __init__(self, material: HyperMaterial, bcs, goal, degree: int = 2, loads: Loads | None = None,
                 dual_strategy: str = "extrapolate", newton: NewtonConfig | None = None):
        if degree < 2 and material.mixed:
            raise ValueError("mixed problems need displacement degree >= 2")
        self.material, self.bcs, self.goal = material, list(bcs), goal
        self.degree, self.loads, self.dual_strategy = degree, loads or Loads(), dual_strategy
        self.newton = newton or NewtonConfig()

    def problem(self, mesh: Mesh, degree: int, quad_order: int | None = None) -> HyperelasticProblem:
        Vu = Space(mesh, degree, 2, self.bcs)
        Vp = Space(mesh, degree - 1, 1) if self.material.mixed else None
        return HyperelasticProblem(Vu, self.material, Vp, self.loads, quad_order)

    def _transfer(self, prev: HyperState, pb: HyperelasticProblem) -> np.ndarray:
        u, p = prev.problem.split(prev.x)
        ut = transfer(u, pb.space_u)
        pt = None if p is None else transfer(p, pb.space_p)
        return pb.join(ut, pt)

    def _newton(self, pb: HyperelasticProblem, previous: HyperState | None) -> tuple[np.ndarray, int]:
        if previous is not None:
            warm = NewtonConfig(self.newton.abs_tol, self.newton.rel_tol, self.newton.max_iter, 1,
                                self.newton.max_halvings)
            try:
                res = pb.newton_solve(self._transfer(previous, pb), warm)
                if res.converged:
                    return res.x, res.iterations
            except (NewtonDivergence, ArithmeticError, np.linalg.LinAlgError) as exc:
                logger.info("warm start failed (%s); restarting with load stepping", exc)
        res = pb.newton_solve(None, self.newton)
        if not res.converged:
            raise NewtonDivergence("Newton did not converge", -1)
        return res.x, res.iterations

    def solve(self, mesh: Mesh, previous: HyperState | None = None) -> HyperState:
        pb = self.problem(mesh, self.degree)
        x, its = self._newton(pb, previous)
        return HyperState(mesh, pb, x, its)

    def estimate(self, st: HyperState) -> dwr.DwrReport:
        pb, k, mesh = st.problem, self.degree, st.mesh
        hi = self.problem(mesh, k + 1, quad_order=pb.quad.order)
        u, p = pb.split(st.x)
        xh = hi.join(embed(u, hi.space_u), None if p is None else embed(p, hi.space_p))
        if self.dual_strategy == "enriched_solve":
            y = hi.adjoint_solve(xh, self.goal)
            zu, zp = hi.split(y)
        else:
            zu_l, zp_l = pb.split(pb.adjoint_solve(st.x, self.goal))
            zu = extrapolate(Field(pb.space_u.homogenized(), zu_l.coefficients), hi.space_u.homogenized())
            zp = None if zp_l is None else extrapolate(zp_l, hi.space_p)
            y = hi.join(zu, zp)
        r = hi.residual(xh)
        eta = dwr.global_estimator(r, y)
        wu = dwr.weight(zu, k)
        wp = None if zp is None else dwr.weight(zp, k - 1)
        rho = dwr.residual_contributions(mesh, wu, pb.stress_evaluator(st.x), body=self.loads.body,
                                         tractions=self.loads.tractions, pressure_weight=wp,
                                         pressure_residual=None if p is None else pb.pressure_residual(st.x))
        J = self.goal.evaluate(u, p, self.material)
        rep = dwr.DwrReport(eta, np.abs(rho), rho, dofs=pb.num_dofs, cells=mesh.num_cells, J_value=J)
        rep.extras.update(components=np.array([J]), weights=np.ones(1), adjoint=zu,
                          newton_iterations=st.newton_iterations)
        return rep

    def reference(self, mesh: Mesh, last: HyperState, levels: int) -> Reference:
        prev = last
        for _ in range(levels):
            mesh = uniform_refine(mesh)
            prev = self.solve(mesh, prev)
        u, p = prev.problem.split(prev.x)
        return Reference(np.array([self.goal.evaluate(u, p, self.material)]), prev.problem.num_dofs)

    def fields(self, st: HyperState, rep: dwr.DwrReport):
        u, _ = st.problem.split(st.x)
        point = {"u_h": vertex_values(u), "z_hat": vertex_values(rep.extras["adjoint"])}
        return point, {"eta_K": rep.eta_local, "region": st.mesh.region}


@dataclass
class FsiState:
    mesh: Mesh
    problem: FsiProblem
    x: np.ndarray


class FsiAdapter:
    """The coupled fluid/solid toy with a P_{k+1} adjoint."""

    def __init__(self, goal, load=None, degree: int = 1, amplitude: float = 1.0, coupled: bool = True,
                 fluid: int = 1, solid: int = 2, newton: NewtonConfig | None = None):
        self.goal, self.load, self.degree = goal, load, degree
        self.amplitude, self.coupled = amplitude, coupled
        self.fluid, self.solid = fluid, solid
        self.newton = newton or NewtonConfig()

    def problem(self, mesh: Mesh, degree: int | None = None) -> FsiProblem:
        dom = FsiDomain(mesh, self.fluid, self.solid)
        return FsiProblem(dom, degree or self.degree, self.load, self.amplitude, self.coupled)

    def solve(self, mesh: Mesh, previous=None) -> FsiState:
        pb = self.problem(mesh)
        res = pb.newton_solve(None, self.newton)
        if not res.converged:
            raise NewtonDivergence("Newton did not converge", -1)
        return FsiState(mesh, pb, res.x)

    def estimate(self, st: FsiState) -> dwr.DwrReport:
        rep = fsi_dwr(st.problem, st.x, self.goal)
        rep.extras.update(components=np.array([rep.J_value]), weights=np.ones(1),
                          conservativity=abs(rep.signed_local.sum() - rep.extras["residual_of_weight"]))
        return rep

    def reference(self, mesh: Mesh, last: FsiState, levels: int) -> Reference:
        for _ in range(levels):
            mesh = uniform_refine(mesh)
        st = self.solve(mesh)
        return Reference(np.array([self.goal.evaluate(st.problem, st.x)]), st.problem.num_dofs)

    def fields(self, st: FsiState, rep: dwr.DwrReport):
        v, u = st.problem.split(st.x)
        z, w = rep.extras["adjoint"]
        point = {"v_h": vertex_values(v), "u_h": vertex_values(u), "z_hat": vertex_values(z),
                 "w_hat": vertex_values(w)}
        return point, {"eta_K": rep.eta_local, "region": st.mesh.region}


# ---------------------------------------------------------------------------
# building adapters and meshes from a configuration
# ---------------------------------------------------------------------------
def _num(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        pass
    parts = v.replace(",", " ").split()
    if len(parts) > 1:
        return tuple(float(p) for p in parts)
    if v.strip().lower() in ("yes", "true", "no", "false"):
        return v.strip().lower() in ("yes", "true")
    return v.strip()


def build_mesh(cfg: AdaptConfig) -> Mesh:
    m = cfg.mesh
    if m.file:
        path = Path(m.file)
        if not path.is_absolute():
            path = Path(cfg.base_dir) / path
        return load_mesh(path)
    params = {k: _num(v) if isinstance(v, str) else v for k, v in m.params.items()}
    builders = {
        "artery": lambda: ArteryGeometry(**params).build(),
        "silicone": lambda: SiliconeGeometry(**params).build(),
        "two_subdomain_square": lambda: two_subdomain_square(**params),
        "unit_square": lambda: unit_square(**params),
    }
    if m.geometry not in builders:
        raise ConfigError(f"[mesh] needs 'file' or a geometry from {sorted(builders)}")
    return builders[m.geometry]()


def build_goal(g: GoalConfig):
    if g.kind == "subdomain_integral":
        return SubdomainIntegral(g.regions, tuple(g.weights))
    if g.kind == "point_value":
        return PointValue(tuple(g.point), g.component)
    if g.kind == "boundary_flux":
        return BoundaryFlux(tag=g.tag, direction=g.direction, thickness=g.thickness)
    if g.kind == "combined":
        return Combined([build_goal(s) for s in g.goals], tuple(g.omegas))
    if g.kind == "fluid_integral":
        return FluidIntegral(tuple(g.weights))
    if g.kind == "interface_flux":
        return InterfaceFlux(g.component)
    raise ConfigError(f"unknown goal kind {g.kind!r}")


def _bcs(cfg: AdaptConfig):
    return [DirichletBC(tag, tuple(v)) for tag, v in sorted(cfg.boundary.dirichlet.items())]


def _loads(cfg: AdaptConfig) -> Loads:
    b = cfg.boundary
    return Loads(body=None if b.body is None else tuple(b.body), tractions=dict(b.tractions))


def build_adapter(cfg: AdaptConfig):
    """Problem adapter described by ``cfg``."""
    goal = build_goal(cfg.goal)
    if cfg.problem == "elasticity":
        m = cfg.material
        locator = None
        if m.core_center is not None:
            locator = ellipse_locator(m.core_center, m.core_axes, m.core_tag, m.background_tag)
        mat = LinearMaterial(dict(m.E), dict(m.nu), m.plane_strain, locator, m.sample_order)
        fibers = None
        if cfg.fibers is not None:
            f = cfg.fibers
            direction = circumferential(f.center) if f.direction == "circumferential" else tuple(f.direction)
            fibers = ActiveFibers(tuple(f.regions), f.beta, f.T, direction)
        return LinearElasticityAdapter(mat, _bcs(cfg), goal, fibers, _loads(cfg), cfg.degree, cfg.dual_strategy)
    if cfg.problem == "hyperelastic":
        h = cfg.hyper
        mat = HyperMaterial(h.law, dict(h.params), incompressible=h.incompressible, kappa=h.kappa, plane=h.plane)
        return HyperelasticAdapter(mat, _bcs(cfg), goal, cfg.degree, _loads(cfg), cfg.dual_strategy, cfg.newton)
    if cfg.problem == "fsi":
        s = cfg.fsi
        load = smooth_bump(tuple(s.load_center), s.load_width, tuple(s.load_direction))
        return FsiAdapter(goal, load, cfg.degree, s.amplitude, s.coupled, s.fluid_tag, s.solid_tag, cfg.newton)
    raise ConfigError(f"unknown problem {cfg.problem!r}")


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------
def _row(iteration: int, rep: dwr.DwrReport) -> ConvergenceRow:
    return ConvergenceRow(iteration, int(rep.cells), int(rep.dofs), float(rep.J_value), float(rep.eta_global),
                          float(rep.sum_local))


def apply_reference(history: RunHistory, ref: Reference, target_value: float | None = None) -> None:
    """Fill the error and effectivity columns of every row from ``ref``."""
    for row, rec in zip(history, history.records):
        comps, w = rec.report.extras["components"], rec.report.extras["weights"]
        err = float(w @ (ref.components - comps))
        ref_value = float(w @ ref.components)
        row.reference_error = abs(err)
        row.relative_error = abs(err) / abs(ref_value) if ref_value != 0 else math.inf
        if err != 0:
            dwr.effectivity(rec.report, err)
            row.effectivity_global = rec.report.effectivity_global
            row.effectivity_sum = rec.report.effectivity_sum
    if len(ref.components) == 1:
        history.reference_value = float(ref.components[0])
        if target_value:
            history.model_error = abs(history.reference_value - target_value) / abs(target_value)
    history.reference_dofs = ref.dofs


def adaptive_loop(cfg: AdaptConfig, mesh: Mesh | None = None, adapter=None,
                  reference: Reference | None = None) -> RunHistory:
    """Run SOLVE -> ESTIMATE -> MARK -> REFINE until eta_h <= epsilon or a budget is hit.

    Returns the convergence rows (one per iteration).  With
    ``cfg.reference`` the final mesh is refined uniformly
    ``cfg.reference_levels`` times, solved, and used to fill the error
    columns (unless ``reference`` is supplied).  On failure a
    :class:`RunFailed` carrying the completed rows is raised.
    """
    adapter = adapter if adapter is not None else build_adapter(cfg)
    mesh = mesh if mesh is not None else build_mesh(cfg)
    history = RunHistory()
    state = None
    try:
        for it in range(cfg.max_iterations):
            state = adapter.solve(mesh, state)
            rep = adapter.estimate(state)
            history.append(_row(it, rep))
            history.records.append(IterationRecord(mesh, state, rep))
            logger.info("iteration %d: cells=%d dofs=%d J=%.10g eta=%.3e sum=%.3e", it, rep.cells, rep.dofs,
                        rep.J_value, rep.eta_global, rep.sum_local)
            if rep.eta_global <= cfg.epsilon:
                history.status = "converged"
                break
            if it == cfg.max_iterations - 1 or (cfg.max_dofs is not None and rep.dofs >= cfg.max_dofs):
                break
            rep.marked = dorfler_mark(rep.eta_local, cfg.alpha)
            mesh = refine(mesh, rep.marked, cfg.refine_mode)
        if reference is None and cfg.reference:
            reference = adapter.reference(mesh, state, cfg.reference_levels)
        if reference is not None:
            apply_reference(history, reference, cfg.target_value)
    except Exception as exc:
        history.status = "failed"
        raise RunFailed(f"{type(exc).__name__}: {exc}", history) from exc
    return history


def run_uniform(cfg: AdaptConfig, levels: int, mesh: Mesh | None = None, adapter=None,
                reference: Reference | None = None) -> RunHistory:
    """Baseline on ``levels`` meshes: the initial mesh and its uniform refinements."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    adapter = adapter if adapter is not None else build_adapter(cfg)
    mesh = mesh if mesh is not None else build_mesh(cfg)
    history = RunHistory()
    state = None
    try:
        for it in range(levels):
            if it:
                mesh = uniform_refine(mesh)
            state = adapter.solve(mesh, state)
            rep = adapter.estimate(state)
            history.append(_row(it, rep))
            history.records.append(IterationRecord(mesh, state, rep))
        if reference is None and cfg.reference:
            reference = adapter.reference(mesh, state, cfg.reference_levels)
        if reference is not None:
            apply_reference(history, reference, cfg.target_value)
    except Exception as exc:
        history.status = "failed"
        raise RunFailed(f"{type(exc).__name__}: {exc}", history) from exc
    history.status = "converged"
    return history


def matched_comparison(adaptive, uniform) -> list[tuple[int, float, int, float]]:
    """Pair each uniform row with the adaptive row of largest cell count not above it.

    Returns ``(uniform_cells, uniform_error, adaptive_cells, adaptive_error)``
    tuples; uniform rows coarser than the first adaptive row are skipped.
    """
    out = []
    for ur in uniform:
        cands = [ar for ar in adaptive if ar.cells <= ur.cells and ar.reference_error is not None]
        if cands:
            ar = max(cands, key=lambda r: r.cells)
            out.append((ur.cells, ur.reference_error, ar.cells, ar.reference_error))
    return out


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------
def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_cell(getattr(r, c)) for c in CSV_COLUMNS])


def read_csv(path) -> list[ConvergenceRow]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            vals = {}
            for c in CSV_COLUMNS:
                s = rec[c]
                vals[c] = None if s == "" else (int(s) if c in ("iteration", "cells", "dofs") else float(s))
            out.append(ConvergenceRow(**vals))
    return out


def write_outputs(history, out_dir, adapter=None, vtk: bool = True) -> Path:
    """Write ``convergence.csv``, ``summary.json`` and one ``mesh_NNN.vtk`` per iteration."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(history, out / "convergence.csv")
    records = getattr(history, "records", [])
    if vtk and adapter is not None:
        for row, rec in zip(history, records):
            point, cell = adapter.fields(rec.state, rec.report)
            write_vtk(out / f"mesh_{row.iteration:03d}.vtk", rec.mesh, point, cell,
                      title=f"iteration {row.iteration}")
    summary = {"status": getattr(history, "status", None), "iterations": len(history),
               "reference_value": getattr(history, "reference_value", None),
               "reference_dofs": getattr(history, "reference_dofs", None),
               "model_error": getattr(history, "model_error", None),
               "rows": [asdict(r) for r in history]}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return out
