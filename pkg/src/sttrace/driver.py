"""Time-marching driver, diagnostics and convergence studies.

The solution is computed slab by slab: build (or reuse) the refined slab
mesh, reconstruct the cut geometry, assemble the stabilized system with
the upwind coupling to the previous slab, and solve.  Per-node surface
masses and per-slab surface means are recorded on the fly; error norms
against a known exact solution and mesh-refinement studies are provided
on top.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import problems as prb
from .assembly import (SlabSystem, assemble_slab, slab_slice,
                       surface_integral_vector, symmetric_part_min_eig)
from .cutgeom import SlabGeometry, build_slice, build_slab_geometry
from .errors import SolverError
from .fespace import FEFunctionSlab, TimeSlab, build_dof_map, element_dofs, eval_fe_function
from .linalg import solve
from .mesh import TimePartition, kuhn_box_mesh, refine_near_interface
from .problems import ProblemDefinition
from .quadrature import gauss_legendre_interval

log = logging.getLogger("sttrace")


@dataclass
class Discretization:
    level: int
    n_slabs: int
    h0: float = 2.0
    quad_order: int = 2
    band_factor: float = 0.5

    @property
    def h(self) -> float:
        return self.h0 * 0.5 ** self.level


@dataclass
class SolverOptions:
    method: str = "gmres"
    tol: float = 1e-10
    maxit: int = 500


@dataclass
class SigmaPolicy:
    """How to pick the mean-value stabilization parameter."""

    mode: str = "zero"          # "theorem1" | "value" | "zero"
    value: float | None = None

    def resolve(self, problem: ProblemDefinition) -> float:
        if self.mode == "zero":
            return 0.0
        if self.mode == "value":
            if self.value is None or self.value < 0:
                raise ValueError("sigma value must be a number >= 0")
            return float(self.value)
        if self.mode == "theorem1":
            try:
                return prb.default_sigma(problem)
            except ValueError:
                if problem.sigma_hint is not None:
                    return float(problem.sigma_hint)
                raise
        raise ValueError(f"unknown sigma mode {self.mode!r}")


@dataclass
class SolutionTrajectory:
    problem: ProblemDefinition
    disc: Discretization
    sigma: float
    slabs: list[FEFunctionSlab]
    masses: np.ndarray              # (N+1,) surface mass at the time nodes
    slab_mean_times: np.ndarray     # (N, 2) Gauss times per slab
    slab_means: np.ndarray          # (N, 2) surface mean integral at those times
    gauss_weights: np.ndarray       # (N, 2)
    solver_stats: list
    slab_diagnostics: list
    runtime_seconds: float = 0.0
    errors: dict | None = None

    @property
    def n_slabs(self) -> int:
        return len(self.slabs)

    def mass_loss(self) -> float:
        return float(self.masses[0] - self.masses[-1])


def build_slab(mesh_base, problem, n, t0, t1, disc) -> TimeSlab:
    mesh = refine_near_interface(mesh_base, problem.phi, (t0, 0.5 * (t0 + t1), t1),
                                 disc.level, disc.band_factor)
    geo = build_slab_geometry(mesh, problem, t0, t1, disc.quad_order)
    dofmap = build_dof_map(mesh, geo.cut_elements)
    return TimeSlab(n=n, t0=t0, t1=t1, mesh=mesh, geometry=geo, dofmap=dofmap)


def _shift_slab(slab: TimeSlab, n: int, t0: float, t1: float) -> TimeSlab:
    """Reuse a stationary slab's mesh/geometry for a later time interval."""
    geo = slab.geometry
    pts = geo.quad.points.copy()
    pts[:, -1] += t0 - geo.t0
    quad = dataclasses.replace(geo.quad, points=pts)
    geo2 = dataclasses.replace(geo, t0=t0, t1=t1, quad=quad)
    return TimeSlab(n=n, t0=t0, t1=t1, mesh=slab.mesh, geometry=geo2,
                    dofmap=slab.dofmap)


def march(problem: ProblemDefinition, disc: Discretization,
          sigma: SigmaPolicy | float = 0.0,
          solver: SolverOptions | None = None,
          threads: int = 1,
          keep_geometry: bool = True,
          on_slab=None) -> SolutionTrajectory:
    """Solve the problem over all time slabs.

    sigma may be a SigmaPolicy or a plain number.  on_slab, when given, is
    called as on_slab(slab, system, fe_function) after each solve (used for
    per-slab diagnostics without retaining every system).
    """
    tic = time.perf_counter()
    solver = solver or SolverOptions()
    sigma_val = sigma.resolve(problem) if isinstance(sigma, SigmaPolicy) else float(sigma)
    part = TimePartition(problem.t_final, disc.n_slabs)
    base = kuhn_box_mesh(problem.box, disc.h0)

    slabs: list[FEFunctionSlab] = []
    masses = np.zeros(disc.n_slabs + 1)
    mean_times = np.zeros((disc.n_slabs, 2))
    means = np.zeros((disc.n_slabs, 2))
    gweights = np.zeros((disc.n_slabs, 2))
    stats, diags = [], []
    prev: FEFunctionSlab | None = None
    slab0: TimeSlab | None = None

    for n in range(disc.n_slabs):
        t0, t1 = part.interval(n)
        try:
            if problem.stationary and slab0 is not None:
                slab = _shift_slab(slab0, n, t0, t1)
            else:
                slab = build_slab(base, problem, n, t0, t1, disc)
                if problem.stationary:
                    slab0 = slab
            system = assemble_slab(slab, problem, sigma_val, prev,
                                   quad_order=disc.quad_order, threads=threads)
            coeffs, st = solve(system, method=solver.method,
                               tol=solver.tol, maxit=solver.maxit)
        except Exception as exc:
            raise type(exc)(f"slab {n + 1}/{disc.n_slabs} "
                            f"[{t0:.4g}, {t1:.4g}]: {exc}").with_traceback(
                exc.__traceback__) from None
        fn = FEFunctionSlab(slab=slab, coeffs=coeffs)

        if n == 0:
            bottom = slab_slice(slab, problem, t0, disc.quad_order)
            m_b = surface_integral_vector(slab, bottom, t0)
            v0 = np.zeros(slab.dofmap.n_dofs)
            v0[0::2] = problem.u0(slab.mesh.vertices[slab.dofmap.vertices])
            masses[0] = m_b @ v0
        top = slab_slice(slab, problem, t1, disc.quad_order)
        m_t = surface_integral_vector(slab, top, t1)
        masses[n + 1] = m_t @ coeffs

        tk, tau = gauss_legendre_interval(2, t0, t1)
        mean_times[n], gweights[n] = tk, tau
        # the stabilization vectors are the surface-integral functionals at
        # the Gauss times, unscaled, so they evaluate the slab means directly
        means[n] = system.rank_vectors.T @ coeffs

        if on_slab is not None:
            on_slab(slab, system, fn)
        if not keep_geometry:
            slab.geometry = None
        stats.append(st)
        diags.append(system.diagnostics)
        slabs.append(fn)
        prev = fn
        log.info("slab %d/%d: %d dofs, %d cut elements, mass %.6g",
                 n + 1, disc.n_slabs, system.diagnostics["n_dofs"],
                 system.diagnostics["n_cut_elements"], masses[n + 1])

    return SolutionTrajectory(problem=problem, disc=disc, sigma=sigma_val,
                              slabs=slabs, masses=masses,
                              slab_mean_times=mean_times, slab_means=means,
                              gauss_weights=gweights, solver_stats=stats,
                              slab_diagnostics=diags,
                              runtime_seconds=time.perf_counter() - tic)


def mass(traj: SolutionTrajectory, n: int) -> float:
    """Surface mass at time node n (0 uses the initial-data interpolant)."""
    return float(traj.masses[n])


def _slice_values(fn: FEFunctionSlab, sq, t) -> np.ndarray:
    """FE values at slice points of the function's own slab (fast path)."""
    from .assembly import _element_inverses, _slice_local_values

    slab = fn.slab
    pe, V = _slice_local_values(slab, _element_inverses(slab), sq, t)
    dofs = element_dofs(slab.dofmap, slab.mesh, slab.geometry.cut_elements)
    return (V * fn.coeffs[dofs[pe]]).sum(axis=1)


def eval_solution(traj: SolutionTrajectory, x, t: float, side: str = "-"):
    """Evaluate the trajectory at points; side picks the slab at the nodes."""
    nodes = TimePartition(traj.problem.t_final, traj.disc.n_slabs).nodes
    if side == "-":
        n = int(np.searchsorted(nodes, t, side="left")) - 1
    elif side == "+":
        n = int(np.searchsorted(nodes, t, side="right")) - 1
    else:
        raise ValueError("side must be '-' or '+'")
    n = min(max(n, 0), traj.n_slabs - 1)
    return eval_fe_function(traj.slabs[n], x, t)


def error_norms(traj: SolutionTrajectory, problem: ProblemDefinition | None = None) -> dict:
    """Error norms against the exact solution (geometry must be retained).

    LinfL2: max over nodes of the surface L2 error of the upper trace.
    L2H1: tangential-gradient error over the space-time quadrature.
    Jump and final-time terms of the mesh-dependent norm are also reported.
    """
    problem = problem or traj.problem
    if problem.exact is None:
        raise ValueError("problem has no exact solution")
    node_l2 = np.zeros(traj.n_slabs)
    l2h1_sq = 0.0
    jumps_sq = np.zeros(traj.n_slabs)
    final_sq = 0.0
    h_fd = 1e-5 * float(np.linalg.norm(problem.box[:, 1] - problem.box[:, 0]))

    for n, fn in enumerate(traj.slabs):
        slab = fn.slab
        if slab.geometry is None:
            raise ValueError("geometry was dropped; rerun march(keep_geometry=True)")
        d = slab.mesh.d
        top = slab_slice(slab, problem, slab.t1, traj.disc.quad_order)
        uh_top = _slice_values(fn, top, slab.t1)
        uex_top = np.asarray(problem.exact(top.points, slab.t1), dtype=float)
        node_l2[n] = np.sqrt(float(top.weights @ (uh_top - uex_top) ** 2))

        bottom = slab_slice(slab, problem, slab.t0, traj.disc.quad_order)
        uh_plus = _slice_values(fn, bottom, slab.t0)
        if n == 0:
            u_minus = np.asarray(problem.u0(bottom.points), dtype=float)
        else:
            u_minus = eval_fe_function(traj.slabs[n - 1], bottom.points, slab.t0)
        jumps_sq[n] = float(bottom.weights @ (uh_plus - u_minus) ** 2)
        if n == traj.n_slabs - 1:
            final_sq = float(top.weights @ uh_top ** 2)

        q = slab.geometry.quad
        if len(q.weights):
            from .assembly import _element_inverses, _local_arrays

            pe = np.searchsorted(slab.geometry.cut_elements, q.element)
            _, V, G, _ = _local_arrays(slab, _element_inverses(slab), pe, q.points)
            dofs = element_dofs(slab.dofmap, slab.mesh, slab.geometry.cut_elements)
            c = fn.coeffs[dofs[pe]]
            guh = (G * c[:, :, None]).sum(axis=1)
            x, t = q.points[:, :d], q.points[:, d]
            if problem.exact_grad is not None:
                gex = np.asarray(problem.exact_grad(x, t), dtype=float)
            else:
                gex = _fd_gradient(problem.exact, x, t, h_fd)
            diff = gex - guh
            pdiff = diff - q.normals * (q.normals * diff).sum(1)[:, None]
            l2h1_sq += float(q.weights @ (pdiff ** 2).sum(1))

    return {
        "linf_l2": float(node_l2.max()),
        "l2_h1": float(np.sqrt(l2h1_sq)),
        "node_l2": node_l2,
        "jump_sq_sum": float(jumps_sq.sum()),
        "final_sq": final_sq,
    }


def _fd_gradient(fn, x, t, h):
    d = x.shape[1]
    g = np.empty_like(x)
    for k in range(d):
        dp = np.zeros(d)
        dp[k] = h
        g[:, k] = (np.asarray(fn(x + dp, t)) - np.asarray(fn(x - dp, t))) / (2 * h)
    return g


def mass_conservation_check(traj: SolutionTrajectory) -> dict:
    """Residuals of the discrete mass identities.

    For a source-free run the expected node masses and per-slab mean-value
    time integrals all equal the initial mass.
    """
    expected = traj.masses[0]
    node = np.abs(traj.masses[1:] - expected)
    dt = traj.problem.t_final / traj.n_slabs
    slab_int = np.abs((traj.gauss_weights * traj.slab_means).sum(axis=1) - expected * dt)
    return {"node_identity_residuals": node,
            "slab_integral_residuals": slab_int,
            "mass_loss": traj.mass_loss()}


@dataclass
class ConvergenceRow:
    level: int
    h: float
    n_slabs: int
    linf_l2: float
    l2_h1: float
    eoc_linf_l2: float | None = None
    eoc_l2_h1: float | None = None


def fit_eoc(hs, errors) -> float:
    """Least-squares convergence order over a whole refinement sequence."""
    hs, errors = np.asarray(hs, dtype=float), np.asarray(errors, dtype=float)
    if len(hs) < 2:
        raise ValueError("need at least two levels")
    slope, _ = np.polyfit(np.log(hs), np.log(errors), 1)
    return float(slope)


def convergence_study(problem: ProblemDefinition, levels, dt_over_h: float = 1.0,
                      h0: float = 2.0, quad_order: int = 2,
                      solver: SolverOptions | None = None,
                      sigma: SigmaPolicy | float | None = None) -> list[ConvergenceRow]:
    """Refinement study with dt ~ h: both are halved from level to level."""
    levels = list(levels)
    if not levels:
        raise ValueError("empty level range")
    rows: list[ConvergenceRow] = []
    for l in levels:
        h = h0 * 0.5 ** l
        n_slabs = max(1, round(problem.t_final / (dt_over_h * h)))
        disc = Discretization(level=l, n_slabs=n_slabs, h0=h0, quad_order=quad_order)
        sig = sigma if sigma is not None else SigmaPolicy("theorem1")
        traj = march(problem, disc, sigma=sig, solver=solver)
        err = error_norms(traj)
        rows.append(ConvergenceRow(level=l, h=h, n_slabs=n_slabs,
                                   linf_l2=err["linf_l2"], l2_h1=err["l2_h1"]))
        log.info("level %d: h=%.4g N=%d LinfL2=%.4e L2H1=%.4e",
                 l, h, n_slabs, err["linf_l2"], err["l2_h1"])
    for prev_row, row in zip(rows, rows[1:]):
        row.eoc_linf_l2 = float(np.log2(prev_row.linf_l2 / row.linf_l2))
        row.eoc_l2_h1 = float(np.log2(prev_row.l2_h1 / row.l2_h1))
    return rows


def sample_surface_points(problem: ProblemDefinition, times, level: int = 2,
                          h0: float = 2.0) -> list[tuple[float, np.ndarray]]:
    """Near-surface sample sets (slice quadrature points) at given times."""
    base = kuhn_box_mesh(problem.box, h0)
    out = []
    for t in times:
        mesh = refine_near_interface(base, problem.phi, (t,), level)
        sq = build_slice(mesh, problem.phi, t)
        out.append((float(t), sq.points))
    return out


def ellipticity_report(problem: ProblemDefinition, disc: Discretization,
                       sigma: SigmaPolicy | float, solver: SolverOptions | None = None,
                       n_random: int = 100, seed: int = 0) -> dict:
    """Per-slab min eigenvalue of the symmetrized matrix + random positivity."""
    rng = np.random.default_rng(seed)
    eigs: list[float] = []
    quad_pos: list[bool] = []

    def check(slab, system: SlabSystem, fn):
        eigs.append(symmetric_part_min_eig(system))
        from .linalg import degenerate_rows, rank_update_apply

        keep = ~degenerate_rows(system.matrix, system.rank_vectors, system.rank_coefs)
        ok = True
        for _ in range(n_random):
            u = np.zeros(system.matrix.shape[0])
            u[keep] = rng.standard_normal(int(keep.sum()))
            if not u.any():
                continue
            bu = system.matrix @ u + rank_update_apply(system.rank_vectors,
                                                       system.rank_coefs, u)
            ok = ok and float(u @ bu) > 0
        quad_pos.append(ok)

    march(problem, disc, sigma=sigma, solver=solver, keep_geometry=False,
          on_slab=check)
    return {"min_eigs": np.asarray(eigs),
            "all_quadratic_forms_positive": all(quad_pos)}
