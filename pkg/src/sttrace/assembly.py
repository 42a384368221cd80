"""Per-slab assembly of the stabilized space-time trace FEM system.

The slab matrix is M + A + D (+ the low-rank mean-value stabilization S
kept separate):

  M_ij = sum_q w_q (dphi_j/dt + w . grad phi_j)(q) phi_i(q)
  A_ij = sum_q w_q [ nu (P grad phi_j).(P grad phi_i) + div_G w phi_j phi_i ](q)
  D_ij = sum over bottom-slice quadrature of phi_j phi_i at t0+
  S    = sigma * sum_k tau_k m_k m_k^T,  (m_k)_i = integral of phi_i over
         the reconstructed surface at the 2-point Gauss times t_k

with P = I - n n^T from the analytic normal.  The right-hand side carries
the source term and the upwind coupling to the previous slab's trace
(pointwise initial data on the first slab).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import linalg
from .cutgeom import SliceQuadrature, build_slice
from .fespace import FEFunctionSlab, TimeSlab, element_dofs, eval_fe_function
from .problems import ProblemDefinition, surface_divergence_wind
from .quadrature import gauss_legendre_interval

_CHUNK = 100_000


@dataclass
class SlabSystem:
    """Sparse slab matrix, low-rank stabilization, rhs and diagnostics."""

    matrix: sp.csr_matrix
    rank_vectors: np.ndarray      # (ndof, k)
    rank_coefs: np.ndarray        # (k,)
    rhs: np.ndarray
    dofmap: object
    diagnostics: dict = field(default_factory=dict)


def _local_arrays(slab: TimeSlab, inv_a, pe, points):
    """Per-point local dof values/gradients/time-derivatives.

    Returns (V, G, DT): V and DT of shape (q, L), G of shape (q, L, d),
    with the vertex-major local dof order (v0 bottom, v0 top, v1 bottom...).
    """
    mesh = slab.mesh
    d = mesh.d
    x, t = points[:, :d], points[:, d]
    aug = np.concatenate([np.ones((len(x), 1)), x], axis=1)
    lam = np.einsum("qij,qj->qi", inv_a[pe], aug)
    ghat = inv_a[pe][:, :, 1:]                                # (q, d+1, d)
    lb, lt = slab.time_basis(t)
    L = 2 * (d + 1)
    V = np.empty((len(x), L))
    DT = np.empty_like(V)
    G = np.empty((len(x), L, d))
    V[:, 0::2] = lam * lb[:, None]
    V[:, 1::2] = lam * lt[:, None]
    DT[:, 0::2] = lam * (-1.0 / slab.dt)
    DT[:, 1::2] = lam * (+1.0 / slab.dt)
    G[:, 0::2, :] = ghat * lb[:, None, None]
    G[:, 1::2, :] = ghat * lt[:, None, None]
    return lam, V, G, DT


def _slice_local_values(slab: TimeSlab, inv_a, sq: SliceQuadrature, t):
    """Local dof values at slice points for the time level weights of t."""
    if len(sq.points) == 0:
        L = 2 * (slab.mesh.d + 1)
        return np.empty((0,), dtype=np.int64), np.empty((0, L))
    pe = np.searchsorted(slab.geometry.cut_elements, sq.element)
    aug = np.concatenate([np.ones((len(sq.points), 1)), sq.points], axis=1)
    lam = np.einsum("qij,qj->qi", inv_a[pe], aug)
    lb, lt = slab.time_basis(t)
    V = np.empty((len(sq.points), 2 * (slab.mesh.d + 1)))
    V[:, 0::2] = lam * lb
    V[:, 1::2] = lam * lt
    return pe, V


def slab_slice(slab: TimeSlab, problem, tstar: float, order: int = 2) -> SliceQuadrature:
    """Surface slice at tstar restricted to the slab's cut elements."""
    return build_slice(slab.mesh, problem.phi, tstar, order=order,
                       elements=slab.geometry.cut_elements,
                       sub_coords=slab.geometry.sub_coords,
                       value_scale=slab.geometry.value_scale)


def surface_integral_vector(slab: TimeSlab, sq: SliceQuadrature, t, inv_a=None) -> np.ndarray:
    """Vector m with m_i = integral of basis function i over the slice."""
    if inv_a is None:
        inv_a = _element_inverses(slab)
    pe, V = _slice_local_values(slab, inv_a, sq, t)
    m = np.zeros(slab.dofmap.n_dofs)
    if len(pe):
        dofs = element_dofs(slab.dofmap, slab.mesh, slab.geometry.cut_elements)
        np.add.at(m, dofs[pe].ravel(), (sq.weights[:, None] * V).ravel())
    return m


def _element_inverses(slab: TimeSlab) -> np.ndarray:
    coords = slab.mesh.element_coords(slab.geometry.cut_elements)
    A = np.concatenate([np.ones(coords.shape[:2])[..., None], coords], axis=2)
    return np.linalg.inv(np.swapaxes(A, 1, 2))


def assemble_slab(slab: TimeSlab, problem: ProblemDefinition, sigma: float,
                  prev: FEFunctionSlab | None, quad_order: int = 2,
                  threads: int = 1) -> SlabSystem:
    """Assemble the slab system; prev = None uses pointwise initial data.

    Element contributions are accumulated in a fixed (element-index) order,
    so serial runs are bit-reproducible.
    """
    tic = time.perf_counter()
    mesh, geo, dofmap = slab.mesh, slab.geometry, slab.dofmap
    d = mesh.d
    L = 2 * (d + 1)
    cut = geo.cut_elements
    n_cut = len(cut)
    dofs = element_dofs(dofmap, mesh, cut)                    # (C, L)
    inv_a = _element_inverses(slab)

    acc = np.zeros((n_cut, L, L))
    rhs_acc = np.zeros((n_cut, L))

    q = geo.quad
    pe_all = np.searchsorted(cut, q.element)
    nu = problem.nu_d

    def chunk_contrib(sl):
        pts, w = q.points[sl], q.weights[sl]
        pe, n = pe_all[sl], q.normals[sl]
        x, t = pts[:, :d], pts[:, d]
        _, V, G, DT = _local_arrays(slab, inv_a, pe, pts)
        wind = np.asarray(problem.wind(x, t), dtype=float)
        divw = surface_divergence_wind(problem, x, t)
        fval = np.asarray(problem.source(x, t), dtype=float)
        MD = DT + np.einsum("qd,qld->ql", wind, G)
        PG = G - n[:, None, :] * np.einsum("qd,qld->ql", n, G)[:, :, None]
        contrib = np.einsum("q,qi,qj->qij", w, V, MD)
        contrib += nu * np.einsum("q,qid,qjd->qij", w, PG, PG)
        contrib += np.einsum("q,qi,qj->qij", w * divw, V, V)
        return pe, contrib, (w * fval)[:, None] * V

    chunks = [slice(lo, lo + _CHUNK) for lo in range(0, len(q.weights), _CHUNK)]
    if threads > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(chunk_contrib, chunks))
    else:
        results = map(chunk_contrib, chunks)
    # merge in chunk order: deterministic regardless of worker scheduling
    for pe, contrib, rhs_part in results:
        np.add.at(acc, pe, contrib)
        np.add.at(rhs_acc, pe, rhs_part)

    # upwind jump: bottom-slice mass matrix and coupling to previous trace
    bottom = slab_slice(slab, problem, slab.t0, order=quad_order)
    pe_b, Vb = _slice_local_values(slab, inv_a, bottom, slab.t0)
    if len(pe_b):
        np.add.at(acc, pe_b, np.einsum("q,qi,qj->qij", bottom.weights, Vb, Vb))
        if prev is None:
            uprev = np.asarray(problem.u0(bottom.points), dtype=float)
        else:
            uprev = eval_fe_function(prev, bottom.points, prev.slab.t1)
        np.add.at(rhs_acc, pe_b, (bottom.weights * uprev)[:, None] * Vb)

    # mean-value stabilization: 2-point Gauss in time, one slice each
    tk, tau = gauss_legendre_interval(2, slab.t0, slab.t1)
    rank_vectors = np.zeros((dofmap.n_dofs, len(tk)))
    for k, t_k in enumerate(tk):
        sq = slab_slice(slab, problem, float(t_k), order=quad_order)
        rank_vectors[:, k] = surface_integral_vector(slab, sq, float(t_k), inv_a)
    rank_coefs = sigma * tau

    rows = np.repeat(dofs[:, :, None], L, axis=2).ravel()
    cols = np.repeat(dofs[:, None, :], L, axis=1).ravel()
    matrix = sp.coo_matrix((acc.ravel(), (rows, cols)),
                           shape=(dofmap.n_dofs, dofmap.n_dofs)).tocsr()
    matrix.sum_duplicates()
    rhs = np.zeros(dofmap.n_dofs)
    np.add.at(rhs, dofs.ravel(), rhs_acc.ravel())

    diag = {
        "n_cut_elements": int(n_cut),
        "n_quad_points": int(len(q.weights)),
        "n_dofs": int(dofmap.n_dofs),
        "assembly_seconds": time.perf_counter() - tic,
    }
    return SlabSystem(matrix=matrix, rank_vectors=rank_vectors,
                      rank_coefs=np.asarray(rank_coefs, dtype=float),
                      rhs=rhs, dofmap=dofmap, diagnostics=diag)


def symmetric_part_min_eig(system: SlabSystem, restrict: bool = True) -> float:
    """Smallest eigenvalue of the symmetrized system matrix.

    With restrict=True the matrix is reduced to the non-degenerate dofs
    (rows that the solver would not replace by identity rows).
    """
    B = system.matrix.toarray()
    if system.rank_vectors.size:
        B = B + (system.rank_vectors * system.rank_coefs) @ system.rank_vectors.T
    if restrict:
        keep = ~linalg.degenerate_rows(system.matrix, system.rank_vectors,
                                       system.rank_coefs)
        B = B[np.ix_(keep, keep)]
    if B.size == 0:
        return np.nan
    S = 0.5 * (B + B.T)
    return float(scipy.linalg.eigh(S, eigvals_only=True, subset_by_index=[0, 0])[0])


def dump_matrix(system: SlabSystem, path) -> None:
    """Write the sparse part in Matrix Market text format (debug aid)."""
    from scipy.io import mmwrite

    mmwrite(str(path), system.matrix)
