"""Reconstruction of the discrete space-time manifold and cut quadrature.

Per spatial element and time slab, the prism element x (t0, t1) is handled
as follows: the element is regularly refined once (geometry resolution only;
the FE space stays on the unrefined element), every child prism is split
into d+1 simplices of dimension d+1 by the sorted-vertex staircase rule
(4 pentatopes per child tetrahedron in 3D, 3 tetrahedra per child triangle
in 2D), and on each such simplex the linear interpolant of the level-set
function is cut.  The zero level inside one simplex is a convex polytope
determined by the sign pattern of the vertex values; it is triangulated and
equipped with a mapped simplex quadrature rule.

Weights carry the measure correction |grad_x phi_lin| / |grad_(x,t) phi_lin|
(constant per simplex), so that summing weight * f(point) approximates the
iterated integral ds dt rather than the space-time surface measure.

Diagonal choices are driven everywhere by the global vertex ordering, so
decompositions of adjacent prisms match on shared facets.

All heavy paths are vectorized over batches of simplices; the scalar
single-element operations wrap the same kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularGeometryError
from .mesh import _CHILDREN_LOCAL, _EDGE_LOCAL, SpatialMesh
from .quadrature import simplex_measure, simplex_rule

_GRAD_EPS2 = 1e-24  # |grad phi|^2 below this is treated as an exact zero


def _key_sorted_children(d: int) -> np.ndarray:
    """Child connectivity with each child's vertices in global-key order.

    Sub-vertex keys: parent i -> (i, i); midpoint of parents (i, j) -> (i, j).
    With parent labels sorted by global index this ordering is intrinsic, so
    adjacent elements order shared sub-vertices identically.
    """
    keys = [(i, i) for i in range(d + 1)] + list(_EDGE_LOCAL[d])
    children = []
    for child in _CHILDREN_LOCAL[d]:
        children.append(sorted(child, key=lambda c: keys[c]))
    return np.asarray(children)


def _sub_weights(d: int) -> np.ndarray:
    """Matrix mapping parent vertex coords to sub-vertex coords."""
    n_par = d + 1
    edges = _EDGE_LOCAL[d]
    w = np.zeros((n_par + len(edges), n_par))
    w[:n_par, :n_par] = np.eye(n_par)
    for k, (i, j) in enumerate(edges):
        w[n_par + k, i] = w[n_par + k, j] = 0.5
    return w


def _prism_slots(d: int, refine: bool) -> np.ndarray:
    """Space-time simplex connectivity as (sub_vertex, level) slot ids.

    Slot id = sub_index + n_sub * level with level 0 = bottom, 1 = top.
    Each child prism is split by the staircase rule: simplex k uses the
    bottom copies of child vertices 0..k and top copies of k..d.
    """
    children = _key_sorted_children(d) if refine else np.arange(d + 1)[None, :]
    n_sub = (d + 1 + len(_EDGE_LOCAL[d])) if refine else d + 1
    slots = []
    for child in children:
        for k in range(d + 1):
            bottom = [child[i] for i in range(k + 1)]
            top = [child[i] + n_sub for i in range(k, d + 1)]
            slots.append(bottom + top)
    return np.asarray(slots)


_SUB_W = {2: _sub_weights(2), 3: _sub_weights(3)}
_CHILDREN_KEYED = {2: _key_sorted_children(2), 3: _key_sorted_children(3)}
_SLOTS = {2: _prism_slots(2, True), 3: _prism_slots(3, True)}
_SLOTS_BARE = {2: _prism_slots(2, False), 3: _prism_slots(3, False)}


class _Case:
    __slots__ = ("mino", "majo", "pieces")

    def __init__(self, mino, majo, pieces):
        self.mino = np.asarray(mino)
        self.majo = np.asarray(majo)
        self.pieces = [np.asarray(p) for p in pieces]


def _marching_tables(nv: int) -> dict[int, _Case]:
    """Sign-pattern case table for a simplex with nv vertices.

    Cut points live on minority-majority edges, ordered as the flattened
    (minority, majority) grid.  A 1-k split yields one simplex; a 2-(nv-2)
    split yields the staircase triangulation of the prism-like polytope.
    """
    tables = {}
    for code in range(1, 2 ** nv - 1):
        neg = [i for i in range(nv) if code >> i & 1]
        pos = [i for i in range(nv) if not code >> i & 1]
        mino, majo = (neg, pos) if len(neg) <= len(pos) else (pos, neg)
        mm = len(majo)
        if len(mino) == 1:
            pieces = [list(range(mm))]
        else:
            pieces = [list(range(j + 1)) + [mm + i for i in range(j, mm)]
                      for j in range(mm)]
        tables[code] = _Case(mino, majo, pieces)
    return tables


_TABLES = {nv: _marching_tables(nv) for nv in (3, 4, 5)}


def _sanitize(vals: np.ndarray) -> np.ndarray:
    """Clamp level-set values to finite range (singular fields spike at poles)."""
    return np.clip(np.nan_to_num(vals, nan=0.0, posinf=1e15, neginf=-1e15),
                   -1e15, 1e15)


def _value_scale(vals: np.ndarray) -> np.ndarray:
    """Per-simplex magnitude for the degeneracy threshold.

    The median of |values| tracks h * |grad phi| near the cut but ignores
    spikes of singular level sets (poles deep inside a body), which would
    otherwise inflate the threshold and flip genuine signs.
    """
    flat = np.abs(vals).reshape(len(vals), -1)
    return np.median(flat, axis=1)


def _perturb(vals: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Push near-zero vertex values to +eps (deterministic sign convention)."""
    eps = 1e-12 * scale[:, None]
    return np.where(np.abs(vals) < eps, eps, vals)


def _extract_pieces(verts, vals, scale):
    """Cut a batch of simplices by the linear interpolant of their values.

    verts: (S, nv, m); vals: (S, nv); scale: (S,) value magnitude for the
    degeneracy perturbation.  Returns (piece_verts (P, nv-1, m),
    piece_parent (P,) indices into the batch).
    """
    S, nv, m = verts.shape
    if S == 0:
        return np.empty((0, nv - 1, m)), np.empty(0, dtype=np.int64)
    v = _perturb(vals, scale)
    code = ((v < 0) @ (1 << np.arange(nv))).astype(np.int64)
    out_v, out_p = [], []
    for c in np.unique(code):
        if c == 0 or c == 2 ** nv - 1:
            continue
        rows = np.nonzero(code == c)[0]
        case = _TABLES[nv][int(c)]
        va = v[rows][:, case.mino]
        vb = v[rows][:, case.majo]
        theta = va[:, :, None] / (va[:, :, None] - vb[:, None, :])
        pa = verts[rows][:, case.mino][:, :, None, :]
        pb = verts[rows][:, case.majo][:, None, :, :]
        pts = (pa + theta[..., None] * (pb - pa)).reshape(len(rows), -1, m)
        for piece in case.pieces:
            out_v.append(pts[:, piece, :])
            out_p.append(rows)
    if not out_v:
        return np.empty((0, nv - 1, m)), np.empty(0, dtype=np.int64)
    return np.concatenate(out_v), np.concatenate(out_p)


def _affine_gradients(verts, vals):
    """Gradient of the affine interpolant per full-dimensional simplex.

    verts (S, m+1, m), vals (S, m+1) -> grads (S, m).
    """
    A = np.concatenate([np.ones(verts.shape[:2])[..., None], verts], axis=2)
    coef = np.linalg.solve(A, vals[..., None])[..., 0]
    return coef[:, 1:]


@dataclass
class SpaceTimeSimplex:
    """A (d+1)-simplex of a prism decomposition, vertices in R^(d+1)."""

    verts: np.ndarray           # (d+2, d+1), columns = spatial coords then t
    values: np.ndarray | None   # level-set values at the vertices
    prism: int                  # owning child-prism id

    def measure(self) -> float:
        return float(simplex_measure(self.verts[None])[0])


@dataclass
class CutPolytope:
    """Zero level of the linear interpolant inside one space-time simplex."""

    verts: np.ndarray           # (n_cut, d+1), ordered as the (mino, majo) grid
    grid: tuple[int, int]       # (len(minority), len(majority))


@dataclass
class CutQuadrature:
    """Quadrature for integrals of the form  integral integral f ds dt."""

    points: np.ndarray          # (Q, d+1) with trailing time coordinate
    weights: np.ndarray         # (Q,) positive, ds dt corrected
    normals: np.ndarray         # (Q, d) exact spatial unit normals
    normal_velocity: np.ndarray  # (Q,) w . n at the points
    element: np.ndarray         # (Q,) owning spatial element id


@dataclass
class SliceQuadrature:
    """Surface quadrature on the reconstructed zero level at a fixed time."""

    tstar: float
    points: np.ndarray          # (Q, d)
    weights: np.ndarray         # (Q,) spatial surface measure
    element: np.ndarray         # (Q,) owning spatial element id
    piece_verts: np.ndarray     # (P, d, d) reconstructed facet vertices
    piece_element: np.ndarray   # (P,)

    def total(self) -> float:
        return float(self.weights.sum())


@dataclass
class SlabGeometry:
    """Cut data of one slab: active elements and the ds dt quadrature."""

    t0: float
    t1: float
    cut_elements: np.ndarray     # (C,) mesh element ids with a sign change
    quad: CutQuadrature
    sub_coords: np.ndarray       # (C, n_sub, d) sub-vertices per cut element
    value_scale: np.ndarray      # (C,) max |phi| over each element prism
    piece_verts: np.ndarray      # (P, d+1, d+1) manifold pieces
    piece_element: np.ndarray    # (P,) mesh element id per piece
    piece_measures: np.ndarray   # (P,) space-time surface measure per piece

    @property
    def n_quad(self) -> int:
        return len(self.quad.weights)


def _ordered_parents(mesh: SpatialMesh, elem_ids):
    """Element vertex coords with columns already in global-index order."""
    return mesh.vertices[mesh.elements[elem_ids]]


def _candidate_elements(mesh, phi, times):
    vals = _sanitize(np.stack([np.asarray(phi(mesh.vertices, t), float) for t in times], 1))
    ev = vals[mesh.elements]
    sign_change = (ev.min(axis=(1, 2)) < 0) & (ev.max(axis=(1, 2)) > 0)
    near = np.abs(ev).min(axis=(1, 2)) <= mesh.diameters()
    return np.nonzero(sign_change | near)[0]


def _eval_field(fn, x, t):
    """Evaluate a space-time field on points with a per-point time column."""
    return np.asarray(fn(x, t), dtype=float)


def normals_and_velocity(fields, x, t):
    """Exact unit normals and normal velocity from the analytic level set."""
    g = _eval_field(fields.grad_phi, x, t)
    g2 = (g ** 2).sum(axis=1)
    bad = g2 < _GRAD_EPS2
    if np.any(bad):
        i = int(np.nonzero(bad)[0][0])
        raise SingularGeometryError(
            f"level-set gradient vanished at x={x[i]}, t={np.atleast_1d(t)[min(i, np.atleast_1d(t).size - 1)]}")
    n = g / np.sqrt(g2)[:, None]
    w = _eval_field(fields.wind, x, t)
    wn = (w * n).sum(axis=1)
    return n, wn


def build_slab_geometry(mesh: SpatialMesh, fields, t0: float, t1: float,
                        order: int = 2) -> SlabGeometry:
    """Reconstruct the discrete manifold inside the slab and its quadrature."""
    d = mesh.d
    cand = _candidate_elements(mesh, fields.phi, (t0, 0.5 * (t0 + t1), t1))
    sub_all = np.einsum("sp,cpd->csd", _SUB_W[d], _ordered_parents(mesh, cand))
    flat = sub_all.reshape(-1, d)
    n_sub_all = sub_all.shape[1]
    vals = _sanitize(np.stack([
        _eval_field(fields.phi, flat, t0).reshape(len(cand), n_sub_all),
        _eval_field(fields.phi, flat, t1).reshape(len(cand), n_sub_all),
    ], axis=1))                                            # (C, 2, n_sub)
    scale = _value_scale(vals)
    eps = 1e-12 * scale
    pert = np.where(np.abs(vals) < eps[:, None, None], eps[:, None, None], vals)
    cut_mask = (pert.min(axis=(1, 2)) < 0) & (pert.max(axis=(1, 2)) > 0)
    cut = cand[cut_mask]
    sub = sub_all[cut_mask]
    vals = vals[cut_mask]
    scale = scale[cut_mask]

    slots = _SLOTS[d]
    n_sub = sub.shape[1]
    st_coords = np.concatenate([
        np.concatenate([sub, np.full((len(cut), n_sub, 1), t0)], axis=2),
        np.concatenate([sub, np.full((len(cut), n_sub, 1), t1)], axis=2),
    ], axis=1)                                              # (C, 2*n_sub, d+1)
    st_vals = np.concatenate([vals[:, 0, :], vals[:, 1, :]], axis=1)

    sverts = st_coords[:, slots, :].reshape(-1, d + 2, d + 1)
    svals = st_vals[:, slots].reshape(-1, d + 2)
    sim_scale = np.repeat(scale, len(slots))

    piece_verts, parent = _extract_pieces(sverts, svals, sim_scale)
    meas = simplex_measure(piece_verts)
    piece_elem_local = parent // len(slots)
    geo_scale = (mesh.diameters(cut)[piece_elem_local] + (t1 - t0)) ** d
    keep = meas > 1e-14 * geo_scale
    piece_verts, parent, meas = piece_verts[keep], parent[keep], meas[keep]
    piece_elem_local = piece_elem_local[keep]

    if len(piece_verts):
        grads = _affine_gradients(sverts[parent], svals[parent])
        corr = np.sqrt((grads[:, :d] ** 2).sum(1) / (grads ** 2).sum(1))
    else:
        corr = np.empty(0)

    bary, rw = simplex_rule(d, order)
    pts = np.einsum("rb,pbm->prm", bary, piece_verts).reshape(-1, d + 1)
    w = (rw[None, :] * (meas * corr)[:, None]).ravel()
    pe_local = np.repeat(piece_elem_local, len(rw))
    x, t = pts[:, :d], pts[:, d]
    if len(pts):
        normals, wn = normals_and_velocity(fields, x, t)
    else:
        normals, wn = np.empty((0, d)), np.empty(0)
    cut_elem_global = cut
    quad = CutQuadrature(points=pts, weights=w, normals=normals,
                         normal_velocity=wn,
                         element=cut_elem_global[pe_local] if len(pts) else np.empty(0, np.int64))
    return SlabGeometry(t0=t0, t1=t1, cut_elements=cut, quad=quad,
                        sub_coords=sub, value_scale=scale,
                        piece_verts=piece_verts,
                        piece_element=cut_elem_global[piece_elem_local] if len(piece_verts) else np.empty(0, np.int64),
                        piece_measures=meas)


def build_slice(mesh: SpatialMesh, phi, tstar: float, order: int = 2,
                elements: np.ndarray | None = None,
                sub_coords: np.ndarray | None = None,
                value_scale: np.ndarray | None = None) -> SliceQuadrature:
    """Surface quadrature at a fixed time from the spatial P1 interpolant.

    Reconstruction runs on the same once-refined sub-simplices as the
    space-time decomposition, so a slice at a slab node reproduces exactly
    the boundary trace of the space-time reconstruction.
    """
    d = mesh.d
    if elements is None:
        elements = _candidate_elements(mesh, phi, (tstar,))
    elements = np.asarray(elements)
    if sub_coords is None:
        sub_coords = np.einsum("sp,cpd->csd", _SUB_W[d], _ordered_parents(mesh, elements))
    flat = sub_coords.reshape(-1, d)
    vals = _sanitize(_eval_field(phi, flat, tstar).reshape(len(elements), -1))
    if value_scale is None:
        value_scale = _value_scale(vals)

    children = _CHILDREN_KEYED[d]
    cverts = sub_coords[:, children, :].reshape(-1, d + 1, d)
    cvals = vals[:, children].reshape(-1, d + 1)
    cscale = np.repeat(value_scale, len(children))

    piece_verts, parent = _extract_pieces(cverts, cvals, cscale)
    meas = simplex_measure(piece_verts)
    pe_local = parent // len(children)
    geo_scale = mesh.diameters(elements)[pe_local] ** (d - 1)
    keep = meas > 1e-14 * geo_scale
    piece_verts, meas, pe_local = piece_verts[keep], meas[keep], pe_local[keep]

    bary, rw = simplex_rule(max(d - 1, 1), order)
    pts = np.einsum("rb,pbm->prm", bary, piece_verts).reshape(-1, d)
    w = (rw[None, :] * meas[:, None]).ravel()
    pe = np.repeat(pe_local, len(rw))
    return SliceQuadrature(tstar=tstar, points=pts, weights=w,
                           element=elements[pe] if len(pts) else np.empty(0, np.int64),
                           piece_verts=piece_verts,
                           piece_element=elements[pe_local] if len(piece_verts) else np.empty(0, np.int64))


def decompose_prism(coords, global_ids, t0: float, t1: float, phi=None,
                    refine: bool = True) -> list[SpaceTimeSimplex]:
    """Split element x (t0, t1) into space-time simplices.

    With refine=True the element is regularly refined once and each child
    prism is split by the staircase rule (the production path); with
    refine=False the bare prism is split directly into d+1 simplices.
    Vertex values of the linear level-set interpolant are attached when phi
    is given.
    """
    coords = np.asarray(coords, dtype=float)
    d = coords.shape[1]
    order = np.argsort(np.asarray(global_ids))
    coords = coords[order]
    if refine:
        sub = _SUB_W[d] @ coords
        slots = _SLOTS[d]
    else:
        sub = coords
        slots = _SLOTS_BARE[d]
    n_sub = len(sub)
    st = np.concatenate([
        np.concatenate([sub, np.full((n_sub, 1), t0)], axis=1),
        np.concatenate([sub, np.full((n_sub, 1), t1)], axis=1),
    ])
    out = []
    for k, slot in enumerate(slots):
        verts = st[slot]
        values = None
        if phi is not None:
            values = _eval_field(phi, verts[:, :d], verts[:, d])
        out.append(SpaceTimeSimplex(verts=verts, values=values, prism=k // (d + 1)))
    return out


def cut_simplex(s: SpaceTimeSimplex, value_scale: float | None = None) -> CutPolytope | None:
    """Zero level of the linear interpolant inside one space-time simplex.

    Returns None when all (perturbed) vertex values share a sign.  The
    polytope vertices are ordered as the flattened (minority, majority)
    cut-edge grid, which triangulate_polytope relies on.
    """
    if s.values is None:
        raise ValueError("cut_simplex needs vertex values")
    vals = _sanitize(np.asarray(s.values, dtype=float)[None, :])
    scale = _value_scale(vals) if value_scale is None else np.array([value_scale])
    v = _perturb(vals, scale)[0]
    nv = len(v)
    code = int(((v < 0) << np.arange(nv)).sum())
    if code == 0 or code == 2 ** nv - 1:
        return None
    case = _TABLES[nv][code]
    va, vb = v[case.mino], v[case.majo]
    theta = va[:, None] / (va[:, None] - vb[None, :])
    pa = s.verts[case.mino][:, None, :]
    pb = s.verts[case.majo][None, :, :]
    pts = (pa + theta[..., None] * (pb - pa)).reshape(-1, s.verts.shape[1])
    return CutPolytope(verts=pts, grid=(len(case.mino), len(case.majo)))


def triangulate_polytope(poly: CutPolytope, drop_tol: float = 1e-14) -> list[np.ndarray]:
    """Partition the cut polytope into simplices of its own dimension.

    A 1-k sign split is already a simplex; the 2-k prism-like polytope is
    split by the staircase rule (a fan from its first vertex).  Pieces with
    measure below drop_tol relative to the polytope scale are dropped.
    """
    m0, mm = poly.grid
    if m0 == 1:
        pieces = [poly.verts]
    else:
        pieces = []
        for j in range(mm):
            idx = list(range(j + 1)) + [mm + i for i in range(j, mm)]
            pieces.append(poly.verts[idx])
    scale = np.linalg.norm(poly.verts.max(0) - poly.verts.min(0)) ** (len(poly.verts[0]) - 1)
    out = []
    for p in pieces:
        if simplex_measure(p[None])[0] > drop_tol * max(scale, 1e-300):
            out.append(p)
    return out


def st_surface_quadrature(mesh: SpatialMesh, element: int, fields,
                          t0: float, t1: float, order: int = 2) -> CutQuadrature:
    """Cut quadrature of a single (cut) element's prism."""
    geo = build_slab_geometry(_single_element_view(mesh, element), fields, t0, t1, order)
    q = geo.quad
    q.element[:] = element
    return q


def _single_element_view(mesh: SpatialMesh, element: int) -> SpatialMesh:
    return SpatialMesh(d=mesh.d, vertices=mesh.vertices,
                       elements=mesh.elements[[element]],
                       levels=mesh.levels[[element]], box=mesh.box, h0=mesh.h0)


slice_quadrature = build_slice


def monte_carlo_measure_oracle(coords, interval, fn, n_samples: int,
                               rng: np.random.Generator, grad=None,
                               delta_frac: float = 0.05) -> tuple[float, float]:
    """Statistical estimate of the measure of {fn = 0} inside a prism.

    Uses co-area band counting: uniform samples in simplex x interval (or
    the bare simplex when interval is None), each sample in the band
    |fn| < delta contributing |grad fn| / (2 delta).  Returns (estimate,
    standard error).  Test oracle only.
    """
    coords = np.asarray(coords, dtype=float)
    d = coords.shape[1]
    lam = rng.dirichlet(np.ones(coords.shape[0]), size=n_samples)
    x = lam @ coords
    vol = float(simplex_measure(coords[None])[0])
    if interval is not None:
        t0, t1 = interval
        t = rng.uniform(t0, t1, size=n_samples)
        pts = np.concatenate([x, t[:, None]], axis=1)
        vol *= (t1 - t0)
    else:
        pts = x
    vals = np.asarray(fn(pts), dtype=float)
    if grad is None:
        m = pts.shape[1]
        h = 1e-6 * max(np.ptp(pts, axis=0).max(), 1.0)
        g = np.empty((n_samples, m))
        for k in range(m):
            dp = np.zeros(m)
            dp[k] = h
            g[:, k] = (np.asarray(fn(pts + dp)) - np.asarray(fn(pts - dp))) / (2 * h)
    else:
        g = np.asarray(grad(pts), dtype=float)
    gnorm = np.sqrt((g ** 2).sum(axis=1))
    delta = delta_frac * np.abs(vals).max()
    contrib = np.where(np.abs(vals) < delta, gnorm, 0.0) / (2 * delta)
    est = vol * contrib.mean()
    se = vol * contrib.std(ddof=1) / np.sqrt(n_samples)
    return float(est), float(se)
