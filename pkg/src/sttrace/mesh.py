"""Simplicial box meshes with regular refinement near an implicit surface.

Meshes are Kuhn (Freudenthal) subdivisions of an axis-aligned box: every
grid cube is split into d! simplices along sorted-coordinate paths.  Marked
elements are refined regularly (4 children in 2D, 8 in 3D via the standard
octahedral split); hanging nodes at level transitions are allowed, since
only the uniformly refined band around the surface carries degrees of
freedom downstream.

Vertex indices define the global ordering used for all deterministic
diagonal choices: child vertices are always appended after their parents.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import factorial

import numpy as np

# local midpoint indices: parents 0..d, then midpoints of _EDGE_LOCAL in order
_EDGE_LOCAL = {
    2: [(0, 1), (0, 2), (1, 2)],
    3: [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
}

# regular-refinement children in local labels (parents 0..d, midpoints d+1..)
_CHILDREN_LOCAL = {
    2: [[0, 3, 4], [1, 3, 5], [2, 4, 5], [3, 4, 5]],
    3: [
        [0, 4, 5, 6], [1, 4, 7, 8], [2, 5, 7, 9], [3, 6, 8, 9],
        # interior octahedron, split along the m02-m13 diagonal
        [4, 5, 6, 8], [4, 5, 7, 8], [5, 6, 8, 9], [5, 7, 8, 9],
    ],
}


@dataclass
class SpatialMesh:
    """Simplicial mesh of a box; elements store sorted global vertex indices."""

    d: int
    vertices: np.ndarray          # (nv, d) float
    elements: np.ndarray          # (ne, d+1) int, each row ascending
    levels: np.ndarray            # (ne,) int refinement level
    box: np.ndarray               # (d, 2) lo/hi per axis
    h0: float
    _locator: "_Locator | None" = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def element_coords(self, ids=None) -> np.ndarray:
        """Vertex coordinates per element, shape (ne, d+1, d)."""
        el = self.elements if ids is None else self.elements[ids]
        return self.vertices[el]

    def volumes(self, ids=None) -> np.ndarray:
        coords = self.element_coords(ids)
        edges = coords[:, 1:, :] - coords[:, :1, :]
        return np.abs(np.linalg.det(edges)) / factorial(self.d)

    def diameters(self, ids=None) -> np.ndarray:
        coords = self.element_coords(ids)
        diffs = coords[:, :, None, :] - coords[:, None, :, :]
        return np.sqrt((diffs ** 2).sum(-1)).max(axis=(1, 2))

    def neighbors(self) -> np.ndarray:
        """Element-to-element face adjacency, -1 where a face is unshared.

        Shape (ne, d+1); entry k is the neighbor across the face opposite
        local vertex k.  Faces across level transitions (hanging nodes) do
        not pair up and stay -1.
        """
        ne, d = self.n_elements, self.d
        faces = []
        owners = []
        for k in range(d + 1):
            idx = [j for j in range(d + 1) if j != k]
            f = self.elements[:, idx]
            faces.append(np.sort(f, axis=1))
            owners.append(np.stack([np.arange(ne), np.full(ne, k)], axis=1))
        faces = np.concatenate(faces)
        owners = np.concatenate(owners)
        order = np.lexsort(faces.T[::-1])
        faces, owners = faces[order], owners[order]
        nbr = np.full((ne, d + 1), -1, dtype=np.int64)
        same = np.all(faces[1:] == faces[:-1], axis=1)
        for i in np.nonzero(same)[0]:
            (e1, k1), (e2, k2) = owners[i], owners[i + 1]
            nbr[e1, k1] = e2
            nbr[e2, k2] = e1
        return nbr

    def barycentric(self, elem_ids: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of points w.r.t. the given elements."""
        coords = self.element_coords(elem_ids)                 # (n, d+1, d)
        A = np.concatenate([np.ones_like(coords[..., :1]), coords], axis=2)
        rhs = np.concatenate([np.ones((len(points), 1)), points], axis=1)
        return np.linalg.solve(np.swapaxes(A, 1, 2), rhs[..., None])[..., 0]

    def locator(self) -> "_Locator":
        if self._locator is None:
            self._locator = _Locator(self)
        return self._locator


@dataclass(frozen=True)
class TimePartition:
    """Uniform partition of [0, T] into N slabs."""

    t_final: float
    n_slabs: int

    def __post_init__(self):
        if self.n_slabs < 1 or self.t_final <= 0:
            raise ValueError("need n_slabs >= 1 and t_final > 0")

    @property
    def dt(self) -> float:
        return self.t_final / self.n_slabs

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_slabs + 1)

    def interval(self, n: int) -> tuple[float, float]:
        """Slab n (0-based) as (t_bottom, t_top)."""
        nodes = self.nodes
        return float(nodes[n]), float(nodes[n + 1])


def kuhn_box_mesh(box, h0: float) -> SpatialMesh:
    """Kuhn triangulation of an axis-aligned box with grid width h0.

    box: sequence of (lo, hi) per axis, each side an integer multiple of h0.
    Every grid cube is split into d! simplices (2 triangles / 6 tetrahedra).
    """
    box = np.asarray(box, dtype=float)
    d = box.shape[0]
    if d not in (2, 3):
        raise ValueError("only d=2 and d=3 are supported")
    sides = box[:, 1] - box[:, 0]
    ncells = sides / h0
    if np.any(np.abs(ncells - np.round(ncells)) > 1e-9) or np.any(ncells < 0.5):
        raise ValueError(f"box sides {sides} must be positive integer multiples of h0={h0}")
    ncells = np.round(ncells).astype(int)

    axes = [box[i, 0] + h0 * np.arange(ncells[i] + 1) for i in range(d)]
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.ravel() for g in grid], axis=1)
    strides = np.ones(d, dtype=np.int64)
    for i in range(d - 2, -1, -1):
        strides[i] = strides[i + 1] * (ncells[i + 1] + 1)

    cells = np.stack(np.meshgrid(*[np.arange(n) for n in ncells], indexing="ij"),
                     axis=-1).reshape(-1, d)
    base = cells @ strides
    elements = []
    for perm in itertools.permutations(range(d)):
        offs = np.zeros(d, dtype=np.int64)
        path = [0]
        for ax in perm:
            offs = offs.copy()
            offs[ax] = 1
            path.append(int(offs @ strides))
        elements.append(base[:, None] + np.asarray(path)[None, :])
    elements = np.sort(np.concatenate(elements, axis=0), axis=1)
    # cube-major ordering keeps element numbering contiguous per cell
    order = np.lexsort(elements.T[::-1])
    elements = elements[order]
    return SpatialMesh(d=d, vertices=vertices, elements=elements,
                       levels=np.zeros(len(elements), dtype=np.int64),
                       box=box, h0=float(h0))


def refine_elements(mesh: SpatialMesh, mark: np.ndarray) -> SpatialMesh:
    """Regularly refine the marked elements (one sweep, midpoints deduplicated)."""
    if not np.any(mark):
        return mesh
    d = mesh.d
    el = mesh.elements[mark]
    pairs = np.asarray(_EDGE_LOCAL[d])
    edges = np.sort(el[:, pairs], axis=2)                    # (nm, ne_loc, 2)
    flat = edges.reshape(-1, 2)
    key = flat[:, 0] * np.int64(mesh.n_vertices) + flat[:, 1]
    uniq, inv = np.unique(key, return_inverse=True)
    mids_pairs = np.stack([uniq // mesh.n_vertices, uniq % mesh.n_vertices], 1)
    new_verts = 0.5 * (mesh.vertices[mids_pairs[:, 0]] + mesh.vertices[mids_pairs[:, 1]])
    vertices = np.concatenate([mesh.vertices, new_verts])
    mid_ids = mesh.n_vertices + inv.reshape(edges.shape[:2])

    local = np.concatenate([el, mid_ids], axis=1)            # (nm, d+1+ne_loc)
    children = np.sort(local[:, np.asarray(_CHILDREN_LOCAL[d])], axis=2)
    children = children.reshape(-1, d + 1)
    child_levels = np.repeat(mesh.levels[mark] + 1, len(_CHILDREN_LOCAL[d]))

    keep = ~mark
    elements = np.concatenate([mesh.elements[keep], children])
    levels = np.concatenate([mesh.levels[keep], child_levels])
    return SpatialMesh(d=d, vertices=vertices, elements=elements,
                       levels=levels, box=mesh.box, h0=mesh.h0)


def interface_mark(mesh: SpatialMesh, phi, times, band_factor: float) -> np.ndarray:
    """Elements whose prism over the sampled times can intersect the zero level.

    Marks on a vertex sign change across the (vertex, time) sample block or
    when min |phi| falls below band_factor * diam(element).
    """
    vals = np.stack([np.asarray(phi(mesh.vertices, t), dtype=float) for t in times], axis=1)
    vals = np.clip(np.nan_to_num(vals, nan=0.0, posinf=1e15, neginf=-1e15), -1e15, 1e15)
    ev = vals[mesh.elements]                                # (ne, d+1, nt)
    vmin = ev.min(axis=(1, 2))
    vmax = ev.max(axis=(1, 2))
    near = np.abs(ev).min(axis=(1, 2)) <= band_factor * mesh.diameters()
    return (vmin < 0) & (vmax > 0) | near


def refine_near_interface(mesh: SpatialMesh, phi, times, target_level: int,
                          band_factor: float = 0.5) -> SpatialMesh:
    """Refine until every element near the zero level has the target level.

    phi(points, t) is sampled at the given times (typically slab bottom,
    midpoint, top).  Elements already at target_level are left alone; far
    elements keep their current level, so level transitions (with hanging
    nodes) occur at the band boundary.
    """
    if target_level < 0:
        raise ValueError("target_level must be >= 0")
    out = mesh
    while True:
        mark = interface_mark(out, phi, times, band_factor) & (out.levels < target_level)
        if not np.any(mark):
            return out
        out = refine_elements(out, mark)


class _Locator:
    """Uniform-grid bucket index for vectorized point location."""

    def __init__(self, mesh: SpatialMesh, target_cells: int = 200_000):
        self.mesh = mesh
        d = mesh.d
        lo, hi = mesh.box[:, 0], mesh.box[:, 1]
        # cell size near the smallest element leg, capped for memory
        h = max(mesh.h0 / 2.0 ** max(int(mesh.levels.max(initial=0)), 0), 1e-12)
        ncell = np.maximum(((hi - lo) / h).astype(int), 1)
        while np.prod(ncell) > target_cells:
            ncell = np.maximum(ncell // 2, 1)
        self.lo, self.ncell = lo, ncell
        self.cell = (hi - lo) / ncell
        coords = mesh.element_coords()
        cmin = self._clip(((coords.min(axis=1) - lo) / self.cell).astype(int))
        cmax = self._clip(((coords.max(axis=1) - lo) / self.cell).astype(int))
        buckets: dict[tuple, list[int]] = {}
        for e in range(mesh.n_elements):
            ranges = [range(cmin[e, i], cmax[e, i] + 1) for i in range(d)]
            for key in itertools.product(*ranges):
                buckets.setdefault(key, []).append(e)
        self.buckets = {k: np.asarray(v) for k, v in buckets.items()}

    def _clip(self, idx):
        return np.clip(idx, 0, self.ncell - 1)

    def locate(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Element index per point, or -1 when outside the box / uncovered.

        Ties on shared faces resolve to the lowest element index.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        result = np.full(n, -1, dtype=np.int64)
        box = self.mesh.box
        pad = tol * max(1.0, np.abs(box).max())
        inside = np.all((points >= box[:, 0] - pad) & (points <= box[:, 1] + pad), axis=1)
        keys = self._clip(((points - self.lo) / self.cell).astype(int))
        for i in np.nonzero(inside)[0]:
            cand = self.buckets.get(tuple(keys[i]))
            if cand is None:
                continue
            bary = self.mesh.barycentric(cand, np.repeat(points[i][None], len(cand), 0))
            ok = np.all(bary >= -1e-12, axis=1) & np.all(bary <= 1 + 1e-12, axis=1)
            hits = cand[ok]
            if hits.size:
                result[i] = hits.min()
        return result


def point_locate(mesh: SpatialMesh, x) -> int | None:
    """Element containing x (lowest index on shared faces), None if outside."""
    res = mesh.locator().locate(np.asarray(x, dtype=float)[None])
    return None if res[0] < 0 else int(res[0])
