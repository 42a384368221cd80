"""Space-time trace finite element space bookkeeping per slab.

The volume space on a slab is P1 in space times P1 in time on every prism:
basis functions hat_i(x) * lambda_level(t) with lambda_bottom = (t1 - t)/dt
and lambda_top = (t - t0)/dt.  Degrees of freedom are restricted to the
vertices of cut elements; each active vertex carries a bottom and a top
dof.  Functions are evaluated as volume functions (coefficients of
inactive vertices count as zero), which makes cross-slab transfer
well-defined even when slab meshes differ.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cutgeom import SlabGeometry
from .errors import EmptyCutError
from .mesh import SpatialMesh


@dataclass
class SlabDofMap:
    """Active vertices of a slab and their compact dof numbering.

    dof index = 2 * compact_vertex + level, level 0 bottom / 1 top.
    """

    vertices: np.ndarray        # (nv,) sorted global ids of active vertices
    vertex_to_compact: np.ndarray  # (n_mesh_vertices,) compact id or -1

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.vertices)


def build_dof_map(mesh: SpatialMesh, cut_elements: np.ndarray) -> SlabDofMap:
    """Dof map over the vertices of the cut elements."""
    cut_elements = np.asarray(cut_elements)
    if cut_elements.size == 0:
        raise EmptyCutError("no cut elements: the surface left the domain")
    verts = np.unique(mesh.elements[cut_elements])
    lookup = np.full(mesh.n_vertices, -1, dtype=np.int64)
    lookup[verts] = np.arange(len(verts))
    return SlabDofMap(vertices=verts, vertex_to_compact=lookup)


def element_dofs(dofmap: SlabDofMap, mesh: SpatialMesh, elems) -> np.ndarray:
    """Global dof ids per element, shape (ne, 2*(d+1)).

    Local ordering: vertex-major, (v0 bottom, v0 top, v1 bottom, ...).
    Vertices outside the dof map yield -1.
    """
    compact = dofmap.vertex_to_compact[mesh.elements[elems]]
    out = np.empty(compact.shape + (2,), dtype=np.int64)
    out[..., 0] = np.where(compact >= 0, 2 * compact, -1)
    out[..., 1] = np.where(compact >= 0, 2 * compact + 1, -1)
    return out.reshape(len(np.atleast_1d(elems)), -1)


@dataclass
class TimeSlab:
    """One slab: interval, mesh, cut geometry and dof bookkeeping."""

    n: int
    t0: float
    t1: float
    mesh: SpatialMesh
    geometry: SlabGeometry
    dofmap: SlabDofMap

    @property
    def dt(self) -> float:
        return self.t1 - self.t0

    def time_basis(self, t):
        """lambda_bottom, lambda_top at time(s) t."""
        t = np.asarray(t, dtype=float)
        return (self.t1 - t) / self.dt, (t - self.t0) / self.dt


@dataclass
class FEFunctionSlab:
    """Coefficient vector over a slab's dof map."""

    slab: TimeSlab
    coeffs: np.ndarray

    def __post_init__(self):
        if len(self.coeffs) != self.slab.dofmap.n_dofs:
            raise ValueError("coefficient vector length != dof count")

    def vertex_values(self, level: int) -> np.ndarray:
        """Per-mesh-vertex coefficients at the given time level (0/1);
        inactive vertices return 0."""
        out = np.zeros(self.slab.mesh.n_vertices)
        out[self.slab.dofmap.vertices] = self.coeffs[level::2]
        return out


def _affine_inverses(mesh: SpatialMesh, elems) -> np.ndarray:
    """Inverse of [[1, x_i]] per element; rows give barycentric coefficients."""
    coords = mesh.element_coords(elems)
    A = np.concatenate([np.ones(coords.shape[:2])[..., None], coords], axis=2)
    return np.linalg.inv(np.swapaxes(A, 1, 2))


def hat_values(mesh: SpatialMesh, elems, points) -> np.ndarray:
    """P1 hat-function values of each element vertex at paired points."""
    return mesh.barycentric(elems, points)


def hat_gradients(mesh: SpatialMesh, elems) -> np.ndarray:
    """Constant spatial gradients of the hat functions, (ne, d+1, d).

    Row i of the inverse matrix holds hat_i as [const, grad]; drop const.
    """
    return _affine_inverses(mesh, elems)[:, :, 1:]


def eval_basis(mesh: SpatialMesh, element: int, slab: TimeSlab, x, t):
    """(values, spatial gradients, time derivatives) of the 2(d+1) local dofs.

    Local dof order matches element_dofs: (v0 bottom, v0 top, v1 bottom, ...).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lam = mesh.barycentric(np.asarray([element] * len(x)), x)   # (n, d+1)
    grads = hat_gradients(mesh, np.asarray([element]))[0]       # (d+1, d)
    lb, lt = slab.time_basis(t)
    lb, lt = np.broadcast_to(lb, (len(x),)), np.broadcast_to(lt, (len(x),))
    nloc = mesh.d + 1
    vals = np.empty((len(x), 2 * nloc))
    dts = np.empty_like(vals)
    gr = np.empty((len(x), 2 * nloc, mesh.d))
    vals[:, 0::2] = lam * lb[:, None]
    vals[:, 1::2] = lam * lt[:, None]
    dts[:, 0::2] = lam * (-1.0 / slab.dt)
    dts[:, 1::2] = lam * (+1.0 / slab.dt)
    gr[:, 0::2, :] = grads[None] * lb[:, None, None]
    gr[:, 1::2, :] = grads[None] * lt[:, None, None]
    return vals, gr, dts


def eval_fe_function(fn: FEFunctionSlab, points, t, with_gradient: bool = False):
    """Evaluate a slab FE function at spatial points and time t.

    Points are located in the slab mesh; inactive vertices contribute 0
    (the volume extension).  Points outside the box raise ValueError.
    """
    slab = fn.slab
    mesh = slab.mesh
    points = np.atleast_2d(np.asarray(points, dtype=float))
    elems = mesh.locator().locate(points)
    if np.any(elems < 0):
        i = int(np.argmax(elems < 0))
        raise ValueError(f"point {points[i]} is outside the domain")
    lam = mesh.barycentric(elems, points)
    cb = fn.vertex_values(0)[mesh.elements[elems]]
    ct = fn.vertex_values(1)[mesh.elements[elems]]
    lb, lt = slab.time_basis(t)
    vals = (lam * cb).sum(1) * lb + (lam * ct).sum(1) * lt
    if not with_gradient:
        return vals
    grads = hat_gradients(mesh, elems)
    g = (grads * cb[:, :, None]).sum(1) * np.broadcast_to(lb, (len(points),))[:, None] \
        + (grads * ct[:, :, None]).sum(1) * np.broadcast_to(lt, (len(points),))[:, None]
    return vals, g
