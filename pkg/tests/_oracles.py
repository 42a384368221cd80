"""Independent oracles used by the test suite.

Everything here deliberately avoids the package's own geometry/quadrature
machinery: surface differential operators come from high-order finite
differences of the raw fields, and single-prism integrals are computed by
clipping the (planar) cut by hand and applying tensor Gauss rules.
"""

from __future__ import annotations

from math import factorial

import numpy as np

# ---------------------------------------------------------------------------
# finite-difference surface calculus (4th-order central stencils)

_C1 = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
_O1 = np.array([-2.0, -1.0, 1.0, 2.0])


def fd_gradient(fn, x, h):
    """4th-order FD gradient of fn(points)->(n,) at points x (n,d)."""
    x = np.atleast_2d(x)
    g = np.zeros_like(x, dtype=float)
    for k in range(x.shape[1]):
        for c, o in zip(_C1, _O1):
            dx = np.zeros(x.shape[1])
            dx[k] = o * h
            g[:, k] += c * np.asarray(fn(x + dx), dtype=float)
    return g / h


def fd_jacobian(fn, x, h):
    """4th-order FD Jacobian of fn(points)->(n,m): returns (n, m, d)."""
    x = np.atleast_2d(x)
    probe = np.asarray(fn(x), dtype=float)
    J = np.zeros(probe.shape + (x.shape[1],))
    for k in range(x.shape[1]):
        for c, o in zip(_C1, _O1):
            dx = np.zeros(x.shape[1])
            dx[k] = o * h
            J[..., k] += c * np.asarray(fn(x + dx), dtype=float)
    return J / h


def fd_time_derivative(fn, x, t, h):
    out = np.zeros(len(np.atleast_2d(x)))
    for c, o in zip(_C1, _O1):
        out += c * np.asarray(fn(x, t + o * h), dtype=float)
    return out / h


def surface_residual(problem, x, t, h=None):
    """Strong residual of the exact solution at on-surface points.

    All surface operators (normal, surface divergence of the wind, surface
    Laplacian) are built from finite differences of phi and the exact
    solution only; the wind is rebuilt from the level-set identity.
    """
    x = np.atleast_2d(x)
    if h is None:
        h = 2e-3 * float(np.linalg.norm(problem.box[:, 1] - problem.box[:, 0]))

    def phi_t(pts):
        return problem.phi(pts, t)

    def u_t(pts):
        return problem.exact(pts, t)

    gphi = fd_gradient(phi_t, x, h)
    dphi = fd_time_derivative(problem.phi, x, t, h)
    w = -(dphi / (gphi ** 2).sum(1))[:, None] * gphi

    def nfield(pts):
        g = fd_gradient(phi_t, pts, h)
        return g / np.sqrt((g ** 2).sum(1))[:, None]

    def wfield(pts):
        g = fd_gradient(phi_t, pts, h)
        dp = fd_time_derivative(problem.phi, pts, t, h)
        return -(dp / (g ** 2).sum(1))[:, None] * g

    n = nfield(x)
    div_n = np.trace(fd_jacobian(nfield, x, h), axis1=1, axis2=2)
    Jw = fd_jacobian(wfield, x, h)
    div_g_w = np.trace(Jw, axis1=1, axis2=2) - np.einsum("ni,nij,nj->n", n, Jw, n)

    gu = fd_gradient(u_t, x, h)
    Hu = fd_jacobian(lambda pts: fd_gradient(u_t, pts, h), x, h)
    lap_u = np.trace(Hu, axis1=1, axis2=2)
    lap_g_u = lap_u - np.einsum("ni,nij,nj->n", n, Hu, n) - div_n * (gu * n).sum(1)

    dudt = fd_time_derivative(problem.exact, x, t, h)
    mat = dudt + (w * gu).sum(1)
    f = np.asarray(problem.source(x, t), dtype=float)
    u = np.asarray(problem.exact(x, t), dtype=float)
    return mat + div_g_w * u - problem.nu_d * lap_g_u - f


# ---------------------------------------------------------------------------
# exact simplex integrals (quadrature reference values)

def simplex_monomial_integral(alpha) -> float:
    """Integral of prod(lambda_i^alpha_i) over the unit-measure simplex."""
    alpha = list(alpha)
    d = len(alpha) - 1
    num = 1.0
    for a in alpha:
        num *= factorial(a)
    return factorial(d) * num / factorial(sum(alpha) + d)


# ---------------------------------------------------------------------------
# brute-force single-prism entry integration for planar stationary cuts

def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def clip_line_in_triangle(tri, c):
    """Endpoints of {x1 = c} inside a triangle (assumes a proper cut)."""
    pts = []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        fa, fb = a[0] - c, b[0] - c
        if fa == 0.0:
            pts.append(a)
        if fa * fb < 0:
            th = fa / (fa - fb)
            pts.append(a + th * (b - a))
    uniq = []
    for p in pts:
        if not any(np.allclose(p, q, atol=1e-14) for q in uniq):
            uniq.append(p)
    assert len(uniq) == 2, f"expected a segment, got {len(uniq)} points"
    return np.asarray(uniq)


def clip_plane_in_tet(tet, c):
    """Polygon vertices of {x1 = c} inside a tetrahedron, cyclically ordered."""
    edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    pts = []
    for i, j in edges:
        fa, fb = tet[i][0] - c, tet[j][0] - c
        if fa == 0.0 and not any(np.allclose(tet[i], q) for q in pts):
            pts.append(tet[i])
        if fa * fb < 0:
            th = fa / (fa - fb)
            pts.append(tet[i] + th * (tet[j] - tet[i]))
    pts = np.asarray(pts)
    assert len(pts) >= 3
    center = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 2] - center[2], pts[:, 1] - center[1])
    return pts[np.argsort(ang)]


def _triangle_rule(tri3d, n=5):
    """Tensor (Duffy) Gauss points/weights on a planar triangle in R^3."""
    y, wy = _gauss01(n)
    pts, ws = [], []
    v0, v1, v2 = tri3d
    for a, wa in zip(y, wy):
        for b, wb in zip(y, wy):
            lam1 = a
            lam2 = b * (1 - a)
            p = v0 + lam1 * (v1 - v0) + lam2 * (v2 - v0)
            pts.append(p)
            ws.append(wa * wb * (1 - a))
    area2 = np.linalg.norm(np.cross(tri3d[1] - tri3d[0], tri3d[2] - tri3d[0]))
    return np.asarray(pts), np.asarray(ws) * area2


def surface_rule_for_planar_cut(coords, c, n=5):
    """Quadrature for the spatial cut {x1=c} of a simplex (d=2 or 3)."""
    coords = np.asarray(coords, dtype=float)
    d = coords.shape[1]
    if d == 2:
        seg = clip_line_in_triangle(coords, c)
        y, wy = _gauss01(n)
        pts = seg[0] + y[:, None] * (seg[1] - seg[0])
        ws = wy * np.linalg.norm(seg[1] - seg[0])
        return pts, ws
    poly = clip_plane_in_tet(coords, c)
    pts, ws = [], []
    for k in range(1, len(poly) - 1):
        tri = np.asarray([poly[0], poly[k], poly[k + 1]])
        p, w = _triangle_rule(tri, n)
        pts.append(p)
        ws.append(w)
    return np.concatenate(pts), np.concatenate(ws)


class PrismEntryOracle:
    """Hand-integrated slab matrix entries for one element cut by {x1 = c}.

    Stationary planar level set, zero wind: every bilinear-form entry is a
    polynomial integral over segment/polygon x interval; tensor Gauss of
    sufficient degree integrates them exactly.
    """

    def __init__(self, coords, t0, t1, c, nu, n=6):
        self.coords = np.asarray(coords, dtype=float)
        self.d = self.coords.shape[1]
        self.t0, self.t1, self.c, self.nu = t0, t1, c, nu
        self.spts, self.sws = surface_rule_for_planar_cut(self.coords, c, n)
        self.ty, self.tw = _gauss01(n)
        A = np.concatenate([np.ones((self.d + 1, 1)), self.coords], axis=1)
        self.bary_coef = np.linalg.inv(A.T)      # row i: [const, grad] of hat_i
        self.normal = np.zeros(self.d)
        self.normal[0] = 1.0

    def hat(self, x):
        aug = np.concatenate([np.ones((len(x), 1)), x], axis=1)
        return aug @ self.bary_coef.T

    def hat_grad(self):
        return self.bary_coef[:, 1:]

    def lam(self, t, level):
        dt = self.t1 - self.t0
        return (self.t1 - t) / dt if level == 0 else (t - self.t0) / dt

    def dlam(self, level):
        dt = self.t1 - self.t0
        return -1.0 / dt if level == 0 else 1.0 / dt

    def matrix(self, sigma=0.0):
        nloc = 2 * (self.d + 1)
        K = np.zeros((nloc, nloc))
        H = self.hat(self.spts)
        P = np.eye(self.d) - np.outer(self.normal, self.normal)
        PG = self.hat_grad() @ P.T
        mass_s = np.array([[(self.sws * H[:, i] * H[:, j]).sum()
                            for j in range(self.d + 1)] for i in range(self.d + 1)])
        stiff_s = np.array([[self.sws.sum() * (PG[i] @ PG[j])
                             for j in range(self.d + 1)] for i in range(self.d + 1)])
        dt = self.t1 - self.t0
        for ty, tw in zip(self.ty, self.tw):
            t = self.t0 + ty * dt
            wt = tw * dt
            for i in range(self.d + 1):
                for bi in range(2):
                    li = self.lam(t, bi)
                    for j in range(self.d + 1):
                        for bj in range(2):
                            lj = self.lam(t, bj)
                            val = mass_s[i, j] * li * self.dlam(bj)   # time derivative term
                            val += self.nu * stiff_s[i, j] * li * lj  # tangential diffusion
                            K[2 * i + bi, 2 * j + bj] += wt * val
        # upwind jump: bottom-slice mass matrix couples the bottom levels
        for i in range(self.d + 1):
            for j in range(self.d + 1):
                K[2 * i, 2 * j] += mass_s[i, j]
        if sigma:
            K += self.stabilization(sigma)
        return K

    def stabilization(self, sigma):
        nloc = 2 * (self.d + 1)
        S = np.zeros((nloc, nloc))
        dt = self.t1 - self.t0
        gt = np.array([-1.0, 1.0]) / np.sqrt(3.0)
        times = 0.5 * (self.t0 + self.t1) + 0.5 * dt * gt
        H = self.hat(self.spts)
        for t in times:
            m = np.zeros(nloc)
            for i in range(self.d + 1):
                for bi in range(2):
                    m[2 * i + bi] = (self.sws * H[:, i]).sum() * self.lam(t, bi)
            S += sigma * (dt / 2.0) * np.outer(m, m)
        return S

    def rhs(self, f, u0):
        nloc = 2 * (self.d + 1)
        b = np.zeros(nloc)
        H = self.hat(self.spts)
        dt = self.t1 - self.t0
        for ty, tw in zip(self.ty, self.tw):
            t = self.t0 + ty * dt
            fv = np.asarray(f(self.spts, t), dtype=float)
            for i in range(self.d + 1):
                for bi in range(2):
                    b[2 * i + bi] += tw * dt * (self.sws * fv * H[:, i] * self.lam(t, bi)).sum()
        uv = np.asarray(u0(self.spts), dtype=float)
        for i in range(self.d + 1):
            b[2 * i] += (self.sws * uv * H[:, i]).sum()
        return b
