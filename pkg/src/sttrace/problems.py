"""Evolving-surface transport-diffusion problems defined by level sets.

A problem bundles evaluable space-time fields: the level set phi with its
first derivatives, the transporting wind, diffusion coefficient, source,
initial data and (when known) the exact solution.  All fields take point
arrays of shape (n, d) and a scalar or per-point time and are vectorized.

The built-in catalog covers stationary circle/sphere benchmarks with
eigenfunction exact solutions, a shrinking circle with a manufactured
solution, and the colliding spheres/circles geometries whose topology
changes at a computable touch time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import SingularGeometryError

_GRAD_EPS2 = 1e-24


def _norm(x):
    return np.sqrt((np.asarray(x, dtype=float) ** 2).sum(axis=-1))


@dataclass
class ProblemDefinition:
    """All data of one transport-diffusion problem on an evolving surface."""

    name: str
    d: int
    box: np.ndarray                       # (d, 2)
    t_final: float
    nu_d: float
    phi: Callable                         # phi(x, t) -> (n,)
    grad_phi: Callable                    # (n, d)
    dphi_dt: Callable                     # (n,)
    wind: Callable                        # (n, d)
    source: Callable                      # f(x, t) -> (n,)
    u0: Callable                          # u0(x) -> (n,)
    exact: Callable | None = None
    exact_grad: Callable | None = None
    wind_jacobian: Callable | None = None  # (n, d, d), J[i, j] = dw_i/dx_j
    c_F: Callable | None = None            # Poincare constant of Gamma(t)
    surface_area: Callable | None = None   # |Gamma(t)|
    c_F_max_over_area: float | None = None
    sigma_hint: float | None = None
    stationary: bool = False
    metadata: dict = field(default_factory=dict)

    def with_overrides(self, **kw) -> "ProblemDefinition":
        return replace(self, **kw)


@dataclass
class AnalysisConstants:
    """Measured/analytic quantities entering the ellipticity condition."""

    c_F_samples: np.ndarray
    c_0: float
    alpha_inf: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def wind_from_levelset(grad_vals, dphi_vals, points=None, times=None):
    """Normal wind transporting the level set: w = -(dphi/dt / |grad|^2) grad.

    Raises SingularGeometryError (with the first offending location when
    points/times are passed) if the gradient vanishes.
    """
    g = np.asarray(grad_vals, dtype=float)
    dphi = np.asarray(dphi_vals, dtype=float)
    g2 = (g ** 2).sum(axis=-1)
    bad = g2 < _GRAD_EPS2
    if np.any(bad):
        i = int(np.argmax(bad))
        where = "" if points is None else f" at x={np.asarray(points)[i]}"
        when = "" if times is None else f", t={np.atleast_1d(times)[min(i, np.atleast_1d(times).size - 1)]}"
        raise SingularGeometryError(f"vanishing level-set gradient{where}{when}")
    return -(dphi / g2)[..., None] * g


def derived_wind(grad_phi, dphi_dt) -> Callable:
    """Wind field closure derived from the level-set derivatives."""

    def wind(x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return wind_from_levelset(grad_phi(x, t), dphi_dt(x, t), points=x, times=t)

    return wind


def surface_divergence_wind(problem: ProblemDefinition, x, t, h_fd: float | None = None):
    """div_Gamma w = tr((I - n n^T) grad w) at near-surface points.

    The wind Jacobian is taken analytically when the problem supplies one,
    otherwise by central finite differences with step 1e-5 * diam(box).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n_pts, d = x.shape
    if problem.wind_jacobian is not None:
        J = np.asarray(problem.wind_jacobian(x, t), dtype=float)
    else:
        if h_fd is None:
            h_fd = 1e-5 * float(_norm(problem.box[:, 1] - problem.box[:, 0]))
        J = np.empty((n_pts, d, d))
        for k in range(d):
            dp = np.zeros(d)
            dp[k] = h_fd
            J[:, :, k] = (problem.wind(x + dp, t) - problem.wind(x - dp, t)) / (2 * h_fd)
    g = np.asarray(problem.grad_phi(x, t), dtype=float)
    g2 = (g ** 2).sum(axis=1)
    if np.any(g2 < _GRAD_EPS2):
        i = int(np.argmax(g2 < _GRAD_EPS2))
        raise SingularGeometryError(f"vanishing level-set gradient at x={x[i]}, t={t}")
    n = g / np.sqrt(g2)[:, None]
    return np.trace(J, axis1=1, axis2=2) - np.einsum("ni,nij,nj->n", n, J, n)


def check_condition_ass7(problem: ProblemDefinition, samples, c_F_values=None) -> dict:
    """Minimum of div_Gamma w + nu_d c_F(t) over the sample set.

    samples: sequence of (t, points) pairs of near-surface points.  c_F
    values default to the problem's analytic Poincare constant.
    """
    if c_F_values is None:
        if problem.c_F is None:
            raise ValueError(f"problem {problem.name!r} has no analytic c_F; pass c_F_values")
        c_F_values = [problem.c_F(t) for t, _ in samples]
    mins = []
    for (t, pts), cf in zip(samples, c_F_values):
        divw = surface_divergence_wind(problem, pts, t)
        mins.append(float(divw.min()) + problem.nu_d * float(cf))
    m = min(mins)
    return {"min_value": m, "satisfied": m > 0.0}


def default_sigma(problem: ProblemDefinition, measured_max: float | None = None) -> float:
    """Stabilization parameter lower bound (nu/2) max_t c_F(t)/|Gamma(t)|."""
    if problem.nu_d == 0:
        return 0.0
    if problem.c_F is not None and problem.surface_area is not None:
        ts = np.linspace(0.0, problem.t_final, 129)
        ratio = max(float(problem.c_F(t)) / float(problem.surface_area(t)) for t in ts)
    elif problem.c_F_max_over_area is not None:
        ratio = problem.c_F_max_over_area
    elif measured_max is not None:
        ratio = measured_max
    else:
        raise ValueError(
            f"problem {problem.name!r} has no Poincare data; supply sigma explicitly")
    return 0.5 * problem.nu_d * ratio


def estimate_analysis_constants(problem: ProblemDefinition, samples, sigma: float,
                                c_F_values=None) -> AnalysisConstants:
    """Sampled constants for reporting: c_F trace, c_0, alpha_inf."""
    if c_F_values is None:
        c_F_values = [problem.c_F(t) if problem.c_F else np.nan for t, _ in samples]
    c0 = np.inf
    alpha = 0.0
    for (t, pts), cf in zip(samples, c_F_values):
        divw = surface_divergence_wind(problem, pts, t)
        alpha = max(alpha, float(np.abs(divw).max()))
        if np.isfinite(cf):
            c0 = min(c0, float(divw.min()) + problem.nu_d * float(cf))
    return AnalysisConstants(c_F_samples=np.asarray(c_F_values, dtype=float),
                             c_0=float(c0), alpha_inf=alpha, sigma=sigma)


# ----------------------------------------------------------------------
# catalog


def _box(*sides):
    return np.asarray(sides, dtype=float)


def stationary_circle(nu: float = 1.0, t_final: float = 1.0) -> ProblemDefinition:
    """Unit circle, zero wind; u = exp(-nu t) x1 solves the problem with f=0."""

    def phi(x, t):
        return _norm(x) - 1.0

    def grad_phi(x, t):
        x = np.atleast_2d(x)
        return x / _norm(x)[:, None]

    def dphi_dt(x, t):
        return np.zeros(len(np.atleast_2d(x)))

    def wind(x, t):
        return np.zeros_like(np.atleast_2d(x), dtype=float)

    def wind_jac(x, t):
        n = len(np.atleast_2d(x))
        return np.zeros((n, 2, 2))

    return ProblemDefinition(
        name="stationary_circle", d=2, box=_box((-2, 2), (-2, 2)),
        t_final=t_final, nu_d=nu,
        phi=phi, grad_phi=grad_phi, dphi_dt=dphi_dt, wind=wind,
        wind_jacobian=wind_jac,
        source=lambda x, t: np.zeros(len(np.atleast_2d(x))),
        u0=lambda x: np.atleast_2d(x)[:, 0],
        exact=lambda x, t: np.exp(-nu * np.asarray(t)) * np.atleast_2d(x)[:, 0],
        exact_grad=lambda x, t: np.stack(
            [np.broadcast_to(np.exp(-nu * np.asarray(t)), (len(np.atleast_2d(x)),)),
             np.zeros(len(np.atleast_2d(x)))], axis=1),
        c_F=lambda t: 1.0, surface_area=lambda t: 2 * np.pi,
        stationary=True,
    )


def stationary_sphere(nu: float = 1.0, t_final: float = 1.0) -> ProblemDefinition:
    """Unit sphere, zero wind; u = exp(-2 nu t) x1 (first eigenfunction)."""

    def phi(x, t):
        return _norm(x) - 1.0

    def grad_phi(x, t):
        x = np.atleast_2d(x)
        return x / _norm(x)[:, None]

    return ProblemDefinition(
        name="stationary_sphere", d=3, box=_box((-2, 2), (-2, 2), (-2, 2)),
        t_final=t_final, nu_d=nu,
        phi=phi, grad_phi=grad_phi,
        dphi_dt=lambda x, t: np.zeros(len(np.atleast_2d(x))),
        wind=lambda x, t: np.zeros_like(np.atleast_2d(x), dtype=float),
        wind_jacobian=lambda x, t: np.zeros((len(np.atleast_2d(x)), 3, 3)),
        source=lambda x, t: np.zeros(len(np.atleast_2d(x))),
        u0=lambda x: np.atleast_2d(x)[:, 0],
        exact=lambda x, t: np.exp(-2 * nu * np.asarray(t)) * np.atleast_2d(x)[:, 0],
        exact_grad=lambda x, t: np.stack(
            [np.broadcast_to(np.exp(-2 * nu * np.asarray(t)), (len(np.atleast_2d(x)),)),
             np.zeros(len(np.atleast_2d(x))), np.zeros(len(np.atleast_2d(x)))], axis=1),
        c_F=lambda t: 2.0, surface_area=lambda t: 4 * np.pi,
        stationary=True,
    )


def shrinking_circle(nu: float = 1.0, t_final: float = 1.0) -> ProblemDefinition:
    """Circle of radius r(t) = 1 - t/4 with a manufactured exact solution.

    u = exp(-t) x1 x2 / |x|^2 is homogeneous of degree 0, so the wind
    (radial) does not advect it; the source balancing the equation is
    f = u (-1 + r'/r + 4 nu / r^2).
    """
    rp = -0.25

    def r(t):
        return 1.0 + rp * np.asarray(t, dtype=float)

    def phi(x, t):
        return _norm(x) - r(t)

    def grad_phi(x, t):
        x = np.atleast_2d(x)
        return x / _norm(x)[:, None]

    def dphi_dt(x, t):
        return np.full(len(np.atleast_2d(x)), -rp)

    def wind(x, t):
        x = np.atleast_2d(x)
        return rp * x / _norm(x)[:, None]

    def wind_jac(x, t):
        x = np.atleast_2d(x)
        rho = _norm(x)
        eye = np.eye(2)[None]
        outer = x[:, :, None] * x[:, None, :]
        return rp * (eye / rho[:, None, None] - outer / rho[:, None, None] ** 3)

    def u_ex(x, t):
        x = np.atleast_2d(x)
        rho2 = (x ** 2).sum(axis=1)
        return np.exp(-np.asarray(t, dtype=float)) * x[:, 0] * x[:, 1] / rho2

    def u_ex_grad(x, t):
        x = np.atleast_2d(x)
        x1, x2 = x[:, 0], x[:, 1]
        rho2 = (x ** 2).sum(axis=1)
        e = np.exp(-np.asarray(t, dtype=float))
        gx = x2 / rho2 - 2 * x1 ** 2 * x2 / rho2 ** 2
        gy = x1 / rho2 - 2 * x1 * x2 ** 2 / rho2 ** 2
        return np.stack([e * gx, e * gy], axis=1)

    def source(x, t):
        rt = r(t)
        return u_ex(x, t) * (-1.0 + rp / rt + 4.0 * nu / rt ** 2)

    return ProblemDefinition(
        name="shrinking_circle", d=2, box=_box((-2, 2), (-2, 2)),
        t_final=t_final, nu_d=nu,
        phi=phi, grad_phi=grad_phi, dphi_dt=dphi_dt,
        wind=wind, wind_jacobian=wind_jac,
        source=source,
        u0=lambda x: u_ex(x, 0.0),
        exact=u_ex, exact_grad=u_ex_grad,
        c_F=lambda t: 1.0 / r(t) ** 2,
        surface_area=lambda t: 2 * np.pi * r(t),
        metadata={"radius": r},
    )


def _colliding(d: int, nu: float) -> ProblemDefinition:
    """Two bodies approaching, merging and relaxing to a ball.

    phi = 1 - |x - c+|^-p - |x - c-|^-p with p = d and centers
    c+- = -+1.5 (t-1) e1; the surfaces touch at t = 1 - (2/3) 2^(1/p).
    """
    p = d
    speed = 1.5

    def centers(t):
        t = np.asarray(t, dtype=float)
        c = np.zeros(np.shape(t) + (d,))
        c[..., 0] = speed * (t - 1.0)
        return c

    def _parts(x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = centers(t)
        return x - c, x + c

    def _safe_norm(r):
        # mesh vertices can land exactly on a pole; keep arithmetic finite
        return np.maximum(_norm(r), 1e-30)

    def phi(x, t):
        rp_, rm_ = _parts(x, t)
        return 1.0 - _safe_norm(rp_) ** -p - _safe_norm(rm_) ** -p

    def grad_phi(x, t):
        rp_, rm_ = _parts(x, t)
        return (p * rp_ * (_safe_norm(rp_) ** -(p + 2))[:, None]
                + p * rm_ * (_safe_norm(rm_) ** -(p + 2))[:, None])

    def dphi_dt(x, t):
        rp_, rm_ = _parts(x, t)
        cdot = np.zeros(d)
        cdot[0] = speed
        return (-p * (_safe_norm(rp_) ** -(p + 2)) * (rp_ @ cdot)
                - p * (_safe_norm(rm_) ** -(p + 2)) * (rm_ @ -cdot))

    def u0(x):
        x = np.atleast_2d(x)
        return np.where(x[:, 0] >= 0, 3.0 - x[:, 0], 0.0)

    touch = 1.0 - (2.0 / 3.0) * 2.0 ** (1.0 / p)
    name = "colliding_spheres" if d == 3 else "colliding_circles"
    sides = ((-3, 3),) + ((-2, 2),) * (d - 1)
    return ProblemDefinition(
        name=name, d=d, box=_box(*sides), t_final=1.0, nu_d=nu,
        phi=phi, grad_phi=grad_phi, dphi_dt=dphi_dt,
        wind=derived_wind(grad_phi, dphi_dt),
        source=lambda x, t: np.zeros(len(np.atleast_2d(x))),
        u0=u0,
        sigma_hint=0.0,
        metadata={"touch_time": touch, "final_radius": 2.0 ** (1.0 / p),
                  "singular_times": (touch,)},
    )


def colliding_spheres(nu: float = 1.0) -> ProblemDefinition:
    return _colliding(3, nu)


def colliding_circles(nu: float = 1.0) -> ProblemDefinition:
    return _colliding(2, nu)


_CATALOG = {
    "stationary_circle": stationary_circle,
    "stationary_sphere": stationary_sphere,
    "shrinking_circle": shrinking_circle,
    "colliding_spheres": colliding_spheres,
    "colliding_circles": colliding_circles,
}


def builtin_problems() -> dict[str, ProblemDefinition]:
    """All catalog problems with default parameters."""
    return {name: factory() for name, factory in _CATALOG.items()}


def get_problem(name: str, nu: float | None = None,
                t_final: float | None = None) -> ProblemDefinition:
    """Catalog problem by name with optional numeric overrides."""
    if name not in _CATALOG:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(_CATALOG)}")
    kw = {}
    if nu is not None:
        kw["nu"] = nu
    prob = _CATALOG[name](**kw)
    if t_final is not None:
        if name.startswith("colliding") and t_final != 1.0:
            raise ValueError("colliding problems are defined on [0, 1]")
        prob = prob.with_overrides(t_final=t_final)
    return prob
