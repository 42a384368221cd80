"""Quadrature rules on reference simplices of arbitrary dimension.

Rules are returned in barycentric form with weights normalized to sum to 1,
so a rule is applied to a concrete simplex by multiplying the weights with
the simplex measure.  All rules have strictly positive weights.
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def simplex_rule(dim: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (bary, weights) integrating polynomials of degree <= order.

    bary has shape (npts, dim+1), weights shape (npts,) and sums to 1.
    Orders 1 and 2 use compact symmetric rules; higher orders fall back to
    a conical-product (Duffy) construction, which keeps weights positive.
    """
    if dim < 1:
        raise ValueError("simplex dimension must be >= 1")
    if order <= 1:
        bary = np.full((1, dim + 1), 1.0 / (dim + 1))
        return bary, np.array([1.0])
    if order == 2:
        # one orbit: a on the diagonal, b elsewhere
        b = (1.0 - 1.0 / np.sqrt(dim + 2.0)) / (dim + 1.0)
        a = 1.0 - dim * b
        bary = np.full((dim + 1, dim + 1), b)
        np.fill_diagonal(bary, a)
        w = np.full(dim + 1, 1.0 / (dim + 1))
        return bary, w
    return _conical_rule(dim, order)


def _conical_rule(dim: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Conical-product Gauss-Jacobi rule, exact to the requested degree."""
    n1d = (order + 2) // 2
    nodes, weights = [], []
    for i in range(dim):
        alpha = dim - 1 - i
        x, w = roots_jacobi(n1d, alpha, 0.0)
        # map from (-1,1) with weight (1-x)^alpha to (0,1) with (1-y)^alpha
        nodes.append(0.5 * (x + 1.0))
        weights.append(w / 2.0 ** (alpha + 1))
    grids = np.meshgrid(*nodes, indexing="ij")
    wgrids = np.meshgrid(*weights, indexing="ij")
    y = np.stack([g.ravel() for g in grids], axis=1)       # (n, dim)
    w = np.prod(np.stack([g.ravel() for g in wgrids], 1), axis=1)
    lam = np.empty((y.shape[0], dim + 1))
    rest = np.ones(y.shape[0])
    for i in range(dim):
        lam[:, i] = y[:, i] * rest
        rest = rest * (1.0 - y[:, i])
    lam[:, dim] = rest
    # weights currently integrate over the unit-volume parametrization of
    # the simplex {lam >= 0}, whose measure is 1/dim!; normalize to 1.
    w = w * factorial(dim)
    return lam, w


def gauss_legendre_interval(npts: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points/weights on the interval (a, b)."""
    x, w = np.polynomial.legendre.leggauss(npts)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def simplex_measure(verts: np.ndarray) -> np.ndarray:
    """k-measure of simplices embedded in R^m.

    verts has shape (..., k+1, m); uses the Gram determinant, so it works
    for flat simplices in higher-dimensional space.
    """
    verts = np.asarray(verts, dtype=float)
    k = verts.shape[-2] - 1
    edges = verts[..., 1:, :] - verts[..., :1, :]
    gram = edges @ np.swapaxes(edges, -1, -2)
    det = np.linalg.det(gram)
    return np.sqrt(np.maximum(det, 0.0)) / factorial(k)
