import itertools

import numpy as np
import pytest

from sttrace.quadrature import gauss_legendre_interval, simplex_measure, simplex_rule

from _oracles import simplex_monomial_integral


@pytest.mark.parametrize("dim", [1, 2, 3, 4])
@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_rule_exactness(dim, order):
    bary, w = simplex_rule(dim, order)
    assert np.all(w > 0)
    assert abs(w.sum() - 1.0) < 1e-13
    for alpha in itertools.product(range(order + 1), repeat=dim + 1):
        if sum(alpha) > order:
            continue
        approx = (w * np.prod(bary ** np.asarray(alpha), axis=1)).sum()
        exact = simplex_monomial_integral(alpha)
        assert abs(approx - exact) < 1e-13, (alpha, approx, exact)


def test_gauss_interval():
    x, w = gauss_legendre_interval(2, 0.0, 0.5)
    assert abs(w.sum() - 0.5) < 1e-15
    # degree-3 exactness
    assert abs((w * x ** 3).sum() - 0.5 ** 4 / 4) < 1e-15


def test_simplex_measure_flat_embedding():
    tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    assert abs(simplex_measure(tri[None])[0] - 0.5) < 1e-15
    seg = np.array([[0, 0], [3, 4]], dtype=float)
    assert abs(simplex_measure(seg[None])[0] - 5.0) < 1e-15


def test_simplex_measure_batch():
    rng = np.random.default_rng(1)
    tets = rng.uniform(-1, 1, size=(50, 4, 3))
    m = simplex_measure(tets)
    ref = np.abs(np.linalg.det(tets[:, 1:] - tets[:, :1])) / 6.0
    assert np.allclose(m, ref, rtol=1e-10)
