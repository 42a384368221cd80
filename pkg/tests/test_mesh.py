import numpy as np
import pytest
from hypothesis import given, settings, strategies as st_

from sttrace.mesh import (SpatialMesh, TimePartition, interface_mark,
                          kuhn_box_mesh, point_locate, refine_elements,
                          refine_near_interface)


def unit_circle(x, t):
    x = np.atleast_2d(x)
    return np.sqrt((x ** 2).sum(1)) - 1.0


class TestKuhn:
    def test_paper_domain_3d(self):
        m = kuhn_box_mesh([(-3, 3), (-2, 2), (-2, 2)], 2.0)
        assert m.n_elements == 72          # 12 cubes x 6 tetrahedra
        assert abs(m.volumes().sum() - 96.0) < 1e-12 * 96

    def test_single_square(self):
        m = kuhn_box_mesh([(0, 2), (0, 2)], 2.0)
        assert m.n_elements == 2

    def test_two_squares(self):
        m = kuhn_box_mesh([(0, 4), (0, 2)], 2.0)
        assert m.n_elements == 4
        assert m.n_vertices == 6

    def test_indivisible_box_rejected(self):
        with pytest.raises(ValueError):
            kuhn_box_mesh([(0, 3), (0, 2)], 2.0)

    def test_elements_sorted_and_nondegenerate(self):
        m = kuhn_box_mesh([(-2, 2), (-2, 2), (-2, 2)], 2.0)
        assert np.all(np.diff(m.elements, axis=1) > 0)
        assert np.all(m.volumes() > 0)

    @given(nx=st_.integers(1, 3), ny=st_.integers(1, 3), h=st_.sampled_from([0.5, 1.0, 2.0]))
    @settings(max_examples=20, deadline=None)
    def test_volume_partition_2d(self, nx, ny, h):
        m = kuhn_box_mesh([(0, nx * h), (0, ny * h)], h)
        assert m.n_elements == 2 * nx * ny
        assert abs(m.volumes().sum() - nx * ny * h * h) < 1e-12 * nx * ny * h * h


class TestRefinement:
    def test_children_preserve_volume(self):
        for box in ([(0, 2), (0, 2)], [(0, 2), (0, 2), (0, 2)]):
            m = kuhn_box_mesh(box, 2.0)
            vol0 = m.volumes().sum()
            parent_vol = m.volumes()[0]
            r = refine_elements(m, np.arange(m.n_elements) == 0)
            children = r.levels == 1
            assert children.sum() == (4 if m.d == 2 else 8)
            assert abs(r.volumes()[children].sum() - parent_vol) < 1e-12 * parent_vol
            assert abs(r.volumes().sum() - vol0) < 1e-12 * vol0

    def test_unchanged_when_level_reached(self):
        m = kuhn_box_mesh([(-2, 2), (-2, 2)], 2.0)
        r = refine_near_interface(m, unit_circle, (0.0,), 2)
        r2 = refine_near_interface(r, unit_circle, (0.0,), 2)
        assert r2.n_elements == r.n_elements
        assert np.array_equal(r2.elements, r.elements)

    def test_circle_band_fully_refined(self):
        m = kuhn_box_mesh([(-2, 2), (-2, 2)], 2.0)
        r = refine_near_interface(m, unit_circle, (0.0,), 3)
        h3 = 2.0 ** (1 - 3)
        centroids = r.element_coords().mean(axis=1)
        dist = np.abs(np.sqrt((centroids ** 2).sum(1)) - 1.0)
        # every element within the band has the target level ...
        assert np.all(r.levels[dist <= h3] == 3)
        # ... and the target level stays confined to a narrow collar
        assert dist[r.levels == 3].max() <= 4 * h3
        assert np.all(r.levels[dist > 1.0] < 3)
        assert abs(r.volumes().sum() - 16.0) < 1e-12 * 16

    def test_colliding_shells_disjoint(self):
        from sttrace.problems import get_problem

        prob = get_problem("colliding_spheres")
        m = kuhn_box_mesh(prob.box, 2.0)
        r = refine_near_interface(m, prob.phi, (0.0,), 2)
        refined = np.nonzero(r.levels == 2)[0]
        nbr = r.neighbors()
        # connected components of the refined band via face adjacency
        idx = {e: i for i, e in enumerate(refined)}
        parent = list(range(len(refined)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, e in enumerate(refined):
            for nb in nbr[e]:
                if nb >= 0 and int(nb) in idx:
                    ri, rj = find(i), find(idx[int(nb)])
                    if ri != rj:
                        parent[ri] = rj
        comps = {find(i) for i in range(len(refined))}
        assert len(comps) == 2


class TestPointLocate:
    def test_barycenter_roundtrip(self):
        m = kuhn_box_mesh([(-2, 2), (-2, 2)], 2.0)
        for k in (0, 3, m.n_elements - 1):
            c = m.element_coords([k])[0].mean(axis=0)
            assert point_locate(m, c) == k

    def test_outside(self):
        m = kuhn_box_mesh([(0, 2), (0, 2)], 2.0)
        assert point_locate(m, [3.0, 0.5]) is None

    def test_shared_face_lowest_index(self):
        m = kuhn_box_mesh([(0, 2), (0, 2)], 2.0)
        # the two triangles share the main diagonal
        shared = np.array([1.0, 1.0])
        assert point_locate(m, shared) == 0
        # exhaustive: any diagonal point reports element 0
        for s in np.linspace(0.1, 1.9, 7):
            assert point_locate(m, [s, s]) == 0

    @given(st_.floats(-1.99, 1.99), st_.floats(-1.99, 1.99))
    @settings(max_examples=40, deadline=None)
    def test_membership_property(self, x, y):
        m = kuhn_box_mesh([(-2, 2), (-2, 2)], 1.0)
        e = point_locate(m, [x, y])
        assert e is not None
        lam = m.barycentric(np.asarray([e]), np.asarray([[x, y]]))[0]
        assert np.all(lam >= -1e-12) and np.all(lam <= 1 + 1e-12)


class TestTimePartition:
    def test_nodes(self):
        p = TimePartition(1.0, 4)
        assert np.allclose(p.nodes, [0, 0.25, 0.5, 0.75, 1.0])
        assert p.interval(0) == (0.0, 0.25)
        assert p.interval(3) == (0.75, 1.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            TimePartition(1.0, 0)


def test_interface_mark_band_without_sign_change():
    # a surface just outside the box never changes sign inside, but the
    # safety band still marks the elements it could sweep through
    m = kuhn_box_mesh([(0, 2), (0, 2)], 1.0)

    def phi(x, t):
        return np.atleast_2d(x)[:, 0] - 2.2

    mark = interface_mark(m, phi, (0.0, 0.5, 1.0), band_factor=0.3)
    right = m.element_coords().max(axis=1)[:, 0] > 1.9
    assert np.array_equal(mark, right)
