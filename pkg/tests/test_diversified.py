import warnings

import numpy as np
import pytest

from divsplines.diversified import (AdmissibilityWarning, DiversifiedSpace, DivIndex, TensorSpace,
                                    cell_components, condense_2d, enumerate_diversified, eval_cdb)
from divsplines.fixtures import fig1_like, named_domain, rectangle, spike, thin_slab, u_domain
from divsplines.geometry import Box, components
from divsplines.quasi import sample_points
from divsplines.univariate import KnotWindow, eval_bspline

ORDERS = [(2, 2), (3, 3), (3, 2)]


def space(domain, h, n):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AdmissibilityWarning)
        return TensorSpace.uniform(domain, h, n)


def div(domain, h, n, eps=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AdmissibilityWarning)
        return DiversifiedSpace(space(domain, h, n), domain, eps)


def admissible_h(domain, n, level=0):
    return domain.h0 / (max(n) + 1) / 2 ** level


@pytest.fixture(scope="module")
def u_split():
    # h = 0.8 lets order-3 supports span the gap between the fingers
    return div(u_domain(), 0.8, (3, 3))


class TestTensorSpace:
    def test_admissibility_warning(self):
        d = rectangle()
        with pytest.warns(AdmissibilityWarning):
            DiversifiedSpace(TensorSpace.uniform(d, 0.5, (3, 3)), d)

    def test_admissible_no_warning(self):
        d = rectangle()
        with warnings.catch_warnings():
            warnings.simplefilter("error", AdmissibilityWarning)
            DiversifiedSpace(TensorSpace.uniform(d, 0.125, (3, 3)), d)

    def test_window_must_cover_box(self):
        T = KnotWindow(np.linspace(0, 4, 9), 3)
        with pytest.raises(ValueError, match="underflow"):
            TensorSpace(T, T, Box((0, 0), (4, 1)))

    def test_from_spec_kinds(self):
        box = Box((0, 0), (1, 1))
        knots = np.linspace(-1, 2, 13)
        sp = TensorSpace.from_spec(box, [{"kind": "explicit", "knots": knots},
                                         {"kind": "perturbed", "h": 0.25, "jitter": 0.3}], (2, 3), seed=4)
        np.testing.assert_array_equal(sp.T[0].knots, knots)
        again = TensorSpace.from_spec(box, [{"kind": "explicit", "knots": knots},
                                            {"kind": "perturbed", "h": 0.25, "jitter": 0.3}], (2, 3), seed=4)
        np.testing.assert_array_equal(sp.T[1].knots, again.T[1].knots)
        assert sp.n == (2, 3) and sp.nbar == 3

    def test_aspect_ratio(self):
        assert space(rectangle(), (1 / 8, 1 / 32), (2, 2)).aspect_ratio == pytest.approx(4)


class TestEnumerate:
    def test_convex_matches_active_set(self):
        d = rectangle()
        sp = space(d, 0.125, (3, 2))
        idx = enumerate_diversified(sp, d)
        assert all(j.gamma == 0 for j in idx)
        active = {(i1, i2) for i1 in sp.T[0].spline_indices() for i2 in sp.T[1].spline_indices()
                  if sp.support((i1, i2)).intersect(Box((0, 0), (4, 1))) is not None
                  and min(sp.support((i1, i2)).intersect(Box((0, 0), (4, 1))).size) > 0}
        assert {j.i for j in idx} == active

    def test_ordering_lexicographic(self, u_split):
        idx = u_split.indices
        assert idx == sorted(idx)

    def test_components_match_oracle(self, u_split):
        ds = u_split
        split = 0
        for p1, p2 in np.argwhere(ds.ncomp >= 0):
            i = (int(p1) + ds.space.T[0].offset, int(p2) + ds.space.T[1].offset)
            oracle = components(ds.domain, ds.space.support(i), raster=ds.raster)
            assert len(oracle) == ds.ncomp[p1, p2]
            split += len(oracle) == 2
        assert split > 0

    def test_gap_spanning_support_has_two_entries(self, u_split):
        ds = u_split
        p1, p2 = np.argwhere(ds.ncomp == 2)[0]
        i1, i2 = int(p1) + ds.space.T[0].offset, int(p2) + ds.space.T[1].offset
        S = ds.space.support((i1, i2))
        assert S.lo[0] < 1 and S.hi[0] > 3 and S.lo[1] >= 1
        assert [j for j in ds.indices if j.i == (i1, i2)] == [DivIndex(i1, i2, 0), DivIndex(i1, i2, 1)]

    def test_disjoint_support_has_no_entry(self, u_split):
        ds = u_split
        with pytest.raises(KeyError):
            ds.index_of(DivIndex(ds.space.T[0].last, ds.space.T[1].last, 0))


class TestCondense2D:
    def test_interior_rectangle_uncondensed(self):
        d = rectangle()
        sp = space(d, 0.125, (3, 3))
        ds = DiversifiedSpace(sp, d)
        j = ds.index_of(DivIndex(12, 2, 0))
        c = ds.cdb(j)
        assert c.condensed == (False, False)
        assert c.tstar[0] is sp.T[0] and c.tstar[1] is sp.T[1]
        pts = sample_points(d, 300, seed=1)
        want = eval_bspline(sp.T[0], 12, pts[:, 0]) * eval_bspline(sp.T[1], 2, pts[:, 1])
        np.testing.assert_allclose(eval_cdb(c, pts), want, atol=1e-15)

    def test_thin_slab_collapses_x2(self):
        d = thin_slab()
        ds = div(d, (0.01, 0.1), (3, 3))
        j = ds.n_splines // 2
        c = ds.cdb(j)
        assert c.condensed == (False, True)
        assert c.omega[1] == pytest.approx((0.0, 0.05))
        T2 = c.tstar[1]
        assert T2.knots.min() == pytest.approx(0.0) and T2.knots.max() == pytest.approx(0.05)
        # Bernstein-like: the x2 factors of one column form a partition of unity on the slab
        x2 = np.linspace(0.001, 0.049, 7)
        col = [jj for jj in range(ds.n_splines) if ds.i1[jj] == c.j.i1]
        total = sum(ds.factor_values(np.full(7, jj), x2, 1) for jj in col)
        np.testing.assert_allclose(total, 1.0, atol=1e-13)

    def test_fig1_components_condense_differently(self):
        d = fig1_like()
        ds = div(d, admissible_h(d, (3, 3)), (3, 3))
        differ = 0
        for p1, p2 in np.argwhere(ds.ncomp > 1):
            j0 = int(ds.jfirst[p1, p2])
            c1, c2 = ds.cdb(j0), ds.cdb(j0 + 1)
            differ += not np.array_equal(c1.tstar[0].knots, c2.tstar[0].knots)
            assert c1.unrestricted_support() != c2.unrestricted_support() or \
                c1.tstar[1].knots.tolist() != c2.tstar[1].knots.tolist() or \
                c1.tstar[0].knots.tolist() == c2.tstar[0].knots.tolist()
        assert differ > 0

    def test_condense_2d_wrapper(self):
        d = u_domain()
        sp = space(d, 0.5, (3, 3))
        j = enumerate_diversified(sp, d)[5]
        assert condense_2d(sp, d, j).j == j

    @pytest.mark.parametrize("name", ["rectangle", "u-domain", "fig1-like", "spike"])
    def test_support_equality_and_size(self, name):
        d = named_domain(name)
        n = (3, 3)
        ds = div(d, admissible_h(d, n), n)
        h = ds.space.h
        for j in range(0, ds.n_splines, 7):
            c = ds.cdb(j)
            sx, sy, cells = ds.gamma_cells(j)
            b1 = ds.factor_values(np.full(sx.stop - sx.start, j), ds.raster.xc[sx], 0)
            b2 = ds.factor_values(np.full(sy.stop - sy.start, j), ds.raster.yc[sy], 1)
            positive = (np.outer(b1, b2) > 0) & ds.raster.mask[sx, sy]
            np.testing.assert_array_equal(positive, cells)
            assert ds.space.support(c.j.i).includes(c.support, tol=1e-12)
            assert c.support.size[0] <= ds.space.nbar * h[0] + 1e-12
            assert c.support.size[1] <= ds.space.nbar * h[1] + 1e-12

    def test_outside_gamma_is_zero(self, u_split):
        ds = u_split
        p1, p2 = np.argwhere(ds.ncomp == 2)[0]
        j0 = int(ds.jfirst[p1, p2])
        left, right = ds.cdb(j0), ds.cdb(j0 + 1)
        x_right = right.mask.centers()[:5]
        assert np.all(eval_cdb(left, x_right) == 0)
        assert np.all(eval_cdb(right, x_right) > 0)

    @pytest.mark.parametrize("name", ["rectangle", "spike", "fig1-like"])
    def test_upright_pieces_keep_x2_knots(self, name):
        d = named_domain(name)
        ds = div(d, admissible_h(d, (3, 3)), (3, 3))
        assert np.all(ds.window_id[1] < 0)


class TestPartitionAndRepresentation:
    @pytest.mark.parametrize("n", ORDERS)
    @pytest.mark.parametrize("name", ["rectangle", "l-shape", "u-domain", "fig1-like"])
    def test_partition_of_unity(self, name, n):
        d = named_domain(name)
        ds = div(d, admissible_h(d, n), n)
        pts = sample_points(d, 2000, seed=5)
        vals = ds.evaluate(np.ones(ds.n_splines), pts)
        assert np.abs(vals - 1).max() <= 1e-10

    def test_direct_summation_matches(self):
        d = u_domain()
        ds = div(d, 0.5, (3, 2))
        rng = np.random.default_rng(0)
        s = rng.normal(size=ds.n_splines)
        pts = sample_points(d, 60, seed=2, raster=ds.raster)
        direct = sum(s[j] * ds.cdb(j)(pts) for j in range(ds.n_splines))
        np.testing.assert_allclose(ds.evaluate(s, pts), direct, atol=1e-12)

    @pytest.mark.parametrize("name", ["u-domain", "fig1-like", "l-shape"])
    def test_grouped_local_representation(self, name):
        d = named_domain(name)
        n = (3, 3)
        ds = div(d, admissible_h(d, n), n)
        rng = np.random.default_rng(1)
        s = rng.normal(size=ds.n_splines)
        pts = sample_points(d, 400, seed=3, raster=ds.raster)
        J, ok, where = ds.locate_j(pts)
        assert ok.all()
        grouped = np.zeros(len(pts))
        for m in range(len(pts)):
            js = J[m][J[m] >= 0]
            for i2 in np.unique(ds.i2[js]):
                grp = js[ds.i2[js] == i2]
                # x1 knot sequences depend only on i2 within a cell component
                assert len({int(ds.window_id[0, j]) for j in grp}) == 1
                b2 = ds.factor_values(grp[:1], where[m:m + 1, 1], 1)[0]
                inner = np.sum(s[grp] * ds.factor_values(grp, np.full(len(grp), where[m, 0]), 0))
                grouped[m] += b2 * inner
        np.testing.assert_allclose(grouped, ds.evaluate(s, pts), atol=1e-12)

    def test_raster_evaluation_matches_points(self):
        d = fig1_like()
        ds = div(d, 0.125, (3, 3))
        s = np.random.default_rng(2).normal(size=ds.n_splines)
        img = ds.evaluate_on_raster(s)
        ix, iy = np.nonzero(ds.raster.mask)
        pts = np.stack([ds.raster.xc[ix], ds.raster.yc[iy]], axis=-1)
        np.testing.assert_allclose(img[ix, iy], ds.evaluate(s, pts), atol=1e-12)

    def test_boundary_points_are_evaluated(self):
        d = spike()
        ds = div(d, 0.125, (3, 3))
        pts = sample_points(d, 3000, seed=9)
        vals = ds.evaluate(np.ones(ds.n_splines), pts)
        assert np.isfinite(vals).all()

    @pytest.mark.parametrize("name", ["rectangle", "u-domain", "fig1-like"])
    def test_norm_bound(self, name):
        d = named_domain(name)
        n = (3, 3)
        ds = div(d, admissible_h(d, n), n)
        r = ds.raster
        img = ds.cell_labels()[0]
        area = np.outer(r.dx, r.dy)
        for j in range(0, ds.n_splines, 3):
            sx, sy, cells = ds.gamma_cells(j)
            b = np.outer(ds.factor_values(np.full(sx.stop - sx.start, j), r.xc[sx], 0),
                         ds.factor_values(np.full(sy.stop - sy.start, j), r.yc[sy], 1)) * cells
            labels = img[sx, sy]
            bound = ds.hstar[0, j] * ds.hstar[1, j]
            for ell in np.unique(labels[cells]):
                sel = labels == ell
                for p in (1, 2):
                    assert np.sum(b[sel] ** p * area[sx, sy][sel]) <= bound * (1 + 1e-12)


class TestCellComponents:
    def test_interior_cell_rectangle(self):
        d = rectangle()
        sp = space(d, 0.125, (2, 2))
        cells = cell_components(sp, d)
        interior = [c for c in cells if c.k == (10, 3)]
        assert len(interior) == 1 and len(interior[0].J) == 4

    @pytest.mark.parametrize("n", ORDERS)
    @pytest.mark.parametrize("name", ["l-shape", "u-domain", "fig1-like", "spike"])
    def test_bounds_and_cover(self, name, n):
        d = named_domain(name)
        sp = space(d, admissible_h(d, n), n)
        ds = DiversifiedSpace(sp, d)
        cells = cell_components(sp, d)
        cover = np.zeros(ds.raster.shape, dtype=int)
        for c in cells:
            assert 1 <= len(c.J) <= n[0] * n[1]
            cover[c.mask.slices] += c.mask.cells
            boxes = [ds.cdb(ds.index_of(j)).support for j in c.J]
            lo = np.min([b.lo for b in boxes], axis=0)
            hi = np.max([b.hi for b in boxes], axis=0)
            assert np.all(hi - lo <= (2 * sp.nbar - 1) * np.array(sp.h) + 1e-12)
        np.testing.assert_array_equal(cover, ds.raster.mask.astype(int))

    def test_finger_cell_excludes_other_finger(self, u_split):
        ds = u_split
        sp, d = ds.space, ds.domain
        cells = cell_components(sp, d)
        probe = np.array([0.9, 3.3])
        cell = next(c for c in cells if c.mask.contains(probe))
        for j in cell.J:
            assert ds.cdb(ds.index_of(j)).mask.contains(probe)
        split = [j for j in cell.J if ds.ncomp[j.i1 - sp.T[0].offset, j.i2 - sp.T[1].offset] == 2]
        assert split and all(j.gamma == 0 for j in split)


@pytest.mark.parametrize("n", ORDERS)
@pytest.mark.parametrize("name", ["rectangle", "l-shape", "u-domain", "fig1-like", "spike"])
def test_resolution_stability_of_supports(name, n):
    d = named_domain(name)
    for level in range(3):
        ds = div(d, admissible_h(d, n, level), n)
        fine = div(d, admissible_h(d, n, level), n, eps=np.array(ds.eps) / 2)
        np.testing.assert_array_equal(ds.ncomp, fine.ncomp)
