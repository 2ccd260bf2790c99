import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import ndimage

from divsplines.fixtures import DOMAINS, fig1_like, l_shape, named_domain, rectangle, u_domain
from divsplines.geometry import (AxisIsometry, Box, GraphDomain, GraphPiece, component_of, components,
                                 contains, domain_raster, dump_domain, load_domain, local_neighbourhood,
                                 neighbourhood, parse_domain, pruned_bbox, read_pgm, write_pgm)

EPS = 1 / 64


def strip_piece(rotation=0, translation=(0.0, 0.0)):
    return GraphDomain(((AxisIsometry(rotation, translation), GraphPiece(2.0, (-2.0, 2.0), (1.0, 1.0))),),
                       h0=0.5)


def flood_fill_count(mask):
    """Independent 4-connected component count by breadth-first search."""
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        count += 1
        stack = [start]
        seen[start] = True
        while stack:
            i, j = stack.pop()
            for a, b in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                if 0 <= a < mask.shape[0] and 0 <= b < mask.shape[1] and mask[a, b] and not seen[a, b]:
                    seen[a, b] = True
                    stack.append((a, b))
    return count


class TestAxisIsometry:
    @pytest.mark.parametrize("rotation", range(4))
    def test_inverse_round_trip(self, rotation):
        s = AxisIsometry(rotation, (0.3, -1.7))
        pts = np.random.default_rng(rotation).normal(size=(20, 2))
        np.testing.assert_allclose(s.inverse().apply(s.apply(pts)), pts, atol=1e-14)
        ident = s.inverse().compose(s)
        assert ident.rotation == 0
        np.testing.assert_allclose(ident.translation, 0, atol=1e-14)

    def test_quarter_turn(self):
        np.testing.assert_allclose(AxisIsometry(1).apply([1.0, 0.0]), [0.0, 1.0], atol=1e-15)


class TestContains:
    def test_interior(self):
        assert contains(strip_piece(), (0.0, 0.5))

    def test_boundary_excluded(self):
        assert not contains(strip_piece(), (0.0, 1.0))
        assert not contains(strip_piece(), (0.0, 0.0))
        assert not contains(strip_piece(), (2.0, 0.5))

    def test_rotated_piece(self):
        assert contains(strip_piece(rotation=1), (-0.5, 0.0))
        assert not contains(strip_piece(rotation=1), (0.5, 0.0))

    def test_delta_margin(self):
        iso, piece = strip_piece().pieces[0]
        d = GraphDomain(((iso, piece),), h0=0.5, delta=0.25)
        assert not contains(d, (0.0, 0.2)) and contains(d, (0.0, 0.3))
        assert not contains(d, (1.8, 0.5))

    def test_piece_invariants(self):
        with pytest.raises(ValueError):
            GraphPiece(1.0, (0.0, 1.0), (1.0, 1.0))  # does not cover [-a, a]
        with pytest.raises(ValueError):
            GraphDomain(((AxisIsometry(), GraphPiece(1.0, (-1.0, 1.0), (0.4, 0.4))),), h0=0.5)

    def test_vectorised(self):
        pts = np.array([[0.0, 0.5], [0.0, 2.0]])
        assert contains(strip_piece(), pts).tolist() == [True, False]


class TestBoxes:
    def test_neighbourhood(self):
        assert neighbourhood(Box((0, 0), (1, 2)), (1, 1)) == Box((-1, -1), (2, 3))

    def test_zero_neighbourhood_is_box(self):
        M = Box((0.2, 0.1), (0.7, 0.4))
        assert neighbourhood(M, (0, 0)) == M

    def test_unbounded_strip(self):
        N = neighbourhood(Box((1, 1), (2, 2)), (np.inf, 0))
        assert N.lo == (-np.inf, 1.0) and N.hi == (np.inf, 2.0)

    def test_negative_width_rejected(self):
        with pytest.raises(ValueError):
            neighbourhood(Box((0, 0), (1, 1)), (-1, 0))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 3), st.floats(0, 3))
    def test_neighbourhood_characterisation(self, px, py, h1, h2):
        # x lies in N(M, h) iff adding it grows the box by at most h per axis
        M = Box((0, 0), (1, 2))
        # points within rounding distance of the boundary are ambiguous in floating point
        assume(min(abs(px + h1), abs(px - 1 - h1), abs(py + h2), abs(py - 2 - h2)) > 1e-9)
        grown = Box.bounding([M.lo, M.hi, (px, py)])
        within = grown.size[0] <= M.size[0] + h1 and grown.size[1] <= M.size[1] + h2
        assert within == neighbourhood(M, (h1, h2)).contains((px, py))


class TestComponents:
    def test_convex(self):
        comps = components(rectangle(), Box((1, 0.2), (2, 0.8)), EPS)
        assert len(comps) == 1
        b = comps[0].bbox
        np.testing.assert_allclose(b.lo, (1, 0.2), atol=EPS)
        np.testing.assert_allclose(b.hi, (2, 0.8), atol=EPS)

    def test_u_fingers(self):
        comps = components(u_domain(), Box((0, 2), (4, 3)), EPS)
        assert len(comps) == 2
        np.testing.assert_allclose(comps[0].bbox.lo, (0, 2), atol=EPS)
        np.testing.assert_allclose(comps[0].bbox.hi, (1, 3), atol=EPS)
        np.testing.assert_allclose(comps[1].bbox.lo, (3, 2), atol=EPS)
        np.testing.assert_allclose(comps[1].bbox.hi, (4, 3), atol=EPS)

    def test_u_base_connected(self):
        assert len(components(u_domain(), Box((0, 0.2), (4, 0.8)), EPS)) == 1

    def test_empty(self):
        assert components(rectangle(), Box((10, 10), (11, 11)), EPS) == []

    def test_unbounded_box_clipped(self):
        comps = components(u_domain(), Box((-np.inf, 2), (np.inf, 3)), EPS)
        assert len(comps) == 2

    def test_component_of(self):
        comps = components(u_domain(), Box((0, 2), (4, 3)), EPS)
        assert component_of(comps, (0.5, 2.5)) is comps[0]
        assert component_of(comps, (3.5, 2.5)) is comps[1]
        assert component_of(comps, (2.0, 2.5)) is None
        assert component_of(comps, (0.5, 3.5)) is None

    @pytest.mark.parametrize("name", ["u-domain", "fig1-like", "spike", "l-shape"])
    def test_against_flood_fill(self, name):
        d = named_domain(name)
        rng = np.random.default_rng(1)
        r = domain_raster(d, 1 / 32)
        bb = d.bbox()
        for _ in range(20):
            lo = rng.uniform(bb.lo, bb.hi)
            M = Box(tuple(lo), tuple(lo + rng.uniform(0.2, 3.0, 2)))
            comps = components(d, M, raster=r)
            sx, sy = r.cell_range(M.intersect(r.extent))
            assert len(comps) == flood_fill_count(r.mask[sx, sy])
            for c in comps:
                assert d.contains(c.centers()).all()
                assert ndimage.label(c.cells)[1] == 1

    def test_ids_follow_smallest_cell(self):
        comps = components(fig1_like(), Box((1.7, 1.2), (2.3, 2.0)), 1 / 128)
        firsts = [c.first_cell() for c in comps]
        assert [c.id for c in comps] == list(range(len(comps)))
        assert firsts == sorted(firsts)

    @pytest.mark.parametrize("factory", [u_domain, l_shape, rectangle])
    def test_resolution_stability(self, factory):
        d = factory()
        bb = d.bbox()
        rng = np.random.default_rng(2)
        boxes = [Box(tuple(lo), tuple(lo + rng.uniform(0.3, 2.0, 2)))
                 for lo in rng.uniform(bb.lo, bb.hi, (30, 2))]
        for M in boxes:
            assert len(components(d, M, 1 / 64)) == len(components(d, M, 1 / 128))

    @pytest.mark.parametrize("rotation", [1, 2, 3])
    def test_isometry_equivariance(self, rotation):
        d = u_domain()
        s = AxisIsometry(rotation, (0.5, -0.25))
        rotated = GraphDomain(tuple((s.compose(iso), p) for iso, p in d.pieces), d.h0, d.delta, "rot")
        M = Box((-0.5, 1.5), (4.5, 3.0))
        base = components(d, M, EPS)
        moved = components(rotated, s.apply_box(M), EPS)
        assert len(base) == len(moved)
        want = sorted(tuple(np.round(s.apply_box(c.bbox).lo, 6)) for c in base)
        got = sorted(tuple(np.round(c.bbox.lo, 6)) for c in moved)
        np.testing.assert_allclose(got, want, atol=2 * EPS)


class TestPrunedAndLocal:
    def test_convex_pruned_is_box(self):
        d = rectangle()
        M = components(d, Box((1, 0.2), (1.5, 0.6)), EPS)[0]
        P = pruned_bbox(d, M)
        assert P.n_cells == M.n_cells

    def test_u_finger_only(self):
        d = u_domain()
        finger = components(d, Box((0, 2), (1, 3)), EPS)[0]
        P = pruned_bbox(d, finger)
        assert P.bbox.hi[0] <= 1 + EPS
        N = local_neighbourhood(d, finger, (1.5, 0.5))
        assert N.bbox.hi[0] <= 1 + EPS and N.bbox.lo[1] < 2
        assert N.includes(finger)

    def test_single_cell(self):
        d = u_domain()
        P = pruned_bbox(d, Box((3.5, 3.5), (3.5 + EPS, 3.5 + EPS)), EPS)
        assert P.n_cells == 1

    def test_zero_neighbourhood_is_pruned(self):
        d = fig1_like()
        M = components(d, Box((1.8, 1.5), (1.9, 2.0)), 1 / 128)[0]
        assert local_neighbourhood(d, M, (0, 0)).n_cells == pruned_bbox(d, M).n_cells

    def test_neighbourhood_wraps_through_base(self):
        d = u_domain()
        finger = components(d, Box((0, 1.5), (1, 2)), EPS)[0]
        N = local_neighbourhood(d, finger, (3.0, 1.0))
        assert N.contains((3.5, 1.2)) and not N.contains((2.0, 1.5))


@pytest.mark.parametrize("name", ["rectangle", "spike", "fig1-like"])
def test_overlap_property(name):
    # connected subsets with |M| <= 2 h0 fit inside one chart
    d = named_domain(name)
    r = domain_raster(d, 1 / 32)
    rng = np.random.default_rng(3)
    ix, iy = np.nonzero(r.mask)
    for _ in range(100):
        k = rng.integers(ix.size)
        c = np.array([r.xc[ix[k]], r.yc[iy[k]]])
        size = rng.uniform(0.1, 2 * d.h0, 2)
        lo = c - rng.uniform(0, 1, 2) * size
        M = components(d, Box(tuple(lo), tuple(lo + size)), raster=r)
        piece = component_of(M, c)
        assert d.chart_containing(piece.centers()) is not None


def test_u_domain_overlap_counterexample():
    # with h0 = 2 a set of width < 2 h0 can run finger-base-finger, which no chart holds
    d = u_domain()
    M = components(d, Box((0.5, 0.5), (3.5, 3.5)), EPS)
    assert len(M) == 1
    assert M[0].bbox.size[0] <= 2 * d.h0
    assert d.chart_containing(M[0].centers()) is None


def test_domain_file_round_trip(tmp_path):
    for factory in DOMAINS.values():
        d = factory()
        path = tmp_path / f"{d.name}.ini"
        path.write_text(dump_domain(d))
        assert load_domain(path) == d
        assert parse_domain(dump_domain(d)) == d


def test_pgm_round_trip(tmp_path):
    img = (np.arange(35).reshape(7, 5) * 7).astype(np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)
