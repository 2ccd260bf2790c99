"""Quasi-interpolation with cdB-splines.

For every cdB-spline ``B_j^*`` the coefficient functional is
``Q_j f = P_j(A_j f)``: ``A_j`` is the L2 projection onto polynomials of
coordinate degree ``< n`` over a box ``H_j^*`` inside the domain, and
``P_j`` evaluates the resulting polynomial on a uniform grid in the largest
subcell of the condensed support and applies the dual weights.  Since both
maps are linear, ``Q_j f = k_1^T F k_2`` where ``F`` holds the values of
``f`` at tensor Gauss nodes on ``H_j^*``; the kernels ``k_sigma`` are
precomputed once per space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .diversified import CdBSpline, DiversifiedSpace, DivIndex, TensorSpace, build_diversified
from .geometry import Box, ComponentMask, GraphDomain, local_neighbourhood, neighbourhood
from .univariate import dual_weights, dual_weights_batch, gauss_rule, legendre_values

__all__ = [
    "HStarNotFound",
    "PjFunctional",
    "LocalBoxes",
    "LocalProjector",
    "QuasiInterpolant",
    "QuasiInterpolantResult",
    "build_pj",
    "find_hstar",
    "project_local",
    "quasi_interpolate",
    "eval_Q",
    "reproduce_poly_check",
    "monomial",
    "sample_points",
    "functional_bound_ratios",
    "functional_norms",
    "local_stability_ratios",
]

HSTAR_MESSAGE = "H* not found (domain/grid violates h ≤ h₀/(n̄+1) assumptions)"


class HStarNotFound(RuntimeError):
    """No box of size ``h_j^*`` fits into ``S_j^+``."""

    def __init__(self, j=None, detail: str = ""):
        msg = HSTAR_MESSAGE if j is None else f"{HSTAR_MESSAGE}: j = {tuple(j)}"
        super().__init__(msg + (f" ({detail})" if detail else ""))
        self.j = j


Field = Callable[[np.ndarray], np.ndarray]


def monomial(d1: int, d2: int) -> Field:
    def p(x):
        x = np.asarray(x, dtype=float)
        return x[..., 0] ** d1 * x[..., 1] ** d2
    p.__name__ = f"x1^{d1} x2^{d2}"
    return p


@dataclass(frozen=True)
class PjFunctional:
    """``P_j p = sum_m1 sum_m2 w_1[m1] w_2[m2] p(lambda_1[m1], lambda_2[m2])``."""

    j: DivIndex
    points: tuple[np.ndarray, np.ndarray]
    weights: tuple[np.ndarray, np.ndarray]
    anchors: tuple[tuple[float, float], tuple[float, float]]

    def __call__(self, p: Field) -> float:
        X, Y = np.meshgrid(self.points[0], self.points[1], indexing="ij")
        vals = p(np.stack([X, Y], axis=-1))
        return float(self.weights[0] @ vals @ self.weights[1])


def build_pj(c: CdBSpline) -> PjFunctional:
    d = [dual_weights(c.tstar[s], c.j[s]) for s in range(2)]
    return PjFunctional(c.j, (d[0].points, d[1].points), (d[0].weights, d[1].weights),
                        (d[0].anchor, d[1].anchor))


@dataclass(frozen=True, eq=False)
class LocalBoxes:
    """``S_j^+`` (may be ``None`` when the anchored box was accepted), ``H_j^*`` and ``H_j^+``."""

    splus: ComponentMask | None
    hstar: Box
    hplus: Box
    anchored: bool


def _cells(edges: np.ndarray, lo, hi, tol):
    # raster cells meeting the open interval (lo, hi)
    a = np.searchsorted(edges, lo + tol, "right") - 1
    b = np.searchsorted(edges, hi - tol, "left")
    return a, b


def _anchored_search(ds: DiversifiedSpace, js: np.ndarray, ranges, cells_of=None):
    """Boxes ``omega' x [bottom - h2*, bottom]`` just below ``S_j``.

    ``omega'`` has length ``h1*``, lies in ``omega_{1,j}`` and meets the bottom
    row of ``S_j`` (given by ``cells_of`` per j, or the full block range when
    ``None``).  ``ranges`` holds the raster cell ranges of the tight box of every
    ``S_j``.  Candidates ``x0`` are the raster edges inside ``S_j`` from left to
    right, then those left of ``S_j`` moving outwards.  Returns ``x0`` per j (``nan`` where no candidate fits).
    """
    r = ds.raster
    (ix0, ix1), (iy0, _) = ranges
    h1 = ds.hstar[0, js]
    h2 = ds.hstar[1, js]
    wlo, whi = ds.omega_lo[0, js], ds.omega_hi[0, js]
    tol = 1e-9 * min(ds.space.h)
    ybot = r.y_edges[iy0]
    ra, rb = _cells(r.y_edges, ybot - h2, ybot, tol)
    valid = (ybot - h2 >= r.y_edges[0] - tol) & (rb == iy0)
    k0 = np.searchsorted(r.x_edges, np.maximum(wlo, r.x_edges[ix0] - h1) - tol, "left")
    found = np.full(js.size, np.nan)
    inner = ix1 - ix0
    for k in range(int((ix1 - np.minimum(k0, ix0)).max(initial=0))):
        cand = np.where(k < inner, ix0 + k, ix0 - 1 - (k - inner))
        todo = valid & np.isnan(found) & (cand >= k0) & (cand < ix1)
        if not todo.any():
            continue
        x0 = r.x_edges[np.clip(cand, 0, r.x_edges.size - 1)]
        ca, cb = _cells(r.x_edges, x0, x0 + h1, tol)
        ok = todo & (x0 + h1 <= np.minimum(whi, r.x_edges[-1]) + tol) & (cb > ix0)
        cnt = np.zeros(js.size, dtype=np.int64)
        cnt[ok] = r.count(ca[ok], cb[ok], ra[ok], rb[ok])
        ok &= cnt == (cb - ca) * (rb - ra)
        if cells_of is not None:
            # the box must touch the component itself, not only its block
            for m in np.nonzero(ok)[0]:
                if not cells_of[m][ca[m]:cb[m]].any():
                    ok[m] = False
        found[ok] = x0[ok]
    return found


def _scan(ds: DiversifiedSpace, j: int, splus: ComponentMask):
    """First anchor (row-major: lowest row, then lowest column) of an ``h_j^*`` box in ``S_j^+``."""
    r = ds.raster
    h1, h2 = ds.hstar[0, j], ds.hstar[1, j]
    tol = 1e-9 * min(ds.space.h)
    cells = splus.cells
    sat = np.zeros((cells.shape[0] + 1, cells.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = cells.cumsum(0).cumsum(1)
    iy, ix = np.nonzero(cells.T)  # row-major over (iy, ix)
    gx, gy = ix + splus.ix0, iy + splus.iy0
    x0, y0 = r.x_edges[gx], r.y_edges[gy]
    ca, cb = _cells(r.x_edges, x0, x0 + h1, tol)
    ra, rb = _cells(r.y_edges, y0, y0 + h2, tol)
    ca, cb = ca - splus.ix0, cb - splus.ix0
    ra, rb = ra - splus.iy0, rb - splus.iy0
    inside = ((x0 + h1 <= r.x_edges[-1] + tol) & (y0 + h2 <= r.y_edges[-1] + tol)
              & (cb <= cells.shape[0]) & (rb <= cells.shape[1]))
    cnt = np.zeros(gx.size, dtype=np.int64)
    sel = np.nonzero(inside)[0]
    cnt[sel] = (sat[cb[sel], rb[sel]] - sat[ca[sel], rb[sel]]
                - sat[cb[sel], ra[sel]] + sat[ca[sel], ra[sel]])
    fits = np.nonzero(inside & (cnt == (cb - ca) * (rb - ra)))[0]
    if fits.size == 0:
        return None
    return float(x0[fits[0]]), float(y0[fits[0]])


def _hstar_single(ds: DiversifiedSpace, j: int) -> LocalBoxes:
    r = ds.raster
    h = (float(ds.hstar[0, j]), float(ds.hstar[1, j]))
    (ix0, ix1), (iy0, iy1) = ds.support_bbox(j)
    sx, sy, cells = ds.gamma_cells(j)
    row = np.zeros(r.shape[0], dtype=bool)
    row[sx][cells[:, iy0 - sy.start]] = True
    ranges = ((np.array([ix0]), np.array([ix1])), (np.array([iy0]), np.array([iy1])))
    x0 = _anchored_search(ds, np.array([j]), ranges, cells_of=[row])[0]
    nbar = ds.space.nbar
    if np.isfinite(x0):
        ybot = r.y_edges[iy0]
        H = Box((x0, ybot - h[1]), (x0 + h[0], ybot))
        return LocalBoxes(None, H, neighbourhood(H, (nbar * h[0], nbar * h[1])), True)
    mask = ds.gamma_mask(j)
    splus = local_neighbourhood(ds.domain, mask, h)
    anchor = _scan(ds, j, splus)
    if anchor is None:
        raise HStarNotFound(DivIndex(int(ds.i1[j]), int(ds.i2[j]), int(ds.jgamma[j])))
    H = Box(anchor, (anchor[0] + h[0], anchor[1] + h[1]))
    return LocalBoxes(splus, H, neighbourhood(H, (nbar * h[0], nbar * h[1])), False)


def find_hstar(domain: GraphDomain, c: CdBSpline, eps=None) -> LocalBoxes:
    """Local boxes ``S_j^+``, ``H_j^*`` and ``H_j^+`` of one cdB-spline."""
    ds = c.owner
    if ds is None or ds.domain is not domain:
        raise ValueError("cdB-spline was not built on this domain")
    if eps is not None and tuple(np.broadcast_to(eps, (2,))) != ds.eps:
        raise ValueError("raster resolution differs from the one the cdB-spline was built on")
    return _hstar_single(ds, ds.index_of(c.j))


@dataclass(frozen=True)
class LocalProjector:
    """Tensor Legendre basis over ``H_j^*`` with a composite tensor Gauss rule."""

    box: Box
    order: tuple[int, int]
    nodes: int
    panels: int = 1

    def rule(self, s: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.box.interval(s)
        e = np.linspace(lo, hi, self.panels + 1)
        x, w = gauss_rule(e[:-1], e[1:], self.nodes)
        return x.ravel(), w.ravel()

    def basis(self, s: int, x) -> np.ndarray:
        lo, hi = self.box.interval(s)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return legendre_values([lo], [hi], self.order[s], x[None, :])[0]

    def coefficients(self, f: Field) -> np.ndarray:
        """``<f, l_a1 l_a2>`` over ``H_j^*`` as an ``(n1, n2)`` array."""
        (x1, w1), (x2, w2) = self.rule(0), self.rule(1)
        X, Y = np.meshgrid(x1, x2, indexing="ij")
        F = f(np.stack([X, Y], axis=-1))
        return (self.basis(0, x1) * w1) @ F @ (self.basis(1, x2) * w2).T

    def evaluate(self, coeffs: np.ndarray, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        L1 = self.basis(0, x[:, 0])
        L2 = self.basis(1, x[:, 1])
        return np.einsum("ab,am,bm->m", coeffs, L1, L2)


def project_local(boxes: LocalBoxes, f: Field, order=(3, 3), nodes: int | None = None,
                  panels: int = 1) -> tuple[np.ndarray, LocalProjector]:
    """Legendre coefficients of ``A_j f`` over ``H_j^*`` and the projector used."""
    order = tuple(int(v) for v in np.broadcast_to(order, (2,)))
    proj = LocalProjector(boxes.hstar, order, nodes or max(order) + 2, panels)
    return proj.coefficients(f), proj


class QuasiInterpolant:
    """Precomputed functionals ``Q_j`` for every cdB-spline of a diversified space.

    Parameters
    ----------
    ds : DiversifiedSpace
    panels : int
        Gauss panels per direction on ``H_j^*`` (each with ``nbar + 2`` nodes).
    """

    def __init__(self, ds: DiversifiedSpace, panels: int = 1):
        self.ds = ds
        self.panels = int(panels)
        self.nodes = ds.space.nbar + 2
        J = ds.n_splines
        self._dual()
        self.hlo = np.zeros((J, 2))
        self.anchored = np.zeros(J, dtype=bool)
        self.splus: dict[int, ComponentMask] = {}
        self._boxes()
        self._kernels()

    # P_j for every j, grouped by knot window
    def _dual(self):
        ds = self.ds
        self.lam, self.w = [], []
        for s in range(2):
            n = ds.space.n[s]
            lam = np.zeros((ds.n_splines, n))
            w = np.zeros((ds.n_splines, n))
            p = ds.jp1 if s == 0 else ds.jp2
            wid = ds.window_id[s]
            for win in np.unique(wid):
                sel = np.nonzero(wid == win)[0]
                T = ds.space.T[s] if win < 0 else ds.windows[s][win]
                lam[sel], w[sel] = dual_weights_batch(T, p[sel] + T.offset)
            self.lam.append(lam)
            self.w.append(w)

    def _boxes(self):
        ds = self.ds
        r = ds.raster
        full = ds.full[ds.jp1, ds.jp2]
        jf = np.nonzero(full)[0]
        ranges = ((ds.X0[ds.jp1[jf]], ds.X1[ds.jp1[jf]]), (ds.Y0[ds.jp2[jf]], ds.Y1[ds.jp2[jf]]))
        x0 = _anchored_search(ds, jf, ranges)
        ok = np.isfinite(x0)
        hit = jf[ok]
        self.hlo[hit, 0] = x0[ok]
        self.hlo[hit, 1] = r.y_edges[ranges[1][0][ok]] - ds.hstar[1, hit]
        self.anchored[hit] = True
        for j in np.nonzero(~self.anchored)[0]:
            b = _hstar_single(ds, int(j))
            self.hlo[j] = b.hstar.lo
            self.anchored[j] = b.anchored
            if b.splus is not None:
                self.splus[int(j)] = b.splus

    def _kernels(self):
        ds = self.ds
        self.knodes, self.kern = [], []
        P, g = self.panels, self.nodes
        for s in range(2):
            lo = self.hlo[:, s]
            hi = lo + ds.hstar[s]
            e = lo[:, None] + (hi - lo)[:, None] * np.linspace(0, 1, P + 1)
            x, gw = gauss_rule(e[:, :-1], e[:, 1:], g)
            x, gw = x.reshape(len(lo), -1), gw.reshape(len(lo), -1)
            n = ds.space.n[s]
            L_nodes = legendre_values(lo, hi, n, x)
            L_lam = legendre_values(lo, hi, n, self.lam[s])
            u = np.einsum("jam,jm->ja", L_lam, self.w[s])
            self.knodes.append(x)
            self.kern.append(gw * np.einsum("jag,ja->jg", L_nodes, u))

    def hstar_box(self, j: int) -> Box:
        lo = self.hlo[j]
        return Box(tuple(lo), tuple(lo + self.ds.hstar[:, j]))

    def local_boxes(self, j: int) -> LocalBoxes:
        H = self.hstar_box(j)
        nb = self.ds.space.nbar
        h = self.ds.hstar[:, j]
        return LocalBoxes(self.splus.get(j), H, neighbourhood(H, (nb * h[0], nb * h[1])),
                          bool(self.anchored[j]))

    def pj(self, j: int) -> PjFunctional:
        ds = self.ds
        idx = DivIndex(int(ds.i1[j]), int(ds.i2[j]), int(ds.jgamma[j]))
        return PjFunctional(idx, (self.lam[0][j], self.lam[1][j]), (self.w[0][j], self.w[1][j]),
                            tuple((float(self.lam[s][j, 0]), float(self.lam[s][j, -1])) for s in range(2)))

    def node_values(self, f: Field, js: np.ndarray) -> np.ndarray:
        x1, x2 = self.knodes[0][js], self.knodes[1][js]
        pts = np.stack(np.broadcast_arrays(x1[:, :, None], x2[:, None, :]), axis=-1)
        return np.asarray(f(pts), dtype=float).reshape(pts.shape[:-1])

    def coefficients(self, f: Field, chunk: int = 20000, js=None) -> np.ndarray:
        """``Q_j f`` for all ``j`` (or the selected ``js``, in that order)."""
        sel = np.arange(self.ds.n_splines) if js is None else np.asarray(js, dtype=np.int64)
        out = np.empty(sel.size)
        for a in range(0, sel.size, chunk):
            part = sel[a:a + chunk]
            F = self.node_values(f, part)
            out[a:a + chunk] = np.einsum("jg,jgh,jh->j", self.kern[0][part], F, self.kern[1][part])
        return out

    def __call__(self, f: Field) -> QuasiInterpolantResult:
        return QuasiInterpolantResult(self, self.coefficients(f))


@dataclass(frozen=True, eq=False)
class QuasiInterpolantResult:
    """Coefficients ``Q_j f`` of ``Qf = sum_j Q_j f B_j^*``."""

    operator: QuasiInterpolant
    coeffs: np.ndarray

    @property
    def space(self) -> DiversifiedSpace:
        return self.operator.ds

    def __call__(self, x) -> np.ndarray:
        return eval_Q(self, x)

    def on_raster(self) -> np.ndarray:
        return self.space.evaluate_on_raster(self.coeffs)

    def as_dict(self) -> dict[DivIndex, float]:
        return dict(zip(self.space.indices, map(float, self.coeffs)))

    def table(self) -> str:
        """Text table ``i1 i2 gamma Qjf`` in diversified-index order."""
        ds = self.space
        lines = ["i1 i2 gamma Qjf"]
        lines += [f"{a} {b} {g} {c!r}" for a, b, g, c in
                  zip(ds.i1.tolist(), ds.i2.tolist(), ds.jgamma.tolist(), self.coeffs.tolist())]
        return "\n".join(lines) + "\n"


def quasi_interpolate(space: TensorSpace, domain: GraphDomain, f: Field, eps=None,
                      panels: int = 1) -> QuasiInterpolantResult:
    ds = build_diversified(space, domain, eps)
    return QuasiInterpolant(ds, panels)(f)


def eval_Q(result: QuasiInterpolantResult, x) -> np.ndarray:
    """``Qf(x)``; raises for points outside the domain."""
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 2)
    inside = result.space.domain.contains(pts)
    if not np.all(inside):
        raise ValueError(f"point {pts[~inside][0].tolist()} is outside the domain")
    v = result.space.evaluate(result.coeffs, pts)
    return float(v[0]) if x.ndim == 1 else v.reshape(x.shape[:-1])


def reproduce_poly_check(space: TensorSpace, domain: GraphDomain, d, eps=None,
                         samples: int = 10_000, seed: int = 0) -> float:
    """Max over sample points of ``|sum_j B_j^* P_j p - p|`` for ``p = x1^d1 x2^d2``."""
    ds = build_diversified(space, domain, eps)
    lam, w = [], []
    for s in range(2):
        n = space.n[s]
        if d[s] >= n:
            raise ValueError("degree must be below the order")
        lam.append(np.zeros((ds.n_splines, n)))
        w.append(np.zeros((ds.n_splines, n)))
        p = ds.jp1 if s == 0 else ds.jp2
        for win in np.unique(ds.window_id[s]):
            sel = np.nonzero(ds.window_id[s] == win)[0]
            T = space.T[s] if win < 0 else ds.windows[s][win]
            lam[s][sel], w[s][sel] = dual_weights_batch(T, p[sel] + T.offset)
    coeffs = (np.sum(w[0] * lam[0] ** d[0], axis=1) * np.sum(w[1] * lam[1] ** d[1], axis=1))
    pts = sample_points(domain, samples, seed, ds.raster)
    err = ds.evaluate(coeffs, pts) - monomial(*d)(pts)
    return float(np.max(np.abs(err)))


def sample_points(domain: GraphDomain, count: int, seed: int = 0, raster=None) -> np.ndarray:
    """``count`` uniform random points of the domain (rejection sampling).

    With ``raster`` given, only points whose raster cell is marked are kept,
    i.e. points of the rasterised domain the construction is exact on.
    """
    rng = np.random.default_rng(seed)
    bb = domain.bbox()
    out = []
    have = 0
    while have < count:
        pts = rng.uniform(bb.lo, bb.hi, size=(2 * count, 2))
        pts = pts[domain.contains(pts)]
        if raster is not None:
            ix, iy = raster.locate(pts)
            pts = pts[(ix >= 0) & raster.mask[ix, iy]]
        out.append(pts)
        have += len(pts)
    return np.concatenate(out)[:count]


def functional_bound_ratios(op: QuasiInterpolant, f: Field, pq=((np.inf, 1), (2, 2), (1, np.inf))):
    """``|Q_j f| (h1* h2*)^(1 - 1/q) / ||f||_{H_j*, p}`` for every j and each ``(p, q)``.

    Norms on ``H_j^*`` use a refined tensor Gauss rule (``p < inf``) or a
    uniform sample grid including the box corners (``p = inf``).
    """
    ds = op.ds
    coeffs = op.coefficients(f)
    area = ds.hstar[0] * ds.hstar[1]
    out = {}
    norms = _box_norms(op, f)
    for p, q in pq:
        expo = 1.0 if np.isinf(q) else 1 - 1 / q
        nrm = norms[p]
        with np.errstate(divide="ignore", invalid="ignore"):
            out[(p, q)] = np.where(nrm > 0, np.abs(coeffs) * area ** expo / nrm, 0.0)
    return out


def functional_norms(op: QuasiInterpolant, qs=(1, 2, np.inf), samples: int = 257) -> dict:
    """``||q_j||_{H_j*, q} (h1* h2*)^(1 - 1/q)`` for every j.

    ``Q_j f = <f, q_j>`` over ``H_j^*`` with the separable polynomial
    ``q_j = q_1(x1) q_2(x2)``, ``q_s = sum_a u_{s,a} l_a``; its ``L^q`` norm is the
    norm of ``Q_j`` on ``L^p(H_j^*)`` for the conjugate ``p``, so this is the
    scaled functional bound independent of any test function.  ``q = 2`` is
    exact through orthonormality; ``q in {1, inf}`` use ``samples`` points per
    direction (composite midpoint / sampled maximum).
    """
    ds = op.ds
    J = ds.n_splines
    one_d = {q: np.ones(J) for q in qs}
    t = (np.arange(samples) + 0.5) / samples
    for s in range(2):
        lo = op.hlo[:, s]
        h = ds.hstar[s]
        n = ds.space.n[s]
        u = np.einsum("jam,jm->ja", legendre_values(lo, lo + h, n, op.lam[s]), op.w[s])
        for q in qs:
            if q == 2:
                one_d[q] *= np.sqrt(np.sum(u ** 2, axis=1))
                continue
            x = lo[:, None] + h[:, None] * t
            vals = np.abs(np.einsum("jag,ja->jg", legendre_values(lo, lo + h, n, x), u))
            if np.isinf(q):
                # include the interval ends, where Legendre polynomials peak
                ends = np.stack([lo, lo + h], axis=1)
                ve = np.abs(np.einsum("jag,ja->jg", legendre_values(lo, lo + h, n, ends), u))
                one_d[q] *= np.maximum(vals.max(axis=1), ve.max(axis=1))
            else:
                one_d[q] *= (vals ** q).mean(axis=1) ** (1 / q) * h ** (1 / q)
    area = ds.hstar[0] * ds.hstar[1]
    return {q: one_d[q] * area ** (1.0 if np.isinf(q) else 1 - 1 / q) for q in qs}


def _box_norms(op: QuasiInterpolant, f: Field, m: int = 8) -> dict:
    ds = op.ds
    J = ds.n_splines
    lo = op.hlo
    hi = lo + ds.hstar.T
    x1, w1 = gauss_rule(lo[:, 0], hi[:, 0], m)
    x2, w2 = gauss_rule(lo[:, 1], hi[:, 1], m)
    norms = {1: np.empty(J), 2: np.empty(J), np.inf: np.empty(J)}
    t = np.linspace(0, 1, m)
    for a in range(0, J, 20000):
        s = slice(a, min(J, a + 20000))
        pts = np.stack(np.broadcast_arrays(x1[s, :, None], x2[s, None, :]), axis=-1)
        F = np.abs(f(pts))
        W = w1[s, :, None] * w2[s, None, :]
        norms[1][s] = np.sum(W * F, axis=(1, 2))
        norms[2][s] = np.sqrt(np.sum(W * F ** 2, axis=(1, 2)))
        u1 = lo[s, 0, None] + (hi - lo)[s, 0, None] * t
        u2 = lo[s, 1, None] + (hi - lo)[s, 1, None] * t
        grid = np.stack(np.broadcast_arrays(u1[:, :, None], u2[:, None, :]), axis=-1)
        norms[np.inf][s] = np.max(np.abs(f(grid)), axis=(1, 2))
    return norms


def local_stability_ratios(op: QuasiInterpolant, f: Field) -> np.ndarray:
    """``||Qf||_{Gamma_l, inf} / max_{j in J_l} ||f||_{H_j*, inf}`` for every grid-cell component."""
    ds = op.ds
    Qf = ds.evaluate_on_raster(op.coefficients(f))
    img, k1, k2, gam, rep = ds.cell_labels()
    J = ds.cell_index_sets(rep)
    idx = np.arange(1, len(k1) + 1)
    qmax = ndimage.maximum(np.nan_to_num(np.abs(Qf)), labels=img, index=idx)
    fn = _box_norms(op, f)[np.inf]
    fmax = np.where(J >= 0, fn[np.maximum(J, 0)], 0.0).max(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(fmax > 0, np.asarray(qmax) / fmax, 0.0)
