"""Tensor-product spaces over graph domains, diversification and 2-D condensation.

A :class:`DiversifiedSpace` rasterises the domain on a grid whose cells
subdivide the knot cells, so every support ``S_i`` and grid cell ``Gamma_k``
is an exact union of raster cells.  Each tensor B-spline ``B_i`` whose
support meets the domain yields one cdB-spline per 4-connected component of
``S_i ∩ Ω``; its univariate factors are condensed to the extent of the
component of the horizontal (vertical) strip through ``S_i``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .geometry import Box, ComponentMask, GraphDomain, Raster, label_block
from .univariate import (KnotWindow, basis_matrix, condense, perturbed_window,
                         uniform_window)

__all__ = [
    "TensorSpace",
    "DivIndex",
    "CdBSpline",
    "CellComponent",
    "DiversifiedSpace",
    "AdmissibilityWarning",
    "build_diversified",
    "enumerate_diversified",
    "condense_2d",
    "eval_cdb",
    "cell_components",
    "eval_many",
]


_NEIGHBOURS = ((0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1))


class AdmissibilityWarning(UserWarning):
    """Grid width exceeds ``h0 / (nbar + 1)``."""


def _make_window(spec, lo: float, hi: float, n: int, rng: np.random.Generator) -> KnotWindow:
    if isinstance(spec, KnotWindow):
        return spec
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return uniform_window(lo, hi, float(spec["h"]), n, float(spec.get("anchor", 0.0)))
    if kind == "perturbed":
        return perturbed_window(lo, hi, float(spec["h"]), n, float(spec["jitter"]), rng,
                                float(spec.get("anchor", 0.0)))
    if kind == "explicit":
        return KnotWindow(np.asarray(spec["knots"], dtype=float), n, int(spec.get("offset", 0)))
    raise ValueError(f"unknown knot spec kind {kind!r}")


class TensorSpace:
    """Tensor-product B-splines of order ``(n1, n2)`` on two knot windows.

    ``h`` holds the maximal knot spacing per direction over the knot
    intervals meeting ``box`` (the domain's bounding box).
    """

    def __init__(self, T1: KnotWindow, T2: KnotWindow, box: Box | None = None):
        self.T = (T1, T2)
        self.n = (T1.order, T2.order)
        self.nbar = max(self.n)
        self.box = box
        h = []
        for s, T in enumerate(self.T):
            within = None if box is None else box.interval(s)
            h.append(T.max_spacing(within))
            if box is not None:
                lo, hi = within
                if T.knots[0] > lo - T.order * h[-1] or T.knots[-1] < hi + T.order * h[-1]:
                    raise ValueError(f"knot window underflow in direction {s + 1}")
        self.h = tuple(h)
        if min(self.h) <= 0:
            raise ValueError("grid widths must be positive")

    @classmethod
    def from_spec(cls, box: Box, specs, orders, seed: int = 0) -> TensorSpace:
        """Build from per-direction specs (``uniform``, ``perturbed`` or ``explicit``)."""
        wins = []
        for s in range(2):
            rng = np.random.default_rng([int(seed), s])
            lo, hi = box.interval(s)
            wins.append(_make_window(specs[s], lo, hi, int(orders[s]), rng))
        return cls(wins[0], wins[1], box)

    @classmethod
    def uniform(cls, domain: GraphDomain, h, n) -> TensorSpace:
        h = np.broadcast_to(np.asarray(h, dtype=float), (2,))
        n = np.broadcast_to(np.asarray(n), (2,))
        return cls.from_spec(domain.bbox(), [{"kind": "uniform", "h": h[0]},
                                             {"kind": "uniform", "h": h[1]}], n)

    def admissible(self, h0: float) -> bool:
        return max(self.h) <= h0 / (self.nbar + 1) * (1 + 1e-12)

    def check_admissible(self, h0: float) -> bool:
        ok = self.admissible(h0)
        if not ok:
            warnings.warn(f"grid width {self.h} exceeds h0/(nbar+1) = {h0 / (self.nbar + 1):.4g}",
                          AdmissibilityWarning, stacklevel=2)
        return ok

    @property
    def aspect_ratio(self) -> float:
        return max(self.h) / min(self.h)

    def support(self, i) -> Box:
        a = self.T[0].support(i[0])
        b = self.T[1].support(i[1])
        return Box((a[0], b[0]), (a[1], b[1]))

    def cell(self, k) -> Box:
        t1, t2 = self.T
        return Box((t1.tau(k[0]), t2.tau(k[1])), (t1.tau(k[0] + 1), t2.tau(k[1] + 1)))


class DivIndex(NamedTuple):
    i1: int
    i2: int
    gamma: int

    @property
    def i(self) -> tuple[int, int]:
        return (self.i1, self.i2)


def _local_bspline(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    # rows of t are local knot vectors, x matches the row count (right-continuous, 0/0 := 0)
    n = t.shape[1] - 1
    vals = [((t[:, k] <= x) & (x < t[:, k + 1])).astype(float) for k in range(n)]
    for r in range(2, n + 1):
        for k in range(n - r + 1):
            d1 = t[:, k + r - 1] - t[:, k]
            d2 = t[:, k + r] - t[:, k + 1]
            with np.errstate(divide="ignore", invalid="ignore"):
                a = np.where(d1 > 0, (x - t[:, k]) / d1, 0.0)
                b = np.where(d2 > 0, (t[:, k + r] - x) / d2, 0.0)
            vals[k] = a * vals[k] + b * vals[k + 1]
    return vals[0]


def eval_many(T: KnotWindow, i, x) -> np.ndarray:
    """``b_{i[m]}(x[m])`` for paired index and point arrays."""
    i = np.asarray(i)
    x = np.asarray(x, dtype=float)
    pos = i - T.offset
    if np.any(pos < 0) or np.any(pos > T.last - T.offset):
        raise IndexError("knot window underflow")
    t = T.knots[pos[..., None] + np.arange(T.order + 1)]
    return _local_bspline(t.reshape(-1, T.order + 1), x.reshape(-1)).reshape(x.shape)


@dataclass(frozen=True, eq=False)
class CdBSpline:
    """Condensed diversified B-spline ``B_j^*``."""

    j: DivIndex
    omega: tuple[tuple[float, float], tuple[float, float]]
    tstar: tuple[KnotWindow, KnotWindow]
    hstar: tuple[float, float]
    mask: ComponentMask
    owner: DiversifiedSpace | None = field(default=None, repr=False)

    @property
    def support(self) -> Box:
        return self.mask.bbox

    @property
    def condensed(self) -> tuple[bool, bool]:
        return tuple(T.condensed_to is not None for T in self.tstar)

    def unrestricted_support(self) -> Box:
        """``S'_j``: support of the condensed tensor spline before restriction to ``γ``."""
        a = self.tstar[0].support(self.j.i1)
        b = self.tstar[1].support(self.j.i2)
        return Box((a[0], b[0]), (a[1], b[1]))

    def factors(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        b1 = eval_many(self.tstar[0], np.full(len(x), self.j.i1), x[:, 0])
        b2 = eval_many(self.tstar[1], np.full(len(x), self.j.i2), x[:, 1])
        return b1, b2

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, 2)
        b1, b2 = self.factors(pts)
        ix, iy = self.mask.raster.locate(pts)
        chi = (ix >= 0) & self.mask.has_cell(ix, iy)
        out = b1 * b2 * chi
        return float(out[0]) if x.ndim == 1 else out.reshape(x.shape[:-1])


def eval_cdb(c: CdBSpline, x):
    return c(x)


@dataclass(frozen=True, eq=False)
class CellComponent:
    """Component ``Γ_ℓ`` of a grid cell intersected with the domain, with its index set ``J_ℓ``."""

    k: tuple[int, int]
    gamma: int
    mask: ComponentMask
    J: tuple[DivIndex, ...]

    @property
    def ell(self) -> tuple[int, int, int]:
        return (self.k[0], self.k[1], self.gamma)


def aligned_edges(T: KnotWindow, lo: float, hi: float, eps: float) -> np.ndarray:
    """Raster edges subdividing every knot interval that meets ``[lo, hi]``."""
    u = np.unique(T.knots)
    a = max(int(np.searchsorted(u, lo, "right")) - 1, 0)
    b = min(int(np.searchsorted(u, hi, "left")), u.size - 1)
    if u[a] > lo or u[b] < hi:
        raise ValueError("knot window underflow: raster range not covered by knots")
    parts = []
    for k in range(a, b):
        m = max(1, int(np.ceil((u[k + 1] - u[k]) / eps - 1e-9)))
        parts.append(np.linspace(u[k], u[k + 1], m + 1)[:-1])
    parts.append(u[b:b + 1])
    return np.concatenate(parts)


class DiversifiedSpace:
    """All cdB-splines of a tensor space over a graph domain.

    Parameters
    ----------
    space : TensorSpace
    domain : GraphDomain
    eps : float or pair, optional
        Raster resolution per direction; defaults to ``h_sigma / 8``.
    """

    def __init__(self, space: TensorSpace, domain: GraphDomain, eps=None):
        self.space = space
        self.domain = domain
        self.admissible = space.check_admissible(domain.h0)
        if eps is None:
            eps = (space.h[0] / 8, space.h[1] / 8)
        self.eps = tuple(np.broadcast_to(np.asarray(eps, dtype=float), (2,)))
        bb = domain.bbox()
        T1, T2 = space.T
        self.raster = Raster(domain, aligned_edges(T1, bb.lo[0], bb.hi[0], self.eps[0]),
                             aligned_edges(T2, bb.lo[1], bb.hi[1], self.eps[1]))
        self._build_supports()
        self._build_condensation()

    # -- supports and diversification ---------------------------------------------------

    def _edge_index(self, s: int) -> np.ndarray:
        # raster edge index of every stored knot (clipped to the raster)
        T = self.space.T[s]
        e = self.raster.x_edges if s == 0 else self.raster.y_edges
        return np.searchsorted(e, T.knots, "left").clip(0, e.size - 1)

    def _build_supports(self):
        r = self.raster
        n1, n2 = self.space.n
        T1, T2 = self.space.T
        ex, ey = self._edge_index(0), self._edge_index(1)
        self.X0, self.X1 = ex[:len(T1) - n1], ex[n1:]
        self.Y0, self.Y1 = ey[:len(T2) - n2], ey[n2:]
        self.kx0, self.kx1 = ex[:-1], ex[1:]
        self.ky0, self.ky1 = ey[:-1], ey[1:]
        counts = r.count(self.X0[:, None], self.X1[:, None], self.Y0[None, :], self.Y1[None, :])
        areas = (self.X1 - self.X0)[:, None] * (self.Y1 - self.Y0)[None, :]
        ncomp = np.where(counts > 0, 1, 0).astype(np.int32)
        labels = {}
        for p1, p2 in np.argwhere((counts > 0) & (counts < areas)):
            block = r.mask[self.X0[p1]:self.X1[p1], self.Y0[p2]:self.Y1[p2]]
            lab, m = label_block(block)
            if m > 1:
                labels[(int(p1), int(p2))] = lab
            ncomp[p1, p2] = m
        self.ncomp = ncomp
        self.multi_labels = labels
        self.full = counts == areas
        # j ordering: lexicographic in (i1, i2, gamma)
        p1, p2 = np.nonzero(ncomp)
        reps = ncomp[p1, p2]
        self.jp1 = np.repeat(p1, reps)
        self.jp2 = np.repeat(p2, reps)
        start = np.cumsum(reps) - reps
        self.jgamma = np.arange(self.jp1.size) - np.repeat(start, reps)
        jfirst = np.full(ncomp.shape, -1, dtype=np.int64)
        jfirst[p1, p2] = start
        self.jfirst = jfirst
        self.j_single = self.ncomp[self.jp1, self.jp2] == 1
        # representative raster cell of every j
        rx = self.X0[self.jp1].copy()
        ry = self.Y0[self.jp2].copy()
        single = np.nonzero(self.j_single & ~self.full[self.jp1, self.jp2])[0]
        for j in single:
            block = r.mask[self.X0[self.jp1[j]]:self.X1[self.jp1[j]],
                           self.Y0[self.jp2[j]]:self.Y1[self.jp2[j]]]
            a, b = np.argwhere(block)[0]
            rx[j] += a
            ry[j] += b
        for (q1, q2), lab in labels.items():
            j0 = jfirst[q1, q2]
            for g in range(ncomp[q1, q2]):
                a, b = np.argwhere(lab == g + 1)[0]
                rx[j0 + g] += a
                ry[j0 + g] += b
        self.rep = (rx, ry)

    @property
    def n_splines(self) -> int:
        return int(self.jp1.size)

    @property
    def i1(self) -> np.ndarray:
        return self.jp1 + self.space.T[0].offset

    @property
    def i2(self) -> np.ndarray:
        return self.jp2 + self.space.T[1].offset

    @property
    def indices(self) -> list[DivIndex]:
        return [DivIndex(int(a), int(b), int(g)) for a, b, g in zip(self.i1, self.i2, self.jgamma)]

    def index_of(self, j: DivIndex) -> int:
        p1 = j.i1 - self.space.T[0].offset
        p2 = j.i2 - self.space.T[1].offset
        if not (0 <= p1 < self.ncomp.shape[0] and 0 <= p2 < self.ncomp.shape[1]) \
                or j.gamma >= self.ncomp[p1, p2] or j.gamma < 0:
            raise KeyError(f"{j} is not a diversified index")
        return int(self.jfirst[p1, p2] + j.gamma)

    def gamma_cells(self, j: int) -> tuple[slice, slice, np.ndarray]:
        """Raster block of ``S_i`` and the bitmap of component ``γ`` inside it."""
        p1, p2 = self.jp1[j], self.jp2[j]
        sx = slice(int(self.X0[p1]), int(self.X1[p1]))
        sy = slice(int(self.Y0[p2]), int(self.Y1[p2]))
        lab = self.multi_labels.get((int(p1), int(p2)))
        if lab is None:
            return sx, sy, self.raster.mask[sx, sy]
        return sx, sy, lab == self.jgamma[j] + 1

    def gamma_mask(self, j: int) -> ComponentMask:
        sx, sy, cells = self.gamma_cells(j)
        ix = np.nonzero(cells.any(axis=1))[0]
        iy = np.nonzero(cells.any(axis=0))[0]
        sub = cells[ix[0]:ix[-1] + 1, iy[0]:iy[-1] + 1]
        return ComponentMask(int(self.jgamma[j]), self.raster, sx.start + int(ix[0]),
                             sy.start + int(iy[0]), sub.copy())

    def support_bbox(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Raster cell ranges ``(ix0, ix1), (iy0, iy1)`` of the tight box of ``S_j``."""
        sx, sy, cells = self.gamma_cells(j)
        ix = np.nonzero(cells.any(axis=1))[0]
        iy = np.nonzero(cells.any(axis=0))[0]
        return (sx.start + ix[0], sx.start + ix[-1] + 1), (sy.start + iy[0], sy.start + iy[-1] + 1)

    # -- condensation -------------------------------------------------------------------

    def _strip_extents(self, s: int):
        """Extent along ``s`` of the component of ``W_{s,i} ∩ Ω`` holding each ``S_j``."""
        r = self.raster
        lo = np.zeros(self.n_splines)
        hi = np.zeros(self.n_splines)
        rx, ry = self.rep
        if s == 0:
            groups, A0, A1, edges = self.jp2, self.Y0, self.Y1, r.x_edges
        else:
            groups, A0, A1, edges = self.jp1, self.X0, self.X1, r.y_edges
        order = np.argsort(groups, kind="stable")
        bounds = np.flatnonzero(np.diff(groups[order])) + 1
        for chunk in np.split(order, bounds):
            if chunk.size == 0:
                continue
            p = groups[chunk[0]]
            a0, a1 = A0[p], A1[p]
            strip = r.mask[:, a0:a1] if s == 0 else r.mask[a0:a1, :].T
            lab, m = label_block(strip)
            idx_along = rx[chunk] if s == 0 else ry[chunk]
            idx_across = (ry[chunk] if s == 0 else rx[chunk]) - a0
            labs = lab[idx_along, idx_across]
            first = np.full(m + 1, -1)
            last = np.full(m + 1, -1)
            for k, sl in enumerate(ndimage.find_objects(lab, m)):
                first[k + 1] = sl[0].start
                last[k + 1] = sl[0].stop
            lo[chunk] = edges[first[labs]]
            hi[chunk] = edges[last[labs]]
        return lo, hi

    def _build_condensation(self):
        self.omega_lo = np.zeros((2, self.n_splines))
        self.omega_hi = np.zeros((2, self.n_splines))
        self.hstar = np.zeros((2, self.n_splines))
        self.window_id = np.full((2, self.n_splines), -1, dtype=np.int64)
        self.windows: list[list[KnotWindow]] = [[], []]
        for s in range(2):
            lo, hi = self._strip_extents(s)
            self.omega_lo[s], self.omega_hi[s] = lo, hi
            h = self.space.h[s]
            self.hstar[s] = h
            cond = np.nonzero(hi - lo <= h)[0]
            cache: dict[tuple[float, float], int] = {}
            for j in cond:
                key = (float(lo[j]), float(hi[j]))
                if key not in cache:
                    Tc = condense(self.space.T[s], key, h)
                    cache[key] = len(self.windows[s])
                    self.windows[s].append(Tc)
                w = cache[key]
                self.window_id[s, j] = w
                self.hstar[s, j] = self.windows[s][w].max_spacing()
        self.plain = self.j_single & (self.window_id[0] < 0) & (self.window_id[1] < 0)

    def tstar(self, j: int, s: int) -> KnotWindow:
        w = self.window_id[s, j]
        return self.space.T[s] if w < 0 else self.windows[s][w]

    def cdb(self, j) -> CdBSpline:
        if isinstance(j, DivIndex):
            j = self.index_of(j)
        j = int(j)
        idx = DivIndex(int(self.i1[j]), int(self.i2[j]), int(self.jgamma[j]))
        omega = tuple((float(self.omega_lo[s, j]), float(self.omega_hi[s, j])) for s in range(2))
        return CdBSpline(idx, omega, (self.tstar(j, 0), self.tstar(j, 1)),
                         (float(self.hstar[0, j]), float(self.hstar[1, j])), self.gamma_mask(j), self)

    # -- evaluation ---------------------------------------------------------------------

    def factor_values(self, j, x, s: int) -> np.ndarray:
        """Univariate condensed factor of ``B_j^*`` in direction ``s`` at ``x`` (paired arrays)."""
        j = np.asarray(j)
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        p = self.jp1[j] if s == 0 else self.jp2[j]
        wid = self.window_id[s, j]
        for w in np.unique(wid):
            sel = wid == w
            T = self.space.T[s] if w < 0 else self.windows[s][w]
            out[sel] = eval_many(T, p[sel] + T.offset, x[sel])
        return out

    def locate_j(self, pts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """For each point, the ``n1 * n2`` indices ``j`` whose ``γ`` holds its raster cell.

        A point of the domain whose cell centre lies outside it is moved to the
        nearest point of a marked neighbour cell in the same grid cell, so all
        functions live on the rasterised domain.  Returns ``(J, ok, where)``:
        ``J`` has shape ``(len(pts), n1 * n2)`` with ``-1`` where no cdB-spline
        covers the point, ``ok`` flags located points and ``where`` holds the
        (possibly moved) evaluation points.
        """
        pts = np.array(pts, dtype=float).reshape(-1, 2)
        r = self.raster
        ix, iy = r.locate(pts)
        ok = ix >= 0
        ok[ok] = r.mask[ix[ok], iy[ok]]
        # points of the open domain in an unmarked boundary cell borrow a marked neighbour
        miss = np.nonzero(~ok & (ix >= 0))[0]
        if miss.size:
            miss = miss[self.domain.contains(pts[miss])]
        T1, T2 = self.space.T
        for m in miss:
            k = (T1.cell_index(pts[m, 0]), T2.cell_index(pts[m, 1]))
            for dx, dy in _NEIGHBOURS:
                a, b = ix[m] + dx, iy[m] + dy
                if 0 <= a < r.shape[0] and 0 <= b < r.shape[1] and r.mask[a, b] \
                        and T1.cell_index(r.xc[a]) == k[0] and T2.cell_index(r.yc[b]) == k[1]:
                    ix[m], iy[m], ok[m] = a, b, True
                    pts[m, 0] = np.clip(pts[m, 0], r.x_edges[a], np.nextafter(r.x_edges[a + 1], -np.inf))
                    pts[m, 1] = np.clip(pts[m, 1], r.y_edges[b], np.nextafter(r.y_edges[b + 1], -np.inf))
                    break
        T1, T2 = self.space.T
        n1, n2 = self.space.n
        k1 = T1.cell_index(pts[:, 0]) - T1.offset
        k2 = T2.cell_index(pts[:, 1]) - T2.offset
        J = np.full((len(pts), n1 * n2), -1, dtype=np.int64)
        col = 0
        for a in range(n1):
            for b in range(n2):
                p1, p2 = k1 - a, k2 - b
                valid = ok & (p1 >= 0) & (p2 >= 0) & (p1 < self.ncomp.shape[0]) & (p2 < self.ncomp.shape[1])
                jj = np.full(len(pts), -1, dtype=np.int64)
                jj[valid] = self.jfirst[p1[valid], p2[valid]]
                multi = valid & (jj >= 0)
                multi[multi] = self.ncomp[p1[multi], p2[multi]] > 1
                for m in np.nonzero(multi)[0]:
                    lab = self.multi_labels[(int(p1[m]), int(p2[m]))]
                    g = lab[ix[m] - self.X0[p1[m]], iy[m] - self.Y0[p2[m]]]
                    jj[m] = jj[m] + g - 1 if g > 0 else -1
                J[:, col] = jj
                col += 1
        return J, ok, pts

    def evaluate(self, coeffs, pts) -> np.ndarray:
        """``Σ_j coeffs[j] B_j^*(x)`` at points; ``nan`` outside the rasterised domain."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        coeffs = np.asarray(coeffs, dtype=float)
        J, ok, pts = self.locate_j(pts)
        out = np.zeros(len(pts))
        for c in range(J.shape[1]):
            jj = J[:, c]
            sel = jj >= 0
            if not sel.any():
                continue
            b1 = self.factor_values(jj[sel], pts[sel, 0], 0)
            b2 = self.factor_values(jj[sel], pts[sel, 1], 1)
            out[sel] += coeffs[jj[sel]] * b1 * b2
        out[~ok] = np.nan
        return out

    def evaluate_on_raster(self, coeffs) -> np.ndarray:
        """``Σ_j coeffs[j] B_j^*`` at every raster cell centre (``nan`` off the domain)."""
        r = self.raster
        coeffs = np.asarray(coeffs, dtype=float)
        T1, T2 = self.space.T
        C = np.zeros(self.ncomp.shape)
        pl = np.nonzero(self.plain)[0]
        C[self.jp1[pl], self.jp2[pl]] = coeffs[pl]
        Bx = basis_matrix(T1, r.xc)
        By = basis_matrix(T2, r.yc)
        out = (Bx @ C) @ By.T
        for j in np.nonzero(~self.plain)[0]:
            sx, sy, cells = self.gamma_cells(j)
            b1 = self.factor_values(np.full(sx.stop - sx.start, j), r.xc[sx], 0)
            b2 = self.factor_values(np.full(sy.stop - sy.start, j), r.yc[sy], 1)
            out[sx, sy] += coeffs[j] * np.outer(b1, b2) * cells
        out[~r.mask] = np.nan
        return out

    # -- grid-cell components -----------------------------------------------------------

    def cell_labels(self):
        """Raster image of grid-cell components plus their descriptors.

        Returns ``(image, k1, k2, gamma, rep)`` where ``image`` holds ``ℓ + 1`` on
        marked cells and ``0`` elsewhere.
        """
        r = self.raster
        img = np.zeros(r.shape, dtype=np.int64)
        kx0, kx1, ky0, ky1 = self.kx0, self.kx1, self.ky0, self.ky1
        cnt = r.count(kx0[:, None], kx1[:, None], ky0[None, :], ky1[None, :])
        area = (kx1 - kx0)[:, None] * (ky1 - ky0)[None, :]
        K1, K2, G, RX, RY = [], [], [], [], []
        nxt = 0
        for q1, q2 in np.argwhere(cnt > 0):
            sx = slice(kx0[q1], kx1[q1])
            sy = slice(ky0[q2], ky1[q2])
            if cnt[q1, q2] == area[q1, q2]:
                img[sx, sy] = nxt + 1
                K1.append(q1); K2.append(q2); G.append(0)
                RX.append(sx.start); RY.append(sy.start)
                nxt += 1
                continue
            lab, m = label_block(r.mask[sx, sy])
            blk = img[sx, sy]
            blk[lab > 0] = lab[lab > 0] + nxt
            for g in range(m):
                a, b = np.argwhere(lab == g + 1)[0]
                K1.append(q1); K2.append(q2); G.append(g)
                RX.append(sx.start + a); RY.append(sy.start + b)
            nxt += m
        T1, T2 = self.space.T
        k1 = np.asarray(K1, dtype=np.int64) + T1.offset
        k2 = np.asarray(K2, dtype=np.int64) + T2.offset
        return img, k1, k2, np.asarray(G, dtype=np.int64), (np.asarray(RX), np.asarray(RY))

    def cell_index_sets(self, rep) -> np.ndarray:
        """``J_ℓ`` (as rows of ``j`` indices, ``-1`` padded) for representative cells."""
        r = self.raster
        pts = np.stack([r.xc[rep[0]], r.yc[rep[1]]], axis=-1)
        return self.locate_j(pts)[0]


@lru_cache(maxsize=4)
def _cached_build(space: TensorSpace, domain: GraphDomain, eps) -> DiversifiedSpace:
    return DiversifiedSpace(space, domain, eps)


def build_diversified(space: TensorSpace, domain: GraphDomain, eps=None) -> DiversifiedSpace:
    key = None if eps is None else tuple(np.broadcast_to(np.asarray(eps, dtype=float), (2,)))
    return _cached_build(space, domain, key)


def enumerate_diversified(space: TensorSpace, domain: GraphDomain, eps=None) -> list[DivIndex]:
    return build_diversified(space, domain, eps).indices


def condense_2d(space: TensorSpace, domain: GraphDomain, j: DivIndex, eps=None) -> CdBSpline:
    return build_diversified(space, domain, eps).cdb(j)


def cell_components(space: TensorSpace, domain: GraphDomain, eps=None) -> list[CellComponent]:
    ds = build_diversified(space, domain, eps)
    img, k1, k2, gam, rep = ds.cell_labels()
    J = ds.cell_index_sets(rep)
    idx = ds.indices
    out = []
    for ell in range(len(k1)):
        sx = slice(int(ds.kx0[k1[ell] - space.T[0].offset]), int(ds.kx1[k1[ell] - space.T[0].offset]))
        sy = slice(int(ds.ky0[k2[ell] - space.T[1].offset]), int(ds.ky1[k2[ell] - space.T[1].offset]))
        cells = img[sx, sy] == ell + 1
        mask = ComponentMask(int(gam[ell]), ds.raster, sx.start, sy.start, cells)
        js = tuple(idx[j] for j in J[ell] if j >= 0)
        out.append(CellComponent((int(k1[ell]), int(k2[ell])), int(gam[ell]), mask, js))
    return out
