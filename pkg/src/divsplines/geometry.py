"""Graph domains, axis-aligned boxes and raster connected components."""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

__all__ = [
    "AxisIsometry",
    "GraphPiece",
    "GraphDomain",
    "Box",
    "Raster",
    "ComponentMask",
    "contains",
    "neighbourhood",
    "components",
    "component_of",
    "pruned_bbox",
    "local_neighbourhood",
    "domain_raster",
    "load_domain",
    "dump_domain",
    "write_pgm",
]

_ROT = [np.array(m, dtype=float) for m in (
    [[1, 0], [0, 1]], [[0, -1], [1, 0]], [[-1, 0], [0, -1]], [[0, 1], [-1, 0]])]


@dataclass(frozen=True)
class AxisIsometry:
    """Rotation by ``rotation * pi/2`` (counter-clockwise) followed by a translation."""

    rotation: int = 0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation", int(self.rotation) % 4)
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ _ROT[self.rotation].T + np.asarray(self.translation)

    def inverse(self) -> AxisIsometry:
        q = (-self.rotation) % 4
        t = -(_ROT[q] @ np.asarray(self.translation))
        return AxisIsometry(q, (float(t[0]), float(t[1])))

    def compose(self, other: AxisIsometry) -> AxisIsometry:
        """``self`` after ``other``."""
        t = _ROT[self.rotation] @ np.asarray(other.translation) + np.asarray(self.translation)
        return AxisIsometry(self.rotation + other.rotation, (float(t[0]), float(t[1])))

    def apply_box(self, box: Box) -> Box:
        corners = np.array([[box.lo[0], box.lo[1]], [box.hi[0], box.hi[1]]])
        img = self.apply(corners)
        return Box(tuple(img.min(axis=0)), tuple(img.max(axis=0)))


@dataclass(frozen=True)
class GraphPiece:
    """Region below the graph of a piecewise linear ``phi`` on ``[-a, a]``.

    ``phi`` is given by samples ``(xs, ys)``; abscissae must be strictly
    increasing and cover ``[-a, a]``.
    """

    a: float
    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __post_init__(self):
        xs = tuple(float(v) for v in self.xs)
        ys = tuple(float(v) for v in self.ys)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        if self.a <= 0:
            raise ValueError("piece half-width a must be positive")
        if len(xs) != len(ys) or len(xs) < 2:
            raise ValueError("phi needs at least two samples")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("phi abscissae must be strictly increasing")
        if xs[0] > -self.a or xs[-1] < self.a:
            raise ValueError("phi samples must cover [-a, a]")

    def phi(self, s) -> np.ndarray:
        return np.interp(s, self.xs, self.ys)

    def min_phi(self) -> float:
        inner = [y for x, y in zip(self.xs, self.ys) if -self.a <= x <= self.a]
        return float(min(inner + [self.phi(-self.a), self.phi(self.a)]))

    def max_phi(self) -> float:
        inner = [y for x, y in zip(self.xs, self.ys) if -self.a <= x <= self.a]
        return float(max(inner + [self.phi(-self.a), self.phi(self.a)]))

    def contains_local(self, pts, delta: float) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        s, y = pts[..., 0], pts[..., 1]
        return (np.abs(s) < self.a - delta) & (y > delta) & (y < self.phi(s))

    def local_box(self, delta: float) -> Box:
        return Box((-self.a + delta, delta), (self.a - delta, self.max_phi()))


@dataclass(frozen=True)
class GraphDomain:
    """Union of isometric images of graph pieces with overlap parameter ``h0``."""

    pieces: tuple[tuple[AxisIsometry, GraphPiece], ...]
    h0: float
    delta: float = 0.0
    name: str = "domain"

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple((s, p) for s, p in self.pieces))
        if not self.pieces:
            raise ValueError("graph domain needs at least one piece")
        if self.h0 <= 0:
            raise ValueError("h0 must be positive")
        if not 0 <= self.delta <= self.h0:
            raise ValueError("delta must lie in [0, h0]")
        for r, (_, piece) in enumerate(self.pieces):
            if piece.a <= self.h0:
                raise ValueError(f"piece {r}: a = {piece.a} must exceed h0 = {self.h0}")
            if piece.min_phi() <= self.h0:
                raise ValueError(f"piece {r}: min phi must exceed h0 = {self.h0}")

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1], dtype=bool)
        for iso, piece in self.pieces:
            out |= piece.contains_local(iso.inverse().apply(pts), self.delta)
        return out

    def bbox(self) -> Box:
        boxes = [iso.apply_box(p.local_box(self.delta)) for iso, p in self.pieces]
        lo = np.min([b.lo for b in boxes], axis=0)
        hi = np.max([b.hi for b in boxes], axis=0)
        return Box(tuple(lo), tuple(hi))

    def chart_containing(self, pts) -> int | None:
        """Index of a piece ``r`` whose chart ``Phi_r^0`` holds every point, if any."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        for r, (iso, piece) in enumerate(self.pieces):
            if np.all(piece.contains_local(iso.inverse().apply(pts), 0.0)):
                return r
        return None


def contains(domain: GraphDomain, x) -> bool | np.ndarray:
    res = domain.contains(x)
    return bool(res) if np.ndim(res) == 0 else res


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi]``; components may be infinite."""

    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if lo[0] > hi[0] or lo[1] > hi[1]:
            raise ValueError(f"invalid box {lo} > {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def size(self) -> tuple[float, float]:
        return (self.hi[0] - self.lo[0], self.hi[1] - self.lo[1])

    def interval(self, axis: int) -> tuple[float, float]:
        return (self.lo[axis], self.hi[axis])

    def contains(self, x) -> bool:
        return all(self.lo[k] <= x[k] <= self.hi[k] for k in range(2))

    def intersect(self, other: Box) -> Box | None:
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return Box(tuple(lo), tuple(hi))

    def includes(self, other: Box, tol: float = 0.0) -> bool:
        return all(self.lo[k] - tol <= other.lo[k] and other.hi[k] <= self.hi[k] + tol
                   for k in range(2))

    @staticmethod
    def bounding(pts) -> Box:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return Box(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))


def neighbourhood(M: Box, h) -> Box:
    """``N(M, h)``: the bounding box of ``M`` grown by ``h`` on each side."""
    h = np.broadcast_to(np.asarray(h, dtype=float), (2,))
    if np.any(h < 0):
        raise ValueError("neighbourhood widths must be non-negative")
    return Box(tuple(np.subtract(M.lo, h)), tuple(np.add(M.hi, h)))


class Raster:
    """Tensor raster of cells with membership of their centres in a domain.

    Cells are given by strictly increasing edge arrays; ``mask[ix, iy]`` is
    true when the centre of cell ``(ix, iy)`` lies in the domain.
    """

    def __init__(self, domain: GraphDomain, x_edges, y_edges):
        self.domain = domain
        self.x_edges = np.asarray(x_edges, dtype=float)
        self.y_edges = np.asarray(y_edges, dtype=float)
        if np.any(np.diff(self.x_edges) <= 0) or np.any(np.diff(self.y_edges) <= 0):
            raise ValueError("raster edges must be strictly increasing")
        self.xc = 0.5 * (self.x_edges[1:] + self.x_edges[:-1])
        self.yc = 0.5 * (self.y_edges[1:] + self.y_edges[:-1])
        self.dx = np.diff(self.x_edges)
        self.dy = np.diff(self.y_edges)
        mask = np.zeros((self.xc.size, self.yc.size), dtype=bool)
        for iy in range(0, self.yc.size, 256):
            ys = self.yc[iy:iy + 256]
            X, Y = np.meshgrid(self.xc, ys, indexing="ij")
            mask[:, iy:iy + 256] = domain.contains(np.stack([X, Y], axis=-1))
        mask.setflags(write=False)
        self.mask = mask

    @classmethod
    def uniform(cls, domain: GraphDomain, eps) -> Raster:
        """Cells of size ``eps`` covering the domain's bounding box grown by ``eps``."""
        eps = np.broadcast_to(np.asarray(eps, dtype=float), (2,))
        if np.any(eps <= 0):
            raise ValueError("raster resolution must be positive")
        bb = domain.bbox()
        edges = []
        for k in range(2):
            lo = bb.lo[k] - eps[k]
            m = int(np.ceil((bb.hi[k] + eps[k] - lo) / eps[k]))
            edges.append(lo + eps[k] * np.arange(m + 1))
        return cls(domain, *edges)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def extent(self) -> Box:
        return Box((self.x_edges[0], self.y_edges[0]), (self.x_edges[-1], self.y_edges[-1]))

    def cell_range(self, box: Box) -> tuple[slice, slice]:
        """Cells whose centres satisfy ``lo <= c < hi``."""
        sx = slice(int(np.searchsorted(self.xc, box.lo[0], "left")),
                   int(np.searchsorted(self.xc, box.hi[0], "left")))
        sy = slice(int(np.searchsorted(self.yc, box.lo[1], "left")),
                   int(np.searchsorted(self.yc, box.hi[1], "left")))
        return sx, sy

    def locate(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Cell indices of points (``-1`` outside the raster)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        ix = np.searchsorted(self.x_edges, pts[:, 0], "right") - 1
        iy = np.searchsorted(self.y_edges, pts[:, 1], "right") - 1
        bad = (ix < 0) | (ix >= self.xc.size) | (iy < 0) | (iy >= self.yc.size)
        ix[bad] = -1
        iy[bad] = -1
        return ix, iy

    def cells_overlapping(self, lo: float, hi: float, axis: int) -> slice:
        """Cells meeting the open interval ``(lo, hi)`` along ``axis``."""
        e = self.x_edges if axis == 0 else self.y_edges
        a = max(int(np.searchsorted(e, lo, "right")) - 1, 0)
        b = min(int(np.searchsorted(e, hi, "left")), e.size - 1)
        return slice(a, b)

    def cell_areas(self, sx: slice = slice(None), sy: slice = slice(None)) -> np.ndarray:
        return np.outer(self.dx[sx], self.dy[sy])

    @cached_property
    def sat(self) -> np.ndarray:
        """Summed-area table of the mask, padded with a leading zero row/column."""
        s = np.zeros((self.shape[0] + 1, self.shape[1] + 1), dtype=np.int64)
        s[1:, 1:] = self.mask.cumsum(0).cumsum(1)
        return s

    def count(self, ix0, ix1, iy0, iy1):
        """Number of marked cells in ``[ix0, ix1) x [iy0, iy1)`` (vectorised)."""
        s = self.sat
        return s[ix1, iy1] - s[ix0, iy1] - s[ix1, iy0] + s[ix0, iy0]


@dataclass(frozen=True, eq=False)
class ComponentMask:
    """One 4-connected raster component; ``cells`` is a bitmap anchored at ``(ix0, iy0)``."""

    id: int
    raster: Raster
    ix0: int
    iy0: int
    cells: np.ndarray

    @property
    def resolution(self) -> tuple[float, float]:
        sx, sy = self.slices
        return float(self.raster.dx[sx].max()), float(self.raster.dy[sy].max())

    @property
    def slices(self) -> tuple[slice, slice]:
        return (slice(self.ix0, self.ix0 + self.cells.shape[0]),
                slice(self.iy0, self.iy0 + self.cells.shape[1]))

    @cached_property
    def bbox(self) -> Box:
        ix = np.nonzero(self.cells.any(axis=1))[0]
        iy = np.nonzero(self.cells.any(axis=0))[0]
        r = self.raster
        return Box((r.x_edges[self.ix0 + ix[0]], r.y_edges[self.iy0 + iy[0]]),
                   (r.x_edges[self.ix0 + ix[-1] + 1], r.y_edges[self.iy0 + iy[-1] + 1]))

    @property
    def n_cells(self) -> int:
        return int(self.cells.sum())

    def first_cell(self) -> tuple[int, int]:
        ix, iy = np.argwhere(self.cells)[0]
        return int(ix) + self.ix0, int(iy) + self.iy0

    def global_cells(self) -> tuple[np.ndarray, np.ndarray]:
        ix, iy = np.nonzero(self.cells)
        return ix + self.ix0, iy + self.iy0

    def centers(self) -> np.ndarray:
        ix, iy = self.global_cells()
        return np.stack([self.raster.xc[ix], self.raster.yc[iy]], axis=-1)

    def has_cell(self, ix, iy) -> np.ndarray:
        ix = np.asarray(ix) - self.ix0
        iy = np.asarray(iy) - self.iy0
        ok = (ix >= 0) & (iy >= 0) & (ix < self.cells.shape[0]) & (iy < self.cells.shape[1])
        out = np.zeros(ix.shape, dtype=bool)
        out[ok] = self.cells[ix[ok], iy[ok]]
        return out

    def contains(self, x) -> bool:
        ix, iy = self.raster.locate(np.asarray(x, dtype=float))
        return bool(ix[0] >= 0 and self.has_cell(ix, iy)[0])

    def includes(self, other: ComponentMask) -> bool:
        ix, iy = other.global_cells()
        return bool(np.all(self.has_cell(ix, iy)))

    def to_image(self) -> np.ndarray:
        img = np.zeros(self.raster.shape, dtype=bool)
        img[self.slices] = self.cells
        return img


def label_block(block: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected labels of a boolean block; numbering follows the lexicographically smallest cell."""
    return ndimage.label(block)


def _masks_from_labels(raster, labels, n, ix0, iy0) -> list[ComponentMask]:
    out = []
    for k, sl in enumerate(ndimage.find_objects(labels, n)):
        cells = labels[sl] == k + 1
        out.append(ComponentMask(k, raster, ix0 + sl[0].start, iy0 + sl[1].start, cells))
    return out


@lru_cache(maxsize=16)
def domain_raster(domain: GraphDomain, eps: float) -> Raster:
    """Shared uniform raster of a domain at resolution ``eps``."""
    return Raster.uniform(domain, eps)


def components(domain: GraphDomain, M: Box, eps: float | None = None,
               raster: Raster | None = None) -> list[ComponentMask]:
    """Connected components of ``M`` intersected with the domain, on a raster."""
    if raster is None:
        if eps is None:
            raise ValueError("either eps or raster is required")
        raster = domain_raster(domain, float(eps))
    clipped = M.intersect(raster.extent)
    if clipped is None:
        return []
    sx, sy = raster.cell_range(clipped)
    block = raster.mask[sx, sy]
    if block.size == 0:
        return []
    labels, n = label_block(block)
    return _masks_from_labels(raster, labels, n, sx.start, sy.start)


def component_of(comps: Sequence[ComponentMask], x) -> ComponentMask | None:
    for c in comps:
        if c.contains(x):
            return c
    return None


def _as_mask(domain: GraphDomain, M, eps) -> ComponentMask:
    if isinstance(M, ComponentMask):
        return M
    raster = domain_raster(domain, float(eps))
    sx, sy = raster.cell_range(M)
    cells = raster.mask[sx, sy].copy()
    if cells.size == 0 or not cells.all():
        raise ValueError("box is not inside the domain on the raster")
    return ComponentMask(0, raster, sx.start, sy.start, cells)


def _containing(comps, M: ComponentMask) -> ComponentMask:
    ix, iy = M.first_cell()
    for c in comps:
        if c.has_cell(np.array([ix]), np.array([iy]))[0]:
            return c
    raise AssertionError("connected subset is not contained in any component")


def pruned_bbox(domain: GraphDomain, M, eps: float | None = None) -> ComponentMask:
    """Component of ``B(M) ∩ Ω`` containing the connected set ``M``."""
    M = _as_mask(domain, M, eps)
    return _containing(components(domain, M.bbox, raster=M.raster), M)


def local_neighbourhood(domain: GraphDomain, M, h, eps: float | None = None) -> ComponentMask:
    """Component of ``N(M, h) ∩ Ω`` containing the connected set ``M``."""
    M = _as_mask(domain, M, eps)
    return _containing(components(domain, neighbourhood(M.bbox, h), raster=M.raster), M)


def write_pgm(path, image) -> None:
    """Binary PGM; ``image[ix, iy]`` is drawn with ``x`` to the right and ``y`` up."""
    img = np.asarray(image)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    img = np.flipud(img.T).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    w, h = int(parts[1]), int(parts[2])
    img = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return np.flipud(img).T


def load_domain(path) -> GraphDomain:
    """Read a domain file (INI style: ``[domain]`` plus one ``[piece ...]`` per chart)."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    return _domain_from_parser(cp, Path(path).stem)


def parse_domain(text: str, name: str = "domain") -> GraphDomain:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    return _domain_from_parser(cp, name)


def _domain_from_parser(cp: configparser.ConfigParser, name: str) -> GraphDomain:
    if "domain" not in cp:
        raise ValueError("domain file lacks a [domain] section")
    d = cp["domain"]
    pieces = []
    for sec in cp.sections():
        if not sec.startswith("piece"):
            continue
        s = cp[sec]
        tx, ty = (float(v) for v in s.get("translation", "0 0").split())
        samples = [tuple(float(v) for v in pair.split()) for pair in s["phi"].split(";") if pair.strip()]
        xs, ys = zip(*samples)
        pieces.append((AxisIsometry(s.getint("rotation", 0), (tx, ty)),
                       GraphPiece(s.getfloat("a"), xs, ys)))
    return GraphDomain(tuple(pieces), d.getfloat("h0"), d.getfloat("delta", 0.0),
                       d.get("name", name))


def dump_domain(domain: GraphDomain) -> str:
    lines = ["[domain]", f"name = {domain.name}", f"h0 = {domain.h0!r}", f"delta = {domain.delta!r}", ""]
    for r, (iso, p) in enumerate(domain.pieces):
        phi = "; ".join(f"{x!r} {y!r}" for x, y in zip(p.xs, p.ys))
        lines += [f"[piece {r}]", f"rotation = {iso.rotation}",
                  f"translation = {iso.translation[0]!r} {iso.translation[1]!r}",
                  f"a = {p.a!r}", f"phi = {phi}", ""]
    return "\n".join(lines)
