"""Univariate B-splines on knot windows, non-uniform condensation and dual weights.

A bi-infinite knot sequence is represented by a finite :class:`KnotWindow`
that stores ``tau[offset], ..., tau[offset + len(knots) - 1]``.  The B-spline
``b_i`` of order ``n`` lives on ``tau[i], ..., tau[i + n]`` and is evaluated
right-continuously (half-open knot cells).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import scipy.linalg

__all__ = [
    "KnotWindow",
    "LegendreBasis",
    "DualWeights",
    "eval_bspline",
    "basis_matrix",
    "condense",
    "active_indices",
    "legendre_basis",
    "legendre_values",
    "gauss_rule",
    "dual_weights",
    "dual_weights_batch",
    "represent_polynomial",
    "uniform_window",
    "perturbed_window",
    "bisect_window",
    "save_knots",
    "load_knots",
]


@dataclass(frozen=True, eq=False)
class KnotWindow:
    """Finite window of a non-decreasing knot sequence.

    ``condensed_to`` is set on windows produced by :func:`condense`; for those
    the condition ``tau_k < tau_{k+n}`` only holds for splines active on the
    condensation interval, so it is not enforced.
    """

    knots: np.ndarray
    order: int
    offset: int = 0
    condensed_to: tuple[float, float] | None = None

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        n = int(self.order)
        if n < 1:
            raise ValueError("order must be >= 1")
        if knots.ndim != 1 or knots.size < n + 1:
            raise ValueError("knot window must hold at least order + 1 knots")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        if self.condensed_to is None and np.any(knots[n:] <= knots[:-n]):
            raise ValueError("knots must satisfy tau_k < tau_{k+n}")

    def __len__(self):
        return self.knots.size

    @property
    def first(self) -> int:
        """Smallest stored spline index."""
        return self.offset

    @property
    def last(self) -> int:
        """Largest stored spline index."""
        return self.offset + self.knots.size - self.order - 1

    def spline_indices(self) -> range:
        return range(self.first, self.last + 1)

    def tau(self, k):
        pos = np.asarray(k) - self.offset
        if np.any(pos < 0) or np.any(pos >= self.knots.size):
            raise IndexError("knot window underflow")
        return self.knots[pos]

    def local_knots(self, i: int) -> np.ndarray:
        """``tau_i, ..., tau_{i+n}``."""
        if i < self.first or i > self.last:
            raise IndexError(f"knot window underflow (spline {i})")
        p = i - self.offset
        return self.knots[p:p + self.order + 1]

    def support(self, i: int) -> tuple[float, float]:
        t = self.local_knots(i)
        return float(t[0]), float(t[-1])

    def max_spacing(self, within: tuple[float, float] | None = None) -> float:
        """Largest knot interval, optionally only over intervals meeting ``within``."""
        d = np.diff(self.knots)
        if within is not None:
            lo, hi = within
            meet = (self.knots[:-1] < hi) & (self.knots[1:] > lo)
            d = d[meet]
        return float(d.max()) if d.size else 0.0

    def cell_index(self, x) -> np.ndarray:
        """Knot index ``k`` with ``tau_k <= x < tau_{k+1}``."""
        pos = np.searchsorted(self.knots, x, side="right") - 1
        return pos + self.offset


def _cox_de_boor(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    # single B-spline on local knots t (length n + 1), 0/0 := 0
    n = t.size - 1
    vals = [((t[k] <= x) & (x < t[k + 1])).astype(float) for k in range(n)]
    for r in range(2, n + 1):
        for k in range(n - r + 1):
            d1 = t[k + r - 1] - t[k]
            d2 = t[k + r] - t[k + 1]
            v = 0.0
            if d1 > 0:
                v = (x - t[k]) / d1 * vals[k]
            if d2 > 0:
                v = v + (t[k + r] - x) / d2 * vals[k + 1]
            vals[k] = v
    return vals[0] * np.ones_like(x, dtype=float)


def eval_bspline(T: KnotWindow, i: int, x):
    """Value of ``b_i`` at ``x`` (scalar or array)."""
    t = T.local_knots(i)
    xa = np.asarray(x, dtype=float)
    out = _cox_de_boor(t, np.atleast_1d(xa))
    return float(out[0]) if xa.ndim == 0 else out.reshape(xa.shape)


def basis_matrix(T: KnotWindow, x) -> np.ndarray:
    """All stored B-splines at ``x``: shape ``(len(x), T.last - T.first + 1)``."""
    t = T.knots
    x = np.asarray(x, dtype=float)[:, None]
    N = ((t[:-1] <= x) & (x < t[1:])).astype(float)
    for r in range(2, T.order + 1):
        d1 = t[r - 1:-1] - t[:-r]
        d2 = t[r:] - t[1:-r + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(d1 > 0, (x - t[:-r]) / d1, 0.0)
            b = np.where(d2 > 0, (t[r:] - x) / d2, 0.0)
        N = a * N[:, :-1] + b * N[:, 1:]
    return N


def condense(T: KnotWindow, omega: tuple[float, float], h: float | None = None) -> KnotWindow:
    """Non-uniform condensation of ``T`` to the open interval ``omega``.

    ``h`` is the maximal knot spacing the decision is based on; it defaults
    to the largest spacing stored in the window.
    """
    lo, hi = float(omega[0]), float(omega[1])
    if not hi > lo:
        raise ValueError(f"degenerate condensation interval ({lo}, {hi})")
    if h is None:
        h = T.max_spacing()
    if hi - lo > h:
        return T
    knots = np.clip(T.knots, lo, hi)
    return KnotWindow(knots, T.order, T.offset, condensed_to=(lo, hi))


def active_indices(T: KnotWindow, omega: tuple[float, float]) -> list[int]:
    """Indices ``i`` with ``supp b_i`` meeting the open interval ``omega``."""
    lo, hi = omega
    n = T.order
    t = T.knots
    if t[n - 1] > lo or t[t.size - n] < hi:
        raise IndexError("knot window underflow")
    left, right = t[:-n], t[n:]
    hit = np.nonzero((left < hi) & (right > lo))[0]
    return [int(p) + T.offset for p in hit]


@dataclass(frozen=True)
class LegendreBasis:
    """Orthonormal Legendre polynomials of degree < order on ``[lo, hi]``."""

    lo: float
    hi: float
    order: int
    coefficients: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("Legendre basis needs an interval of positive length")
        h = self.hi - self.lo
        # Legendre-series coefficients of l_alpha in the variable (2x - lo - hi) / h
        c = np.diag(np.sqrt((2 * np.arange(self.order) + 1) / h))
        object.__setattr__(self, "coefficients", c)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def values(self, x) -> np.ndarray:
        """Array of shape ``(order, len(x))``."""
        x = np.asarray(x, dtype=float)
        u = (2 * x - self.lo - self.hi) / self.length
        return np.polynomial.legendre.legval(u, self.coefficients.T)

    def __call__(self, alpha: int, x):
        return self.values(np.atleast_1d(x))[alpha]

    def sup_bound(self) -> float:
        """Bound ``sqrt(2 n - 1) h^{-1/2}`` on every sup norm."""
        return float(np.sqrt((2 * self.order - 1) / self.length))


def legendre_basis(interval: tuple[float, float], n: int) -> LegendreBasis:
    return LegendreBasis(float(interval[0]), float(interval[1]), int(n))


def legendre_values(lo, hi, order: int, x) -> np.ndarray:
    """Orthonormal Legendre values for many intervals at once.

    ``lo`` and ``hi`` have shape ``(J,)``, ``x`` has shape ``(J, g)``; the
    result has shape ``(J, order, g)``.
    """
    lo = np.asarray(lo, dtype=float)[:, None]
    hi = np.asarray(hi, dtype=float)[:, None]
    h = hi - lo
    u = (2 * np.asarray(x, dtype=float) - lo - hi) / h
    P = [np.ones_like(u)]
    if order > 1:
        P.append(u)
    for k in range(1, order - 1):
        P.append(((2 * k + 1) * u * P[k] - k * P[k - 1]) / (k + 1))
    scale = np.sqrt((2 * np.arange(order) + 1)[None, :, None] / h[:, :, None])
    return np.stack(P[:order], axis=1) * scale


def gauss_rule(lo, hi, g: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to ``[lo, hi]`` (broadcasts)."""
    t, w = np.polynomial.legendre.leggauss(g)
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    half = 0.5 * (hi - lo)
    return lo + half * (t + 1), half * w


@dataclass(frozen=True)
class DualWeights:
    """Point-evaluation functional giving the coefficient of ``b_index``."""

    index: int
    anchor: tuple[float, float]
    points: np.ndarray
    weights: np.ndarray
    rhs: np.ndarray

    def apply(self, p: Callable) -> float:
        return float(np.dot(self.weights, p(self.points)))


@lru_cache(maxsize=None)
def _weight_system(n: int):
    m = np.arange(1, n + 1, dtype=float)
    A = (m[None, :] - m[:, None]) ** (n - 1)  # rows l, columns m; 0**0 == 1
    cond = np.linalg.cond(A)
    if not np.isfinite(cond):
        raise np.linalg.LinAlgError(f"singular dual-weight system for order {n}")
    return A, scipy.linalg.lu_factor(A)


def dual_weights(T: KnotWindow, i: int) -> DualWeights:
    """Weights ``w_{i,m}`` and points ``lambda_{i,m}`` reproducing polynomial coefficients."""
    n = T.order
    t = T.local_knots(i)
    if not t[-1] > t[0]:
        raise ValueError(f"spline {i} has empty support")
    widths = np.diff(t)
    k = int(np.argmax(widths))  # leftmost longest interval
    lo, length = float(t[k]), float(widths[k])
    if n == 1:
        one = np.ones(1)
        return DualWeights(i, (lo, lo + length), np.array([lo]), one, one)
    lam = lo + np.arange(n) / (n - 1) * length
    psi = np.prod(t[1:n][None, :] - lam[:, None], axis=1)
    rhs = ((n - 1) / length) ** (n - 1) * psi
    A, lu = _weight_system(n)
    w = scipy.linalg.lu_solve(lu, rhs)
    res = np.abs(A @ w - rhs).max()
    if res > 1e-10 * max(1.0, np.abs(rhs).max()):
        raise np.linalg.LinAlgError(f"dual-weight residual {res:.3e} for spline {i}")
    return DualWeights(i, (lo, lo + length), lam, w, rhs)


def dual_weights_batch(T: KnotWindow, indices) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`dual_weights`: points and weights of shape ``(len(indices), n)``."""
    n = T.order
    pos = np.asarray(indices, dtype=np.int64) - T.offset
    if pos.size and (pos.min() < 0 or pos.max() + n >= len(T)):
        raise IndexError("knot window underflow")
    t = T.knots[pos[:, None] + np.arange(n + 1)]
    widths = np.diff(t, axis=1)
    k = np.argmax(widths, axis=1)
    lo = t[np.arange(pos.size), k]
    length = widths[np.arange(pos.size), k]
    if np.any(length <= 0):
        raise ValueError("spline with empty support")
    if n == 1:
        return lo[:, None].copy(), np.ones((pos.size, 1))
    lam = lo[:, None] + np.arange(n) / (n - 1) * length[:, None]
    psi = np.prod(t[:, None, 1:n] - lam[:, :, None], axis=2)
    rhs = ((n - 1) / length[:, None]) ** (n - 1) * psi
    A, lu = _weight_system(n)
    w = scipy.linalg.lu_solve(lu, rhs.T).T
    res = np.abs(w @ A.T - rhs).max(axis=1)
    if np.any(res > 1e-10 * np.maximum(1.0, np.abs(rhs).max(axis=1))):
        raise np.linalg.LinAlgError("dual-weight residual above tolerance")
    return lam, w


def represent_polynomial(T: KnotWindow, p: Callable, omega: tuple[float, float]) -> dict[int, float]:
    """B-spline coefficients ``s_i`` of the polynomial ``p`` (degree < order) on ``omega``."""
    return {i: dual_weights(T, i).apply(p) for i in active_indices(T, omega)}


def uniform_window(lo: float, hi: float, h: float, n: int, anchor: float = 0.0) -> KnotWindow:
    """Knots ``anchor + k h`` covering ``[lo, hi]`` with ``n + 1`` spare cells per side."""
    k0 = int(np.floor((lo - anchor) / h)) - (n + 1)
    k1 = int(np.ceil((hi - anchor) / h)) + (n + 1)
    k = np.arange(k0, k1 + 1)
    return KnotWindow(anchor + k * h, n, offset=int(k0))


def perturbed_window(lo: float, hi: float, h: float, n: int, jitter: float,
                     rng: np.random.Generator, anchor: float = 0.0) -> KnotWindow:
    """Uniform knots each displaced by up to ``jitter * h / 2``.

    Neighbouring cells then have widths in ``[(1 - jitter) h, (1 + jitter) h]``.
    """
    if not 0 <= jitter < 1:
        raise ValueError("jitter must lie in [0, 1)")
    base = uniform_window(lo - h, hi + h, h, n, anchor)  # spare cell for widened spacings
    shift = rng.uniform(-0.5, 0.5, size=len(base)) * jitter * h
    return KnotWindow(base.knots + shift, n, offset=base.offset)


def bisect_window(T: KnotWindow, times: int = 1) -> KnotWindow:
    """Insert the midpoint of every knot interval ``times`` times (nested refinement)."""
    for _ in range(times):
        k = T.knots
        out = np.empty(2 * len(k) - 1)
        out[0::2] = k
        out[1::2] = 0.5 * (k[:-1] + k[1:])
        T = KnotWindow(out, T.order, 2 * T.offset)
    return T


def save_knots(T: KnotWindow, path) -> None:
    lines = [f"# order {T.order}", f"# offset {T.offset}"]
    lines += [repr(float(t)) for t in T.knots]
    Path(path).write_text("\n".join(lines) + "\n")


def load_knots(path, order: int | None = None) -> KnotWindow:
    meta = {}
    knots = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] in ("order", "offset"):
                meta[parts[0]] = int(parts[1])
            continue
        knots.append(float(line))
    n = order if order is not None else meta.get("order")
    if n is None:
        raise ValueError(f"{path}: knot order not given")
    return KnotWindow(np.array(knots), n, offset=meta.get("offset", 0))


def greville(T: KnotWindow, indices: Iterable[int]) -> np.ndarray:
    n = T.order
    if n == 1:
        return np.array([T.local_knots(i)[0] for i in indices])
    return np.array([T.local_knots(i)[1:n].mean() for i in indices])
