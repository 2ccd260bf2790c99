"""Error norms, test functions, convergence and aspect-ratio studies, and baselines.

All norms are midpoint sums over the marked cells of a raster (maximum over
cell centres for ``p = inf``); for ``p < inf`` this carries an ``O(eps)``
boundary bias.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diversified import DiversifiedSpace, TensorSpace, build_diversified
from .geometry import ComponentMask, GraphDomain, Raster, domain_raster
from .quasi import QuasiInterpolant
from .univariate import basis_matrix, bisect_window

__all__ = [
    "TestFunction",
    "FUNCTIONS",
    "get_function",
    "lp_norm",
    "raster_norm",
    "StudyRow",
    "StudyReport",
    "CSV_COLUMNS",
    "convergence_study",
    "aspect_ratio_sweep",
    "baseline_best_approx",
    "diversified_best_approx",
    "DimensionCapExceeded",
    "quasi_error",
]

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TestFunction:
    """Analytic field with exact pure partial derivatives.

    ``partial(s, k)`` returns ``d^k f / dx_s^k`` as a field (``s`` in ``{0, 1}``).
    """

    __test__ = False  # not a pytest class

    name: str
    f: Field
    partial_fn: Callable[[int, int], Field]
    polynomial_degree: tuple[int, int] | None = None

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=float))

    def partial(self, s: int, k: int) -> Field:
        if k == 0:
            return self.f
        return self.partial_fn(s, k)

    def check_partials(self, k: int, pts: np.ndarray, step: float = 1e-4) -> float:
        """Largest relative mismatch between each exact partial of order ``1..k`` and a
        central difference of the exact partial one order lower."""
        worst = 0.0
        for s in range(2):
            e = np.zeros(2)
            e[s] = step
            for m in range(1, k + 1):
                lower = self.partial(s, m - 1)
                fd = (lower(pts + e) - lower(pts - e)) / (2 * step)
                ex = self.partial(s, m)(pts)
                scale = np.maximum(np.abs(ex), np.max(np.abs(ex)) * 1e-3 + 1e-300)
                worst = max(worst, float(np.max(np.abs(fd - ex) / scale)))
        return worst


def _sin_exp() -> TestFunction:
    def f(x):
        return np.sin(x[..., 0]) * np.exp(x[..., 1])

    def d(s, k):
        if s == 0:
            return lambda x: np.sin(x[..., 0] + k * np.pi / 2) * np.exp(x[..., 1])
        return f
    return TestFunction("sin_exp", f, d)


def _cos_prod() -> TestFunction:
    def f(x):
        return np.cos(2 * x[..., 0]) * np.cos(3 * x[..., 1])

    def d(s, k):
        if s == 0:
            return lambda x: 2.0 ** k * np.cos(2 * x[..., 0] + k * np.pi / 2) * np.cos(3 * x[..., 1])
        return lambda x: 3.0 ** k * np.cos(2 * x[..., 0]) * np.cos(3 * x[..., 1] + k * np.pi / 2)
    return TestFunction("cos_prod", f, d)


def _exp_sum() -> TestFunction:
    def f(x):
        return np.exp(0.5 * x[..., 0] - 0.25 * x[..., 1])

    def d(s, k):
        c = 0.5 if s == 0 else -0.25
        return lambda x: c ** k * f(x)
    return TestFunction("exp_sum", f, d)


def monomial_function(d1: int, d2: int) -> TestFunction:
    def f(x):
        return x[..., 0] ** d1 * x[..., 1] ** d2

    def d(s, k):
        deg = (d1, d2)[s]
        if k > deg:
            return lambda x: np.zeros(np.shape(x)[:-1])
        c = math.perm(deg, k)
        e = [d1, d2]
        e[s] -= k
        return lambda x: c * x[..., 0] ** e[0] * x[..., 1] ** e[1]
    return TestFunction(f"poly:{d1},{d2}", f, d, (d1, d2))


FUNCTIONS: dict[str, Callable[[], TestFunction]] = {
    "sin_exp": _sin_exp,
    "cos_prod": _cos_prod,
    "exp_sum": _exp_sum,
}


def get_function(name: str) -> TestFunction:
    """Registry lookup; ``poly:a,b`` gives the monomial ``x1^a x2^b``."""
    if name.startswith("poly:"):
        a, b = (int(v) for v in name[5:].split(","))
        return monomial_function(a, b)
    try:
        return FUNCTIONS[name]()
    except KeyError:
        raise KeyError(f"unknown test function {name!r}; known: {sorted(FUNCTIONS)} or poly:a,b") from None


# -- norms ----------------------------------------------------------------------------------

def raster_norm(values: np.ndarray, raster: Raster, p: float, mask: np.ndarray | None = None) -> float:
    """Midpoint-rule ``L^p`` norm of cell-centre values over marked cells."""
    m = raster.mask if mask is None else mask
    if not m.any():
        raise ValueError("empty region")
    v = np.abs(values[m])
    if np.isinf(p):
        return float(v.max())
    w = np.broadcast_to(np.outer(raster.dx, raster.dy), raster.shape)[m]
    return float(np.sum(w * v ** p) ** (1.0 / p))


def lp_norm(g, region, p: float, eps: float | None = None) -> float:
    """``||g||_{region, p}`` by midpoint quadrature on a raster.

    ``region`` is a :class:`GraphDomain` (rasterised at ``eps``), a
    :class:`Raster` or a :class:`ComponentMask`; ``g`` is a field or an
    array of cell-centre values on the raster.
    """
    if not (p >= 1):
        raise ValueError("p must lie in [1, inf]")
    if isinstance(region, GraphDomain):
        if eps is None:
            raise ValueError("eps is required for a domain region")
        region = domain_raster(region, float(eps))
    if isinstance(region, ComponentMask):
        raster, mask = region.raster, region.to_image()
    else:
        raster, mask = region, region.mask
    if callable(g):
        vals = np.zeros(raster.shape)
        ix, iy = np.nonzero(mask)
        vals[ix, iy] = g(np.stack([raster.xc[ix], raster.yc[iy]], axis=-1))
    else:
        vals = np.asarray(g, dtype=float)
    return raster_norm(vals, raster, p, mask)


def _raster_values(g: Field, raster: Raster, chunk: int = 256) -> np.ndarray:
    out = np.empty(raster.shape)
    for a in range(0, raster.shape[1], chunk):
        X, Y = np.meshgrid(raster.xc, raster.yc[a:a + chunk], indexing="ij")
        out[:, a:a + chunk] = g(np.stack([X, Y], axis=-1))
    return out


# -- reports --------------------------------------------------------------------------------

CSV_COLUMNS = ("study", "domain", "n1", "n2", "h1", "h2", "rho", "p", "E", "B", "ratio",
               "order_est", "seconds")


@dataclass
class StudyRow:
    study: str
    domain: str
    n1: int
    n2: int
    h1: float
    h2: float
    rho: float
    p: float
    E: float
    B: float
    ratio: float
    order_est: float = math.nan
    seconds: float = math.nan


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


@dataclass
class StudyReport:
    """Rows of a study in declared sweep order."""

    rows: list[StudyRow] = field(default_factory=list)
    exact: bool = False  # set when f lies in the polynomial space (ratios are not meaningful)

    def select(self, study: str | None = None, p: float | None = None) -> list[StudyRow]:
        return [r for r in self.rows if (study is None or r.study == study) and (p is None or r.p == p)]

    def ratio_spread(self, study: str | None = None, p: float | None = None) -> float:
        """``max ratio / min ratio`` over the selected rows."""
        rs = [r.ratio for r in self.select(study, p)]
        return max(rs) / min(rs)

    def to_csv(self, path=None, timings: bool = False) -> str:
        """CSV text (also written to ``path``); ``seconds`` is ``nan`` unless ``timings``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            vals = [getattr(r, c) for c in CSV_COLUMNS]
            if not timings:
                vals[-1] = math.nan
            w.writerow([_fmt(v) for v in vals])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @staticmethod
    def from_csv(text: str) -> StudyReport:
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            kw = {}
            for c in CSV_COLUMNS:
                v = rec[c]
                kw[c] = v if c in ("study", "domain") else (int(v) if c in ("n1", "n2") else float(v))
            rows.append(StudyRow(**kw))
        return StudyReport(rows)

    def timings_csv(self, path=None) -> str:
        text = "row,study,h1,h2,p,seconds\n" + "".join(
            f"{k},{r.study},{r.h1!r},{r.h2!r},{_fmt(float(r.p))},{r.seconds!r}\n" for k, r in enumerate(self.rows))
        if path is not None:
            Path(path).write_text(text)
        return text

    def write_plot_data(self, directory, x: str = "h1") -> list[Path]:
        """One ``x E`` pair file per (study, p) series."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        series: dict[tuple[str, float], list[StudyRow]] = {}
        for r in self.rows:
            series.setdefault((r.study, r.p), []).append(r)
        out = []
        for (study, p), rows in series.items():
            path = d / f"{study}_p{float(p):g}.dat"
            path.write_text("".join(f"{getattr(r, x)!r} {r.E!r}\n" for r in rows))
            out.append(path)
        return out


# -- quasi-interpolation error --------------------------------------------------------------

def quasi_error(ds: DiversifiedSpace, f: TestFunction, ps: Sequence[float], panels: int = 1):
    """``E_p = ||f - Qf||`` and ``B_p`` on the raster of ``ds`` for each ``p``."""
    op = QuasiInterpolant(ds, panels)
    coeffs = op.coefficients(f)
    Q = ds.evaluate_on_raster(coeffs)
    F = _raster_values(f, ds.raster)
    n1, n2 = ds.space.n
    h1, h2 = ds.space.h
    D1 = _raster_values(f.partial(0, n1), ds.raster)
    D2 = _raster_values(f.partial(1, n2), ds.raster)
    out = {}
    for p in ps:
        E = raster_norm(F - Q, ds.raster, p)
        B = h1 ** n1 * raster_norm(D1, ds.raster, p) + h2 ** n2 * raster_norm(D2, ds.raster, p)
        out[p] = (E, B)
    return out


def _space_for(domain: GraphDomain, h, n, knots: str = "uniform", jitter: float = 0.0,
               seed: int = 0, bisections: int = 0) -> TensorSpace:
    if bisections:
        coarse = _space_for(domain, h, n, knots, jitter, seed)
        return TensorSpace(*(bisect_window(T, bisections) for T in coarse.T), coarse.box)
    h = tuple(float(v) for v in np.broadcast_to(np.asarray(h, dtype=float), (2,)))
    n = tuple(int(v) for v in np.broadcast_to(np.asarray(n), (2,)))
    if knots == "uniform":
        specs = [{"kind": "uniform", "h": h[s]} for s in range(2)]
    elif knots == "perturbed":
        specs = [{"kind": "perturbed", "h": h[s], "jitter": jitter} for s in range(2)]
    else:
        raise ValueError(f"unknown knot family {knots!r}")
    return TensorSpace.from_spec(domain.bbox(), specs, n, seed)


def _row(study, domain, space, p, E, B, seconds, exact=False) -> StudyRow:
    h1, h2 = space.h
    ratio = E / B if B > 0 else (0.0 if exact else math.inf)
    return StudyRow(study, domain.name, space.n[0], space.n[1], h1, h2, max(h1, h2) / min(h1, h2),
                    float(p), E, B, ratio, math.nan, seconds)


def _map(fn, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


def _function_of(f) -> TestFunction:
    return get_function(f) if isinstance(f, str) else f


def _halvings(g0, g) -> int:
    a = np.broadcast_to(np.asarray(g0, dtype=float), (2,))
    b = np.broadcast_to(np.asarray(g, dtype=float), (2,))
    k = np.log2(a / b)
    if not (np.allclose(k, np.round(k), atol=1e-9) and np.isclose(k[0], k[1]) and k[0] >= 0):
        raise ValueError(f"nested refinement needs grids that halve from {tuple(a)}, got {tuple(b)}")
    return int(round(k[0]))


def _convergence_task(task) -> list[StudyRow]:
    domain, f, n, g, ps, eps, knots, jitter, seed, study, panels, bisections = task
    f = _function_of(f)
    t0 = time.perf_counter()
    space = g if isinstance(g, TensorSpace) else _space_for(domain, g, n, knots, jitter, seed, bisections)
    ds = DiversifiedSpace(space, domain, eps)
    res = quasi_error(ds, f, ps, panels)
    secs = time.perf_counter() - t0
    exact = f.polynomial_degree is not None
    return [_row(study, domain, space, p, *res[p], secs, exact) for p in ps]


def convergence_study(domain: GraphDomain, f, n, grids: Sequence, ps: Sequence[float] = (np.inf, 2),
                      eps=None, knots: str = "uniform", jitter: float = 0.0, seed: int = 0,
                      study: str = "convergence", panels: int = 1, jobs: int = 1,
                      nested: bool = True) -> StudyReport:
    """One row per (grid, p) in declared order, with orders from successive refinement.

    ``grids`` holds nominal widths ``h`` (scalars or pairs) or ready :class:`TensorSpace` objects.
    For perturbed knots with ``nested`` the widths must halve from level to level;
    the first grid is drawn once and later ones bisect it, so every level shares
    the same relative knot geometry.  Otherwise each level draws its own knots.  ``order_est`` of a row
    is ``log(E_prev / E) / log(h_prev / h)`` for the same ``p`` using the
    largest realised spacing.  With ``jobs > 1`` grids run in worker processes
    (``f`` must then be a registry name).
    """
    f_obj = _function_of(f)
    report = StudyReport(exact=f_obj.polynomial_degree is not None)
    levels = [(g, 0) for g in grids]
    if knots == "perturbed" and nested:
        levels = [(grids[0], _halvings(grids[0], g)) for g in grids]
    tasks = [(domain, f if jobs > 1 else f_obj, n, g, tuple(ps), eps, knots, jitter, seed, study, panels, k)
             for g, k in levels]
    prev: dict[float, StudyRow] = {}
    for rows in _map(_convergence_task, tasks, jobs):
        for row in rows:
            p = row.p
            if p in prev and row.E > 0 and prev[p].E > 0:
                hp, hc = max(prev[p].h1, prev[p].h2), max(row.h1, row.h2)
                row.order_est = math.log(prev[p].E / row.E) / math.log(hp / hc)
            prev[p] = row
            report.rows.append(row)
    return report


def _aspect_task(task) -> list[StudyRow]:
    domain, f, n, rho, p, h2, eps, baseline, cap, study = task
    f = _function_of(f)
    exact = f.polynomial_degree is not None
    t0 = time.perf_counter()
    space = _space_for(domain, (rho * h2, h2), n)
    ds = DiversifiedSpace(space, domain, eps)
    E, B = quasi_error(ds, f, [p])[p]
    rows = [_row(study, domain, space, p, E, B, time.perf_counter() - t0, exact)]
    if baseline:
        t0 = time.perf_counter()
        Eb = baseline_best_approx(domain, f, space.n, space, eps=ds.eps, cap=cap, raster=ds.raster)
        rows.append(_row(study + "-baseline", domain, space, 2.0, Eb, _bound(ds, f, 2),
                         time.perf_counter() - t0, exact))
    return rows


def aspect_ratio_sweep(domain: GraphDomain, f, n, rhos: Sequence[float], p: float = 2,
                       h2: float = 1 / 128, eps=None, baseline: bool = False,
                       cap: int = 400_000, study: str = "aspect", jobs: int = 1) -> StudyReport:
    """Rows for ``h1 = rho * h2`` with fixed ``h2``; optional baseline rows (``p = 2`` only)."""
    f_obj = _function_of(f)
    report = StudyReport(exact=f_obj.polynomial_degree is not None)
    tasks = [(domain, f if jobs > 1 else f_obj, n, rho, p, h2, eps, baseline, cap, study) for rho in rhos]
    for rows in _map(_aspect_task, tasks, jobs):
        report.rows.extend(rows)
    return report


def _bound(ds: DiversifiedSpace, f: TestFunction, p: float) -> float:
    n1, n2 = ds.space.n
    h1, h2 = ds.space.h
    return (h1 ** n1 * raster_norm(_raster_values(f.partial(0, n1), ds.raster), ds.raster, p)
            + h2 ** n2 * raster_norm(_raster_values(f.partial(1, n2), ds.raster), ds.raster, p))


# -- best approximation baselines -----------------------------------------------------------

class DimensionCapExceeded(ValueError):
    pass


def _solve_normal(M: sp.spmatrix, b: np.ndarray, ridge: float = 1e-12) -> np.ndarray:
    M = sp.csc_matrix(M)
    d = M.diagonal()
    lam = ridge * max(float(d.max()), 1e-300)
    return spla.spsolve(M + lam * sp.identity(M.shape[0], format="csc"), b)


def baseline_best_approx(domain: GraphDomain, f: Field, n, grid, p: float = 2, eps=None,
                         cap: int = 400_000, raster: Raster | None = None,
                         return_coeffs: bool = False):
    """``L^2`` best approximation error from the standard tensor space restricted to the domain.

    Least squares over the marked raster cells (midpoint weights), solved by
    sparse normal equations with a relative ridge of ``1e-12``.  ``grid`` is a
    :class:`TensorSpace` or a width ``h``.
    """
    if p != 2:
        raise ValueError("the baseline is an L2 best approximation")
    space = grid if isinstance(grid, TensorSpace) else _space_for(domain, grid, n)
    if raster is None:
        raster = build_diversified(space, domain, eps).raster
    T1, T2 = space.T
    Bx = sp.csr_matrix(basis_matrix(T1, raster.xc))
    By = sp.csr_matrix(basis_matrix(T2, raster.yc))
    n1s, n2s = Bx.shape[1], By.shape[1]
    W = np.where(raster.mask, np.outer(raster.dx, raster.dy), 0.0)
    # restrict to splines whose support meets the marked cells
    touch = ((Bx.T @ sp.csr_matrix(W)) @ By).toarray() > 0
    active = np.flatnonzero(touch.ravel())
    if active.size > cap:
        raise DimensionCapExceeded(f"baseline dimension {active.size} exceeds cap {cap}")
    F = _raster_values(f, raster)
    rhs = (Bx.T @ (W * np.nan_to_num(F)) @ By)
    rhs = np.asarray(rhs).ravel()[active]
    M = _tensor_gram(Bx, By, W, space.n)
    M = M[active][:, active]
    c = np.zeros(n1s * n2s)
    c[active] = _solve_normal(M, rhs)
    S = np.asarray((Bx @ sp.csr_matrix(c.reshape(n1s, n2s))) @ By.T.toarray())
    E = raster_norm(F - S, raster, 2)
    return (E, c.reshape(n1s, n2s)) if return_coeffs else E


def _tensor_gram(Bx: sp.csr_matrix, By: sp.csr_matrix, W: np.ndarray, n) -> sp.csr_matrix:
    """``sum_cells W B_(i1,i2) B_(k1,k2)`` assembled one index offset ``(d1, d2)`` at a time."""
    n1s, n2s = Bx.shape[1], By.shape[1]
    Bxd = Bx.toarray()
    Byd = By.toarray()
    Ws = sp.csr_matrix(W)
    rows, cols, vals = [], [], []
    idx = np.arange(n1s * n2s).reshape(n1s, n2s)
    for d1 in range(-(n[0] - 1), n[0]):
        a1 = slice(max(0, -d1), n1s - max(0, d1))
        Px = np.zeros((Bxd.shape[0], n1s))
        Px[:, a1] = Bxd[:, a1] * Bxd[:, a1.start + d1:a1.stop + d1]
        Pxs = sp.csr_matrix(Px)
        L = (Pxs.T @ Ws).tocsr()
        for d2 in range(-(n[1] - 1), n[1]):
            a2 = slice(max(0, -d2), n2s - max(0, d2))
            Py = np.zeros((Byd.shape[0], n2s))
            Py[:, a2] = Byd[:, a2] * Byd[:, a2.start + d2:a2.stop + d2]
            G = np.asarray((L @ sp.csr_matrix(Py)).todense())
            i1, i2 = np.nonzero(G)
            rows.append(idx[i1, i2])
            cols.append(idx[i1 + d1, i2 + d2])
            vals.append(G[i1, i2])
    N = n1s * n2s
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))


def diversified_best_approx(ds: DiversifiedSpace, f: Field, cap: int = 200_000) -> float:
    """``L^2`` best approximation error from the span of all cdB-splines (collocation on the raster)."""
    if ds.n_splines > cap:
        raise DimensionCapExceeded(f"diversified dimension {ds.n_splines} exceeds cap {cap}")
    r = ds.raster
    ix, iy = np.nonzero(r.mask)
    pts = np.stack([r.xc[ix], r.yc[iy]], axis=-1)
    J, _, _ = ds.locate_j(pts)
    rows, cols, vals = [], [], []
    for c in range(J.shape[1]):
        jj = J[:, c]
        sel = np.flatnonzero(jj >= 0)
        v = ds.factor_values(jj[sel], pts[sel, 0], 0) * ds.factor_values(jj[sel], pts[sel, 1], 1)
        rows.append(sel)
        cols.append(jj[sel])
        vals.append(v)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(pts), ds.n_splines))
    w = r.dx[ix] * r.dy[iy]
    F = f(pts)
    Aw = sp.diags(w) @ A
    c = _solve_normal(A.T @ Aw, Aw.T @ F)
    res = F - A @ c
    return float(np.sqrt(np.sum(w * res ** 2)))
