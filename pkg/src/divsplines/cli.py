"""Experiment command line: INI configs in, CSV / PGM / plot data out.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import os
import shlex
import sys
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .diversified import AdmissibilityWarning, DiversifiedSpace, TensorSpace
from .errorlab import (FUNCTIONS, DimensionCapExceeded, StudyReport, aspect_ratio_sweep,
                       convergence_study, get_function, _space_for)
from .fixtures import DOMAINS, named_domain
from .geometry import Box, GraphDomain, load_domain, local_neighbourhood, pruned_bbox, write_pgm
from .univariate import KnotWindow, load_knots
from .quasi import HStarNotFound, QuasiInterpolant, QuasiInterpolantResult

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "run", "render_debug",
           "main", "CONFIG_DIR", "ENV_PREFIX"]

log = logging.getLogger("divsplines")

CONFIG_DIR = Path(__file__).with_name("configs")
ENV_PREFIX = "DIVSPLINE_"
SWEEPS = ("single", "refinement", "aspect")
KNOT_KINDS = ("uniform", "perturbed", "explicit")

# gray levels of the debug overlays
OUTSIDE, DOMAIN, STRIP, PRUNED, SPLUS, SUPPORT, HSTAR = 0, 40, 80, 120, 160, 200, 255


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    ``grids`` are realised widths ``(h1, h2)``; for an aspect sweep they are
    ``(rho * h2, h2)`` in the order of ``rhos``.
    """

    name: str
    domain_spec: str
    domain: GraphDomain
    function: str
    orders: tuple[int, int]
    ps: tuple[float, ...]
    sweep: str
    grids: tuple[tuple[float, float], ...]
    rhos: tuple[float, ...] = ()
    knots: str = "uniform"
    jitter: float = 0.0
    nested: bool = True
    epsilon: float | None = None
    seed: int = 0
    panels: int = 1
    baseline: bool = False
    cap: int = 400_000
    out: Path = Path("out")
    jobs: int = 1
    debug_figures: bool = False
    select: tuple[tuple[int, int], ...] = ()
    explicit: tuple[KnotWindow, KnotWindow] | None = None
    source: str = ""
    warnings: list[str] = field(default_factory=list)

    @property
    def h0_prime(self) -> float:
        return self.domain.h0 / (max(self.orders) + 1)


# -- parsing --------------------------------------------------------------------------------

def _number(text: str, what: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "infinity"):
        return math.inf
    try:
        return float(Fraction(t))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{what}: cannot parse {text!r} as a number") from None


def _numbers(text: str, what: str) -> list[float]:
    vals = [_number(t, what) for t in text.replace(",", " ").split()]
    if not vals:
        raise ConfigError(f"{what}: empty list")
    return vals


def _integer(text: str, what: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"{what}: cannot parse {text!r} as an integer") from None


def _flag(text: str, what: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"{what}: expected a boolean, got {text!r}")


def _resolve_domain(spec: str, base: Path | None) -> GraphDomain:
    key = spec.strip().lower()
    if key in DOMAINS:
        return named_domain(key)
    path = Path(spec)
    if base is not None and not path.is_absolute():
        path = base / path
    if path.is_file():
        try:
            return load_domain(path)
        except (configparser.Error, KeyError, ValueError) as exc:
            raise ConfigError(f"domain file {path}: {exc}") from None
    raise ConfigError(f"domain {spec!r} is neither a fixture {sorted(DOMAINS)} nor a file")


def _knot_window(text: str, order: int, base: Path | None, what: str) -> KnotWindow:
    """Inline knot list, or a knot file (relative to the config directory)."""
    text = text.strip()
    path = Path(text)
    if base is not None and not path.is_absolute():
        path = base / path
    try:
        is_file = path.is_file()
    except OSError:
        is_file = False
    try:
        if is_file:
            return load_knots(path, order)
        knots = _numbers(text, what)
        return KnotWindow(np.asarray(knots, dtype=float), order)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def apply_env(cp: configparser.ConfigParser, environ=None) -> list[str]:
    """Apply ``DIVSPLINE_<SECTION>_<KEY>=value`` overrides; returns the applied keys."""
    environ = os.environ if environ is None else environ
    applied = []
    for var in sorted(environ):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if not key:
            continue
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, environ[var])
        applied.append(f"{section}.{key}")
    return applied


def parse_config(text: str, base: Path | None = None, environ=None, source: str = "") -> ExperimentConfig:
    """Parse and validate an INI experiment description."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    apply_env(cp, environ)
    if not cp.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    ex = cp["experiment"]
    sw = cp["sweep"] if cp.has_section("sweep") else {}
    kn = cp["knots"] if cp.has_section("knots") else {}
    dbg = cp["debug"] if cp.has_section("debug") else {}

    for key in ("domain", "function", "orders"):
        if key not in ex:
            raise ConfigError(f"[experiment] is missing {key!r}")
    domain = _resolve_domain(ex["domain"], base)
    function = ex["function"].strip()
    try:
        get_function(function)
    except (KeyError, ValueError):
        raise ConfigError(f"unknown function {function!r}; known: {sorted(FUNCTIONS)} or poly:a,b") from None
    orders = [_integer(t, "orders") for t in ex["orders"].replace(",", " ").split()]
    if len(orders) == 1:
        orders *= 2
    if len(orders) != 2 or min(orders) < 1:
        raise ConfigError(f"orders: expected one or two positive integers, got {ex['orders']!r}")
    ps = tuple(_numbers(ex.get("p", "inf 2"), "p"))
    if any(not p >= 1 for p in ps):
        raise ConfigError("p: every entry must lie in [1, inf]")

    kind = sw.get("kind", "single").strip().lower()
    if kind not in SWEEPS:
        raise ConfigError(f"[sweep] kind must be one of {SWEEPS}, got {kind!r}")
    nbar = max(orders)
    unit_name = sw.get("unit", "absolute").strip().lower()
    if unit_name not in ("absolute", "h0prime"):
        raise ConfigError(f"[sweep] unit must be 'absolute' or 'h0prime', got {unit_name!r}")
    unit = domain.h0 / (nbar + 1) if unit_name == "h0prime" else 1.0

    rhos: tuple[float, ...] = ()
    if kind == "aspect":
        if "rho" not in sw or "h2" not in sw:
            raise ConfigError("aspect sweep needs 'rho' and 'h2'")
        rhos = tuple(_numbers(sw["rho"], "rho"))
        h2 = _number(sw["h2"], "h2") * unit
        grids = tuple((r * h2, h2) for r in rhos)
    else:
        key = "levels" if kind == "refinement" else "h"
        explicit_knots = kn.get("kind", "").strip().lower() == "explicit"
        if key not in sw and not explicit_knots:
            raise ConfigError(f"{kind} sweep needs {key!r}")
        if key not in sw:
            grids = ()
        elif kind == "refinement":
            grids = tuple((v * unit, v * unit) for v in _numbers(sw[key], key))
        else:
            v = _numbers(sw[key], key)
            if len(v) not in (1, 2):
                raise ConfigError("h: expected one or two widths")
            grids = ((v[0] * unit, v[-1] * unit),)
    if any(not (0 < g < math.inf) for pair in grids for g in pair):
        raise ConfigError("grid widths must be positive and finite")

    knots = kn.get("kind", "uniform").strip().lower()
    if knots not in KNOT_KINDS:
        raise ConfigError(f"[knots] kind must be one of {KNOT_KINDS}, got {knots!r}")
    jitter = _number(kn.get("jitter", "0"), "jitter")
    if not 0 <= jitter < 0.5:
        raise ConfigError("jitter must lie in [0, 0.5)")
    refinement = kn.get("refinement", "nested").strip().lower()
    if refinement not in ("nested", "independent"):
        raise ConfigError(f"[knots] refinement must be 'nested' or 'independent', got {refinement!r}")
    if kind == "aspect" and knots != "uniform":
        raise ConfigError("aspect sweeps use uniform knots")
    explicit = None
    if knots == "explicit":
        if kind != "single":
            raise ConfigError("explicit knots need a single sweep")
        if "x1" not in kn or "x2" not in kn:
            raise ConfigError("explicit knots need 'x1' and 'x2'")
        explicit = (_knot_window(kn["x1"], orders[0], base, "x1"),
                    _knot_window(kn["x2"], orders[1], base, "x2"))
        try:
            space = TensorSpace(*explicit, domain.bbox())
        except ValueError as exc:
            raise ConfigError(f"explicit knots: {exc}") from None
        grids = (tuple(space.h),)

    eps_text = ex.get("epsilon", "").strip()
    epsilon = _number(eps_text, "epsilon") if eps_text else None
    if epsilon is not None and not epsilon > 0:
        raise ConfigError("epsilon must be positive")

    select = []
    for chunk in dbg.get("select", "").split(";"):
        if chunk.strip():
            vals = [_integer(t, "select") for t in chunk.replace(",", " ").split()]
            if len(vals) != 2:
                raise ConfigError(f"select: expected 'i1 i2' pairs, got {chunk!r}")
            select.append((vals[0], vals[1]))

    cfg = ExperimentConfig(
        name=ex.get("name", "experiment").strip() or "experiment",
        domain_spec=ex["domain"].strip(),
        domain=domain,
        function=function,
        orders=(orders[0], orders[1]),
        ps=ps,
        sweep=kind,
        grids=grids,
        rhos=rhos,
        knots=knots,
        jitter=jitter,
        nested=refinement == "nested",
        epsilon=epsilon,
        seed=_integer(ex.get("seed", "0"), "seed"),
        panels=_integer(ex.get("panels", "1"), "panels"),
        baseline=_flag(sw.get("baseline", "false"), "baseline"),
        cap=_integer(sw.get("cap", "400000"), "cap"),
        out=Path(ex.get("output", "out").strip() or "out"),
        debug_figures=_flag(dbg.get("figures", "false"), "figures"),
        select=tuple(select),
        explicit=explicit,
        source=source,
    )
    if cfg.panels < 1:
        raise ConfigError("panels must be at least 1")
    cfg.warnings.extend(check_hypothesis(cfg))
    return cfg


def check_hypothesis(cfg: ExperimentConfig) -> list[str]:
    """Grids violating ``h <= h0 / (nbar + 1)``."""
    bound = cfg.h0_prime
    return [f"grid h = ({g[0]!r}, {g[1]!r}) exceeds h0/(nbar+1) = {bound!r}; "
            "the error estimate does not apply"
            for g in cfg.grids if max(g) > bound * (1 + 1e-12)]


def resolve_config_path(spec: str) -> Path:
    """A file path, or the name of a bundled config (``fixtures/`` prefix and suffix optional)."""
    path = Path(spec)
    if path.is_file():
        return path
    stem = path.name[:-4] if path.name.endswith(".ini") else path.name
    bundled = CONFIG_DIR / f"{stem}.ini"
    if bundled.is_file():
        return bundled
    raise ConfigError(f"config {spec!r} not found (bundled: {sorted(p.stem for p in CONFIG_DIR.glob('*.ini'))})")


def load_config(spec: str, environ=None) -> ExperimentConfig:
    path = resolve_config_path(spec)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base=path.parent, environ=environ, source=str(path))


# -- debug overlays -------------------------------------------------------------------------

def _paint_box(img: np.ndarray, raster, box: Box, level: int, where: np.ndarray | None = None) -> None:
    clipped = box.intersect(raster.extent)
    if clipped is None:
        return
    sx, sy = raster.cell_range(clipped)
    block = img[sx, sy]
    sel = raster.mask[sx, sy] if where is None else where[sx, sy]
    block[sel] = np.maximum(block[sel], level)


def _paint_mask(img: np.ndarray, mask, level: int) -> None:
    sx, sy = mask.slices
    block = img[sx, sy]
    block[mask.cells] = np.maximum(block[mask.cells], level)


def default_selection(ds: DiversifiedSpace) -> tuple[tuple[int, int], ...]:
    """The first split support (several components), else the middle spline."""
    T1, T2 = ds.space.T
    split = np.argwhere(ds.ncomp > 1)
    if len(split):
        p1, p2 = split[0]
        return ((int(p1) + T1.offset, int(p2) + T2.offset),)
    j = ds.n_splines // 2
    return ((int(ds.i1[j]), int(ds.i2[j])),)


def render_debug(domain: GraphDomain, space: TensorSpace, selected: Sequence[tuple[int, int]] = (),
                 out_dir=".", eps=None, op: QuasiInterpolant | None = None) -> list[Path]:
    """Write PGM overlays of supports, components and local boxes.

    Produces ``domain.pgm`` (membership mask), ``support_<i1>_<i2>.pgm`` per
    selected tensor index (each component ``γ`` of ``S_i ∩ Ω`` in its own gray
    level) and ``j_<i1>_<i2>_<γ>.pgm`` per component.  The per-component gray
    levels, drawn in increasing order so later sets cover earlier ones, are
    ``Ω`` 40, the strips ``W_1, W_2`` clipped to ``ω`` 80, ``S'_j`` 120,
    ``S_j^+`` 160, ``S_j`` 200 and ``H_j^*`` 255.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = op.ds if op is not None else DiversifiedSpace(space, domain, eps)
    r = ds.raster
    base = np.where(r.mask, DOMAIN, OUTSIDE).astype(np.uint8)
    paths = [out / "domain.pgm"]
    write_pgm(paths[0], r.mask)
    if not selected:
        selected = default_selection(ds)
    T1, T2 = ds.space.T
    for i1, i2 in selected:
        p1, p2 = i1 - T1.offset, i2 - T2.offset
        if not (0 <= p1 < ds.ncomp.shape[0] and 0 <= p2 < ds.ncomp.shape[1]) or ds.ncomp[p1, p2] == 0:
            log.warning("selected spline (%d, %d) has no diversified component; skipped", i1, i2)
            continue
        first, count = int(ds.jfirst[p1, p2]), int(ds.ncomp[p1, p2])
        overlay = base.copy()
        for g in range(count):
            level = min(255, 120 + 135 * g // max(1, count - 1)) if count > 1 else 200
            _paint_mask(overlay, ds.gamma_mask(first + g), level)
        path = out / f"support_{i1}_{i2}.pgm"
        write_pgm(path, overlay)
        paths.append(path)
        if op is None:
            op = QuasiInterpolant(ds)
        for g in range(count):
            j = first + g
            paths.append(_render_component(ds, op, j, base, out / f"j_{i1}_{i2}_{g}.pgm"))
    return paths


def _render_component(ds: DiversifiedSpace, op: QuasiInterpolant, j: int, base: np.ndarray,
                      path: Path) -> Path:
    r = ds.raster
    img = base.copy()
    S = ds.gamma_mask(j)
    Si = ds.space.support((int(ds.i1[j]), int(ds.i2[j])))
    ext = r.extent
    w1 = Box((ds.omega_lo[0, j], Si.lo[1]), (ds.omega_hi[0, j], Si.hi[1]))
    w2 = Box((Si.lo[0], ds.omega_lo[1, j]), (Si.hi[0], ds.omega_hi[1, j]))
    for w in (w1, w2):
        _paint_box(img, r, w, STRIP)
    _paint_mask(img, pruned_bbox(ds.domain, S), PRUNED)
    boxes = op.local_boxes(j)
    splus = boxes.splus
    if splus is None:
        splus = local_neighbourhood(ds.domain, S, tuple(ds.hstar[:, j]))
    _paint_mask(img, splus, SPLUS)
    _paint_mask(img, S, SUPPORT)
    H = boxes.hstar
    if H.intersect(ext) is not None:
        _paint_box(img, r, H, HSTAR, where=np.ones(r.shape, dtype=bool))
    write_pgm(path, img)
    return path


# -- running --------------------------------------------------------------------------------

def _grids(cfg: ExperimentConfig) -> list:
    if cfg.explicit is not None:
        return [TensorSpace(*cfg.explicit, cfg.domain.bbox())]
    return list(cfg.grids)


def _run_study(cfg: ExperimentConfig) -> StudyReport:
    n = cfg.orders
    if cfg.sweep == "aspect":
        return aspect_ratio_sweep(cfg.domain, cfg.function, n, cfg.rhos, cfg.ps[0], h2=cfg.grids[0][1],
                                  eps=cfg.epsilon, baseline=cfg.baseline, cap=cfg.cap,
                                  study=cfg.name, jobs=cfg.jobs)
    return convergence_study(cfg.domain, cfg.function, n, _grids(cfg), cfg.ps, eps=cfg.epsilon,
                             knots=cfg.knots, jitter=cfg.jitter, seed=cfg.seed, study=cfg.name,
                             panels=cfg.panels, jobs=cfg.jobs, nested=cfg.nested)


def _reproduce_script(cfg: ExperimentConfig) -> str:
    args = ["divsplines", "--config", cfg.source or "<config>", "--out", str(cfg.out),
            "--seed", str(cfg.seed), "--jobs", str(cfg.jobs)]
    if cfg.epsilon is not None:
        args += ["--epsilon", repr(cfg.epsilon)]
    if cfg.debug_figures:
        args.append("--debug-figures")
    return "#!/bin/sh\nset -e\n" + " ".join(shlex.quote(a) for a in args) + "\n"


def run(config: ExperimentConfig | str) -> int:
    """Execute an experiment; returns the process exit code."""
    try:
        cfg = load_config(config) if isinstance(config, str) else config
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for w in cfg.warnings:
        log.warning(w)
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            # already reported by the config check
            warnings.simplefilter("ignore", AdmissibilityWarning)
            report = _run_study(cfg)
            report.to_csv(out / "results.csv")
            report.timings_csv(out / "timings.csv")
            x = "rho" if cfg.sweep == "aspect" else "h1"
            report.write_plot_data(out / "plot", x=x)
            op = None
            if cfg.sweep == "single" or cfg.debug_figures:
                space = _grids(cfg)[0]
                if not isinstance(space, TensorSpace):
                    space = _space_for(cfg.domain, space, cfg.orders, cfg.knots, cfg.jitter, cfg.seed)
                ds = DiversifiedSpace(space, cfg.domain, cfg.epsilon)
                op = QuasiInterpolant(ds, cfg.panels)
                if cfg.sweep == "single":
                    res = QuasiInterpolantResult(op, op.coefficients(get_function(cfg.function)))
                    (out / "coefficients.txt").write_text(res.table())
                if cfg.debug_figures:
                    render_debug(cfg.domain, space, cfg.select, out / "debug", op=op)
    except (HStarNotFound, DimensionCapExceeded, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    (out / "reproduce.sh").write_text(_reproduce_script(cfg))
    print(f"wrote {len(report.rows)} rows to {out / 'results.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="divsplines", description=(
        "Run quasi-interpolation studies with diversified condensed B-splines on graph domains."))
    ap.add_argument("--config", required=True,
                    help="INI file or bundled config name (e.g. u_domain_rho_sweep)")
    ap.add_argument("--out", help="output directory (overrides [experiment] output)")
    ap.add_argument("--epsilon", type=float, help="raster resolution override")
    ap.add_argument("--seed", type=int, help="seed for knot jitter")
    ap.add_argument("--jobs", type=int, default=None, help="worker processes for study rows")
    ap.add_argument("--debug-figures", action="store_true", help="write PGM overlays")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        changes = {}
        if args.out is not None:
            changes["out"] = Path(args.out)
        if args.epsilon is not None:
            if not args.epsilon > 0:
                raise ConfigError("--epsilon must be positive")
            changes["epsilon"] = args.epsilon
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigError("--jobs must be at least 1")
            changes["jobs"] = args.jobs
        if args.debug_figures:
            changes["debug_figures"] = True
        cfg = replace(cfg, **changes)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
