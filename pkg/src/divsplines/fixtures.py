"""Named graph-domain fixtures."""

from __future__ import annotations

from .geometry import AxisIsometry, GraphDomain, GraphPiece

__all__ = ["upright_piece", "rectangle", "l_shape", "u_domain", "spike", "fig1_like",
           "thin_slab", "named_domain", "DOMAINS"]


def upright_piece(x_lo: float, x_hi: float, y_lo: float, top, delta: float = 0.0):
    """Chart whose visible part ``Phi^delta`` is ``{x_lo < x1 < x_hi, y_lo < x2 < y_lo + top(x1)}``.

    ``top`` is a constant height or a list of ``(x1, height)`` samples in
    domain coordinates.
    """
    c = 0.5 * (x_lo + x_hi)
    a = 0.5 * (x_hi - x_lo) + delta
    if isinstance(top, (int, float)):
        xs, ys = (-a, a), (top + delta, top + delta)
    else:
        xs = [x - c for x, _ in top]
        ys = [y + delta for _, y in top]
        if xs[0] > -a:
            xs, ys = [-a] + xs, [ys[0]] + ys
        if xs[-1] < a:
            xs, ys = xs + [a], ys + [ys[-1]]
    return AxisIsometry(0, (c, y_lo - delta)), GraphPiece(a, tuple(xs), tuple(ys))


def rectangle(h0: float = 0.5) -> GraphDomain:
    """``(0, 4) x (0, 1)``."""
    return GraphDomain((upright_piece(0, 4, 0, 1.0),), h0, 0.0, "rectangle")


def l_shape(h0: float = 0.45) -> GraphDomain:
    """``(0, 2) x (0, 1)`` joined with ``(0, 1) x (0, 2)``."""
    return GraphDomain((upright_piece(0, 2, 0, 1.0), upright_piece(0, 1, 0, 2.0)),
                       h0, 0.0, "l-shape")


def u_domain(h0: float = 2.0) -> GraphDomain:
    """Fingers ``(0, 1)`` and ``(3, 4)`` of height 4 joined by the base ``(0, 4) x (0, 1)``.

    The charts carry a collar of width ``delta = h0`` so that the visible
    pieces are exactly the fingers and the base for any ``h0``.
    """
    d = h0
    pieces = (upright_piece(0, 4, 0, 1.0, d), upright_piece(0, 1, 0, 4.0, d),
              upright_piece(3, 4, 0, 4.0, d))
    return GraphDomain(pieces, h0, d, "u-domain")


def spike(h0: float = 0.5) -> GraphDomain:
    """Base of height 0.6 on ``(0, 4)`` with a thin triangular spike of height 3 at ``x1 = 2``."""
    top = [(0.0, 0.6), (1.8, 0.6), (2.0, 3.0), (2.2, 0.6), (4.0, 0.6)]
    return GraphDomain((upright_piece(0, 4, 0, top),), h0, 0.0, "spike")


def fig1_like(h0: float = 0.5) -> GraphDomain:
    """Slab ``(0, 4) x (0, 1)`` topped by two towers ``(1.8, 1.9)`` and ``(2.1, 2.2)`` of height 1.5.

    The tower walls are steep ramps of width ``1e-6`` so no raster cell centre
    falls on a wall sliver.
    """
    w = 1e-6
    top = [(0.0, 1.0), (1.8, 1.0), (1.8 + w, 2.5), (1.9 - w, 2.5), (1.9, 1.0), (2.1, 1.0),
           (2.1 + w, 2.5), (2.2 - w, 2.5), (2.2, 1.0), (4.0, 1.0)]
    return GraphDomain((upright_piece(0, 4, 0, top),), h0, 0.0, "fig1-like")


def thin_slab(height: float = 0.05, h0: float = 0.04) -> GraphDomain:
    """Thin horizontal slab ``(0, 2) x (0, height)``."""
    return GraphDomain((upright_piece(0, 2, 0, height),), h0, 0.0, "thin-slab")


DOMAINS = {
    "rectangle": rectangle,
    "l-shape": l_shape,
    "u-domain": u_domain,
    "spike": spike,
    "fig1-like": fig1_like,
    "thin-slab": thin_slab,
}


def named_domain(name: str) -> GraphDomain:
    try:
        return DOMAINS[name]()
    except KeyError:
        raise KeyError(f"unknown domain fixture {name!r}; known: {sorted(DOMAINS)}") from None
