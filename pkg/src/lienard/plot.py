"""Deterministic SVG phase portraits.

Coordinates are written with a fixed number of decimals so identical
trajectories produce identical files.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import contourpy
import numpy as np

from .integrate import Trajectory
from .lyapunov import LyapunovData
from .model import LienardSystem

WIDTH = HEIGHT = 480
MARGIN = 56


def _axis_index(name: str, n: int) -> int:
    kind, idx = name[0], int(name[1:])
    if kind not in "xy" or not 1 <= idx <= n:
        raise ValueError(f"unknown coordinate {name!r}")
    return idx - 1 if kind == "x" else n + idx - 1


def _nice_ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    span = hi - lo
    raw = span / count
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    return np.arange(np.ceil(lo / step) * step, hi + 1e-12 * span, step)


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _plane_V(ld: LyapunovData, ia: int, ib: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``V`` on the plotted plane with every other coordinate set to 0."""
    A, B = np.meshgrid(a, b, indexing="xy")
    Z = np.zeros(A.shape + (2 * ld.system.n,))
    Z[..., ia] = A
    Z[..., ib] = B
    return ld.V(Z)


def phase_portrait_svg(
    sys: LienardSystem,
    traj: Trajectory,
    axes: tuple[str, str] = ("x1", "y1"),
    levels: int = 5,
) -> str:
    """SVG projection of ``traj`` on the ``axes`` pair.

    For two-dimensional systems the portrait also carries contours of ``V`` on
    the plotted plane (remaining coordinates held at 0), labelled with their
    values.
    """
    n = sys.n
    ia, ib = (_axis_index(a, n) for a in axes)
    P = traj.z[:, [ia, ib]]
    lo, hi = P.min(axis=0), P.max(axis=0)
    pad = np.maximum(0.1 * (hi - lo), 0.1)
    lo, hi = lo - pad, hi + pad
    inner = WIDTH - 2 * MARGIN

    def sx(v):
        return MARGIN + (v - lo[0]) / (hi[0] - lo[0]) * inner

    def sy(v):
        return HEIGHT - MARGIN - (v - lo[1]) / (hi[1] - lo[1]) * inner

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<title>{escape(sys.name)}: {axes[0]} vs {axes[1]}</title>',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<defs><clipPath id="frame"><rect x="{MARGIN}" y="{MARGIN}" width="{inner}" height="{inner}"/></clipPath></defs>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{inner}" height="{inner}" fill="none" stroke="black"/>',
    ]
    for v in _nice_ticks(lo[0], hi[0]):
        x = sx(v)
        out.append(f'<line x1="{x:.2f}" y1="{HEIGHT - MARGIN}" x2="{x:.2f}" y2="{HEIGHT - MARGIN + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{HEIGHT - MARGIN + 18}" font-size="11" text-anchor="middle">{_fmt(v)}</text>')
    for v in _nice_ticks(lo[1], hi[1]):
        y = sy(v)
        out.append(f'<line x1="{MARGIN - 5}" y1="{y:.2f}" x2="{MARGIN}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{MARGIN - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{_fmt(v)}</text>')
    out.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" font-size="13" text-anchor="middle">{axes[0]}</text>')
    out.append(
        f'<text x="16" y="{HEIGHT / 2:.0f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {HEIGHT / 2:.0f})">{axes[1]}</text>'
    )

    out.append('<g clip-path="url(#frame)">')
    if n == 2:
        ld = LyapunovData.for_system(sys)
        a = np.linspace(lo[0], hi[0], 121)
        b = np.linspace(lo[1], hi[1], 121)
        Vg = _plane_V(ld, ia, ib, a, b)
        top = float(np.quantile(Vg, 0.5))
        gen = contourpy.contour_generator(a, b, Vg, line_type=contourpy.LineType.Separate)
        for c in top * 0.5 ** np.arange(levels):
            if c <= 0:
                continue
            lines = gen.lines(c)
            for seg in lines:
                pts = " ".join(f"{sx(u):.2f},{sy(w):.2f}" for u, w in seg)
                out.append(f'<polyline points="{pts}" fill="none" stroke="#999999" stroke-width="0.8"/>')
            if lines:
                longest = max(lines, key=len)
                u, w = longest[len(longest) // 2]
                out.append(
                    f'<text x="{sx(u):.2f}" y="{sy(w):.2f}" font-size="9" fill="#666666">V={c:.3g}</text>'
                )

    pts = " ".join(f"{sx(u):.2f},{sy(w):.2f}" for u, w in P)
    out.append(f'<polyline points="{pts}" fill="none" stroke="#1f4e9e" stroke-width="1.2"/>')
    out.append(f'<circle cx="{sx(P[0, 0]):.2f}" cy="{sy(P[0, 1]):.2f}" r="3" fill="#1f4e9e"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
