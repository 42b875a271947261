"""Self-contained SVG log-log plot of a rate estimate (no plotting library)."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from .experiments import RateEstimate

W, H, PAD = 640, 440, 64
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float) -> list[int]:
    return list(range(math.floor(lo), math.ceil(hi) + 1))


def loglog_svg(estimates: list[RateEstimate], title: str, path) -> Path:
    """Means with ±2 SE bars, the fitted line and its slope, one colour per estimate."""
    xs, ys = [], []
    for e in estimates:
        xs += [math.log10(n) for n in e.Ns]
        for m, s in zip(e.means, e.ses):
            ys.append(math.log10(m))
            ys.append(math.log10(max(m - 2 * s, m * 1e-3)))
            ys.append(math.log10(m + 2 * s))
    x0, x1 = min(xs) - 0.1, max(xs) + 0.1
    y0, y1 = min(ys) - 0.1, max(ys) + 0.1

    def X(v):
        return PAD + (v - x0) / (x1 - x0) * (W - 2 * PAD)

    def Y(v):
        return H - PAD - (v - y0) / (y1 - y0) * (H - 2 * PAD)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>']
    for d in _ticks(x0, x1):
        if x0 <= d <= x1:
            out.append(f'<text x="{X(d):.1f}" y="{H - PAD + 18}" text-anchor="middle">1e{d}</text>')
    for d in _ticks(y0, y1):
        if y0 <= d <= y1:
            out.append(f'<text x="{PAD - 6}" y="{Y(d) + 4:.1f}" text-anchor="end">1e{d}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 16}" text-anchor="middle">N</text>')
    for i, e in enumerate(estimates):
        c = COLORS[i % len(COLORS)]
        for n, m, s in zip(e.Ns, e.means, e.ses):
            lx = math.log10(n)
            lo, hi = math.log10(max(m - 2 * s, m * 1e-3)), math.log10(m + 2 * s)
            out.append(f'<line x1="{X(lx):.1f}" y1="{Y(lo):.1f}" x2="{X(lx):.1f}" y2="{Y(hi):.1f}" stroke="{c}"/>')
            out.append(f'<circle cx="{X(lx):.1f}" cy="{Y(math.log10(m)):.1f}" r="3" fill="{c}"/>')
        la, lb = math.log10(e.Ns[0]), math.log10(e.Ns[-1])
        fa = (e.slope * la * math.log(10) + e.intercept) / math.log(10)
        fb = (e.slope * lb * math.log(10) + e.intercept) / math.log(10)
        out.append(f'<line x1="{X(la):.1f}" y1="{Y(fa):.1f}" x2="{X(lb):.1f}" y2="{Y(fb):.1f}" stroke="{c}" stroke-dasharray="5,3"/>')
        label = f"{e.label} p={e.p:g}: slope {e.slope:.3f} [{e.ci[0]:.3f}, {e.ci[1]:.3f}]"
        out.append(f'<text x="{W - PAD - 8}" y="{PAD + 18 + 16 * i}" text-anchor="end" fill="{c}">{escape(label)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path
