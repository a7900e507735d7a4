"""Dependency-free SVG scatter and bar charts for report output."""

from __future__ import annotations

_WIDTH = 640
_HEIGHT = 440
_MARGIN = 60
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _scale(lo, hi):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo

    def to_px(v, pixels):
        return (v - lo) / span * pixels

    return to_px


def scatter_svg(series, xlabel="", ylabel="", title="") -> str:
    """Scatter plot with one circle per point and a legend entry per series.

    ``series`` maps a label to a list of (x, y) pairs.
    """
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        raise ValueError("no points to plot")
    plot_w = _WIDTH - 2 * _MARGIN
    plot_h = _HEIGHT - 2 * _MARGIN
    sx = _scale(min(xs), max(xs))
    sy = _scale(min(ys), max(ys))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}">',
        f'<text x="{_WIDTH / 2}" y="20" text-anchor="middle">{title}</text>',
        f'<line x1="{_MARGIN}" y1="{_HEIGHT - _MARGIN}" x2="{_WIDTH - _MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="black"/>',
        f'<text x="{_WIDTH / 2}" y="{_HEIGHT - 15}" text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{_HEIGHT / 2}" text-anchor="middle" '
        f'transform="rotate(-90 15 {_HEIGHT / 2})">{ylabel}</text>',
    ]
    for index, (label, pts) in enumerate(series.items()):
        color = _COLORS[index % len(_COLORS)]
        for x, y in pts:
            cx = _MARGIN + sx(x, plot_w)
            cy = _HEIGHT - _MARGIN - sy(y, plot_h)
            parts.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="4" fill="{color}"/>')
        ly = _MARGIN + 16 * index
        parts.append(
            f'<circle cx="{_WIDTH - _MARGIN - 90}" cy="{ly}" r="4" fill="{color}"/>'
        )
        parts.append(f'<text x="{_WIDTH - _MARGIN - 80}" y="{ly + 4}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def bars_svg(counts, xlabel="", ylabel="", title="") -> str:
    """Bar chart with one rect per integer bin in ``counts``."""
    if not counts:
        raise ValueError("no counts to plot")
    bins = sorted(counts)
    top = max(counts.values())
    plot_w = _WIDTH - 2 * _MARGIN
    plot_h = _HEIGHT - 2 * _MARGIN
    bar_w = plot_w / max(1, len(bins))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}">',
        f'<text x="{_WIDTH / 2}" y="20" text-anchor="middle">{title}</text>',
        f'<line x1="{_MARGIN}" y1="{_HEIGHT - _MARGIN}" x2="{_WIDTH - _MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="black"/>',
        f'<text x="{_WIDTH / 2}" y="{_HEIGHT - 15}" text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{_HEIGHT / 2}" text-anchor="middle" '
        f'transform="rotate(-90 15 {_HEIGHT / 2})">{ylabel}</text>',
    ]
    for i, b in enumerate(bins):
        height = counts[b] / top * plot_h
        x = _MARGIN + i * bar_w
        y = _HEIGHT - _MARGIN - height
        parts.append(
            f'<rect x="{x + 2:.1f}" y="{y:.1f}" width="{bar_w - 4:.1f}" '
            f'height="{height:.1f}" fill="#1f77b4"/>'
        )
        parts.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{_HEIGHT - _MARGIN + 16}" '
            f'text-anchor="middle">{b}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
