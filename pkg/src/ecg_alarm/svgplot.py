"""Minimal deterministic SVG charts (no plotting dependency)."""

from __future__ import annotations

from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 320
MARGIN = 50
PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _frame(title: str, body: list[str]) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - 10}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{MARGIN}" y2="30" stroke="black"/>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def grouped_bars(title: str, groups: list[str], series: dict[str, list[float]], ymax: float = 100.0) -> str:
    """Bars per group, one colour per series; NaN values are skipped."""
    plot_w = WIDTH - MARGIN - 20
    plot_h = HEIGHT - MARGIN - 40
    n_series = max(len(series), 1)
    slot = plot_w / max(len(groups), 1)
    bar_w = slot * 0.8 / n_series
    body = []
    for gi, g in enumerate(groups):
        x0 = MARGIN + gi * slot + slot * 0.1
        body.append(f'<text x="{_fmt(x0 + slot * 0.4)}" y="{HEIGHT - MARGIN + 16}" '
                    f'text-anchor="middle" font-size="12">{escape(g)}</text>')
        for si, (name, vals) in enumerate(series.items()):
            v = vals[gi]
            if v != v:  # NaN
                continue
            h = plot_h * max(0.0, min(v, ymax)) / ymax
            body.append(
                f'<rect x="{_fmt(x0 + si * bar_w)}" y="{_fmt(HEIGHT - MARGIN - h)}" '
                f'width="{_fmt(bar_w)}" height="{_fmt(h)}" fill="{PALETTE[si % len(PALETTE)]}"/>'
            )
    for si, name in enumerate(series):
        body.append(f'<rect x="{WIDTH - 130}" y="{34 + 16 * si}" width="10" height="10" '
                    f'fill="{PALETTE[si % len(PALETTE)]}"/>')
        body.append(f'<text x="{WIDTH - 115}" y="{43 + 16 * si}" font-size="11">{escape(name)}</text>')
    return _frame(title, body)


def scatter(title: str, series: dict[str, list[tuple[float, float]]], xlabel: str = "", ylabel: str = "") -> str:
    pts = [p for s in series.values() for p in s]
    body = []
    if pts:
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        x_lo, x_hi, y_lo, y_hi = min(xs), max(xs), min(ys), max(ys)
        x_span, y_span = (x_hi - x_lo) or 1.0, (y_hi - y_lo) or 1.0
        plot_w, plot_h = WIDTH - MARGIN - 20, HEIGHT - MARGIN - 40
        for si, (name, s) in enumerate(series.items()):
            colour = PALETTE[si % len(PALETTE)]
            for x, y in s:
                cx = MARGIN + plot_w * (x - x_lo) / x_span
                cy = HEIGHT - MARGIN - plot_h * (y - y_lo) / y_span
                body.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="3" fill="{colour}"/>')
            body.append(f'<text x="{WIDTH - 130}" y="{43 + 16 * si}" font-size="11" fill="{colour}">'
                        f'{escape(name)}</text>')
        body.append(f'<text x="{MARGIN}" y="{HEIGHT - 20}" font-size="10">{_fmt(x_lo)}</text>')
        body.append(f'<text x="{WIDTH - 40}" y="{HEIGHT - 20}" font-size="10">{_fmt(x_hi)}</text>')
    body.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    body.append(f'<text x="14" y="{HEIGHT / 2}" font-size="12" transform="rotate(-90 14 {HEIGHT / 2})">'
                f'{escape(ylabel)}</text>')
    return _frame(title, body)
