"""Self-contained SVG charts for analysis reports (no plotting dependency)."""

from __future__ import annotations

from pathlib import Path

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf", "#7f7f7f"]

_WIDTH, _HEIGHT = 640, 400
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 60, 160, 40, 50


def _escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def _axis_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
            f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
            f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
            f'<text x="{_WIDTH / 2}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{_escape(title)}</text>',
            f'<text x="{(_MARGIN_L + _WIDTH - _MARGIN_R) / 2}" y="{_HEIGHT - 12}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="12">'
            f'{_escape(xlabel)}</text>',
            f'<text x="16" y="{(_MARGIN_T + _HEIGHT - _MARGIN_B) / 2}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 16 {(_MARGIN_T + _HEIGHT - _MARGIN_B) / 2})">'
            f'{_escape(ylabel)}</text>',
        ]

    def x(self, frac: float) -> float:
        return _MARGIN_L + frac * (_WIDTH - _MARGIN_L - _MARGIN_R)

    def y(self, frac: float) -> float:
        return _HEIGHT - _MARGIN_B - frac * (_HEIGHT - _MARGIN_T - _MARGIN_B)

    def frame(self, x_ticks, x_lo, x_hi, y_ticks, y_lo, y_hi):
        self.parts.append(
            f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" '
            f'width="{_WIDTH - _MARGIN_L - _MARGIN_R}" '
            f'height="{_HEIGHT - _MARGIN_T - _MARGIN_B}" fill="none" '
            f'stroke="#333" stroke-width="1"/>')
        for tick in x_ticks:
            px = self.x((tick - x_lo) / (x_hi - x_lo) if x_hi > x_lo else 0.5)
            self.parts.append(
                f'<line x1="{px:.1f}" y1="{_HEIGHT - _MARGIN_B}" x2="{px:.1f}" '
                f'y2="{_HEIGHT - _MARGIN_B + 4}" stroke="#333"/>')
            self.parts.append(
                f'<text x="{px:.1f}" y="{_HEIGHT - _MARGIN_B + 18}" '
                f'text-anchor="middle" font-family="sans-serif" font-size="11">'
                f'{tick:g}</text>')
        for tick in y_ticks:
            py = self.y((tick - y_lo) / (y_hi - y_lo) if y_hi > y_lo else 0.5)
            self.parts.append(
                f'<line x1="{_MARGIN_L - 4}" y1="{py:.1f}" x2="{_MARGIN_L}" '
                f'y2="{py:.1f}" stroke="#333"/>')
            self.parts.append(
                f'<text x="{_MARGIN_L - 8}" y="{py + 4:.1f}" text-anchor="end" '
                f'font-family="sans-serif" font-size="11">{tick:.2f}</text>')

    def legend(self, labels_colors):
        ly = _MARGIN_T + 10
        lx = _WIDTH - _MARGIN_R + 12
        for label, color in labels_colors:
            self.parts.append(
                f'<rect x="{lx}" y="{ly - 9}" width="12" height="12" '
                f'fill="{color}"/>')
            self.parts.append(
                f'<text x="{lx + 18}" y="{ly + 2}" font-family="sans-serif" '
                f'font-size="11">{_escape(label)}</text>')
            ly += 18

    def save(self, path) -> None:
        self.parts.append("</svg>")
        Path(path).write_text("\n".join(self.parts))


def line_chart(path, series: dict[str, tuple[list[float], list[float]]],
               title: str, xlabel: str, ylabel: str,
               y_range: tuple[float, float] | None = None) -> None:
    """Multi-series line chart; series maps label -> (xs, ys)."""
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    x_lo, x_hi = min(all_x), max(all_x)
    if y_range is not None:
        y_lo, y_hi = y_range
    else:
        y_lo, y_hi = min(all_y), max(all_y)
        pad = 0.05 * (y_hi - y_lo or 1.0)
        y_lo, y_hi = y_lo - pad, y_hi + pad
    canvas = _Canvas(title, xlabel, ylabel)
    canvas.frame(sorted(set(all_x)) if len(set(all_x)) <= 12
                 else _axis_ticks(x_lo, x_hi),
                 x_lo, x_hi, _axis_ticks(y_lo, y_hi), y_lo, y_hi)
    legend = []
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        legend.append((label, color))
        points = []
        for x, y in zip(xs, ys):
            fx = (x - x_lo) / (x_hi - x_lo) if x_hi > x_lo else 0.5
            fy = (y - y_lo) / (y_hi - y_lo) if y_hi > y_lo else 0.5
            points.append(f"{canvas.x(fx):.1f},{canvas.y(fy):.1f}")
        canvas.parts.append(
            f'<polyline points="{" ".join(points)}" fill="none" '
            f'stroke="{color}" stroke-width="2"/>')
        for pt in points:
            px, py = pt.split(",")
            canvas.parts.append(
                f'<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>')
    canvas.legend(legend)
    canvas.save(path)


def bar_chart(path, labels: list[str], values: list[float], title: str,
              ylabel: str) -> None:
    y_lo = 0.0
    y_hi = max(values) * 1.1 if values else 1.0
    canvas = _Canvas(title, "", ylabel)
    canvas.frame([], 0, 1, _axis_ticks(y_lo, y_hi), y_lo, y_hi)
    n = len(values)
    span = _WIDTH - _MARGIN_L - _MARGIN_R
    slot = span / max(1, n)
    for i, (label, value) in enumerate(zip(labels, values)):
        color = _PALETTE[i % len(_PALETTE)]
        height = (value - y_lo) / (y_hi - y_lo) * (_HEIGHT - _MARGIN_T - _MARGIN_B)
        x0 = _MARGIN_L + i * slot + slot * 0.15
        y0 = _HEIGHT - _MARGIN_B - height
        canvas.parts.append(
            f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{slot * 0.7:.1f}" '
            f'height="{height:.1f}" fill="{color}"/>')
        canvas.parts.append(
            f'<text x="{x0 + slot * 0.35:.1f}" y="{_HEIGHT - _MARGIN_B + 16}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="10">'
            f'{_escape(label)}</text>')
        canvas.parts.append(
            f'<text x="{x0 + slot * 0.35:.1f}" y="{y0 - 5:.1f}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="10">'
            f'{value:.3f}</text>')
    canvas.save(path)
