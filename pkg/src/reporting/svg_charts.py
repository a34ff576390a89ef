"""
Minimal SVG line charts for ROC curves and the sample-size simulation.
Plain markup only; coordinates are rounded so output is stable across runs.
"""

from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

WIDTH = 480
HEIGHT = 400
MARGIN = 50
PALETTE = ["#2980b9", "#c0392b", "#27ae60", "#8e44ad", "#d35400", "#16a085"]


def _scale(x: float, y: float, x_range: Tuple[float, float], y_range: Tuple[float, float]) -> Tuple[float, float]:
    span_x = (x_range[1] - x_range[0]) or 1.0
    span_y = (y_range[1] - y_range[0]) or 1.0
    px = MARGIN + (x - x_range[0]) / span_x * (WIDTH - 2 * MARGIN)
    py = HEIGHT - MARGIN - (y - y_range[0]) / span_y * (HEIGHT - 2 * MARGIN)
    return round(px, 2), round(py, 2)


def _polyline(points: Sequence[Tuple[float, float]], x_range, y_range, color: str, dash: Optional[str] = None) -> str:
    coords = " ".join(f"{px},{py}" for px, py in (_scale(x, y, x_range, y_range) for x, y in points))
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="2"{dash_attr} points="{coords}"/>'


def _frame(title: str, x_label: str, y_label: str, x_range, y_range) -> List[str]:
    x0, y0 = _scale(x_range[0], y_range[0], x_range, y_range)
    x1, y1 = _scale(x_range[1], y_range[1], x_range, y_range)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="25" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(x_label)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(y_label)}</text>',
    ]
    for tick in range(5):
        fraction = tick / 4
        tx, ty = _scale(x_range[0] + fraction * (x_range[1] - x_range[0]), y_range[0], x_range, y_range)
        parts.append(f'<text x="{tx}" y="{ty + 15}" text-anchor="middle" font-size="10">'
                     f'{x_range[0] + fraction * (x_range[1] - x_range[0]):.2f}</text>')
        lx, ly = _scale(x_range[0], y_range[0] + fraction * (y_range[1] - y_range[0]), x_range, y_range)
        parts.append(f'<text x="{lx - 5}" y="{ly + 3}" text-anchor="end" font-size="10">'
                     f'{y_range[0] + fraction * (y_range[1] - y_range[0]):.2f}</text>')
    return parts


def _legend(names: Sequence[str]) -> List[str]:
    parts = []
    for i, name in enumerate(names):
        y = MARGIN + 15 * i
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<line x1="{WIDTH - 170}" y1="{y}" x2="{WIDTH - 150}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{WIDTH - 145}" y="{y + 4}" font-size="11">{escape(name)}</text>')
    return parts


def roc_chart(curves: Dict[str, Sequence[Tuple[float, float]]], title: str = "ROC") -> str:
    """One polyline per named (fpr, tpr) curve plus the chance diagonal."""
    unit = (0.0, 1.0)
    parts = _frame(title, "False positive rate", "True positive rate", unit, unit)
    parts.append(_polyline([(0.0, 0.0), (1.0, 1.0)], unit, unit, "#999999", dash="4 4"))
    for i, points in enumerate(curves.values()):
        parts.append(_polyline(points, unit, unit, PALETTE[i % len(PALETTE)]))
    parts.extend(_legend(list(curves)))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def band_chart(
    series: Dict[str, Sequence[Tuple[float, float, float]]],
    title: str,
    x_label: str,
    y_label: str,
) -> str:
    """Mean lines with a shaded +/- sd band; each series holds (x, mean, sd)."""
    xs = [x for rows in series.values() for x, _, _ in rows]
    x_range = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y_range = (0.0, 1.0)
    parts = _frame(title, x_label, y_label, x_range, y_range)
    for i, rows in enumerate(series.values()):
        color = PALETTE[i % len(PALETTE)]
        rows = sorted(rows)
        upper = [(x, min(1.0, m + s)) for x, m, s in rows]
        lower = [(x, max(0.0, m - s)) for x, m, s in reversed(rows)]
        outline = " ".join(f"{px},{py}" for px, py in (_scale(x, y, x_range, y_range) for x, y in upper + lower))
        parts.append(f'<polygon fill="{color}" fill-opacity="0.2" stroke="none" points="{outline}"/>')
        parts.append(_polyline([(x, m) for x, m, _ in rows], x_range, y_range, color))
    parts.extend(_legend(list(series)))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
