"""Static SVG rendering of predicted and ground-truth lanes."""

from pathlib import Path
from xml.sax.saxutils import quoteattr


def _polyline(points, color, width):
    coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in points)
    return (
        f'<polyline points={quoteattr(coords)} fill="none" stroke="{color}" '
        f'stroke-width="{width}" stroke-opacity="0.5" stroke-linejoin="round"/>'
    )


def lanes_svg(preds, gts, canvas, line_width=30, title=None):
    height, width = canvas
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#202020"/>',
    ]
    if title:
        parts.append(f'<title>{title}</title>')
    parts += [_polyline(l.points(), "#2ecc40", line_width) for l in gts if l.n_valid >= 2]
    parts += [_polyline(l.points(), "#ff4136", line_width / 3) for l in preds if l.n_valid >= 2]
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_image(path, preds, gts, canvas, line_width=30, title=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(lanes_svg(preds, gts, canvas, line_width, title))
