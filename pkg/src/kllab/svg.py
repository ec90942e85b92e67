"""Tiny deterministic SVG emitter: bars, polylines, axes, legend.

No external plotting dependency; output bytes depend only on the data
passed in (floats are formatted with fixed precision).
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

WIDTH = 860
HEIGHT = 480
MARGIN_LEFT = 70
MARGIN_RIGHT = 170
MARGIN_TOP = 50
MARGIN_BOTTOM = 60

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def _esc(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class Chart:
    """Accumulates series, renders one SVG document string."""

    def __init__(self, title: str, x_label: str, y_label: str):
        self.title = title
        self.x_label = x_label
        self.y_label = y_label
        self.lines: List[Tuple[str, Sequence[float], Sequence[float], str]] = []
        self.bars: List[Tuple[str, Sequence[float], Sequence[float], str]] = []
        self._color = 0

    def _next_color(self) -> str:
        c = PALETTE[self._color % len(PALETTE)]
        self._color += 1
        return c

    def add_line(self, label: str, xs, ys, color: Optional[str] = None):
        self.lines.append((label, list(xs), list(ys), color or self._next_color()))

    def add_bars(self, label: str, xs, ys, color: Optional[str] = None):
        self.bars.append((label, list(xs), list(ys), color or self._next_color()))

    def _ranges(self):
        xs: List[float] = []
        ys: List[float] = []
        for _, sx, sy, _ in self.lines + self.bars:
            xs.extend(sx)
            ys.extend(sy)
        if not xs:
            raise ValueError("chart has no data")
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys + [0.0]), max(ys)
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y1 = y0 + 1.0
        return x0, x1, y0, y1

    def render(self) -> str:
        x0, x1, y0, y1 = self._ranges()
        pl, pr = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
        pt, pb = MARGIN_TOP, HEIGHT - MARGIN_BOTTOM

        def sx(x):
            return pl + (x - x0) / (x1 - x0) * (pr - pl)

        def sy(y):
            return pb - (y - y0) / (y1 - y0) * (pb - pt)

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="12">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-size="15">'
            f"{_esc(self.title)}</text>",
        ]
        # axes
        out.append(
            f'<line x1="{pl}" y1="{pb}" x2="{pr}" y2="{pb}" stroke="black"/>'
        )
        out.append(
            f'<line x1="{pl}" y1="{pt}" x2="{pl}" y2="{pb}" stroke="black"/>'
        )
        for i in range(5):
            fx = x0 + (x1 - x0) * i / 4
            fy = y0 + (y1 - y0) * i / 4
            out.append(
                f'<text x="{_fmt(sx(fx))}" y="{pb + 18}" text-anchor="middle">'
                f"{fx:.4g}</text>"
            )
            out.append(
                f'<text x="{pl - 8}" y="{_fmt(sy(fy) + 4)}" text-anchor="end">'
                f"{fy:.4g}</text>"
            )
            out.append(
                f'<line x1="{pl}" y1="{_fmt(sy(fy))}" x2="{pr}" y2="{_fmt(sy(fy))}" '
                'stroke="#dddddd"/>'
            )
        out.append(
            f'<text x="{(pl + pr) // 2}" y="{HEIGHT - 16}" text-anchor="middle">'
            f"{_esc(self.x_label)}</text>"
        )
        out.append(
            f'<text x="18" y="{(pt + pb) // 2}" text-anchor="middle" '
            f'transform="rotate(-90 18 {(pt + pb) // 2})">{_esc(self.y_label)}</text>'
        )
        # bars first so lines draw on top
        for label, xs, ys, color in self.bars:
            bw = max(1.0, (pr - pl) / max(len(xs), 1) * 0.8)
            for x, y in zip(xs, ys):
                out.append(
                    f'<rect x="{_fmt(sx(x) - bw / 2)}" y="{_fmt(sy(y))}" '
                    f'width="{_fmt(bw)}" height="{_fmt(max(0.0, sy(y0) - sy(y)))}" '
                    f'fill="{color}" fill-opacity="0.55"/>'
                )
        for label, xs, ys, color in self.lines:
            pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys))
            out.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
            for x, y in zip(xs, ys):
                out.append(
                    f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="2.5" fill="{color}"/>'
                )
        # legend
        ly = pt
        for label, _, _, color in self.lines + self.bars:
            out.append(
                f'<rect x="{pr + 12}" y="{ly}" width="12" height="12" fill="{color}"/>'
            )
            out.append(
                f'<text x="{pr + 30}" y="{ly + 10}">{_esc(label)}</text>'
            )
            ly += 18
        out.append("</svg>")
        return "\n".join(out) + "\n"
