"""Two-panel SVG figure: EDA with tonic on the left, phasic with peaks on the right."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np

from .decomposition import Decomposition
from .features import Peak
from .signals import Frame

PANEL_W, PANEL_H = 420.0, 260.0
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 56.0, 14.0, 28.0, 40.0
EDA_COLOR, TONIC_COLOR, PHASIC_COLOR, PEAK_COLOR = "black", "green", "#1f4e9a", "red"


def _limits(*series: np.ndarray) -> Tuple[float, float]:
    lo = min(float(np.min(s)) for s in series)
    hi = max(float(np.max(s)) for s in series)
    if hi - lo < 1e-12:
        pad = max(abs(hi), 1.0) * 0.05
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Axes:
    def __init__(self, x0: float, t_max: float, ylim: Tuple[float, float]):
        self.x0 = x0
        self.t_max = t_max
        self.ylim = ylim
        self.w = PANEL_W - MARGIN_L - MARGIN_R
        self.h = PANEL_H - MARGIN_T - MARGIN_B

    def px(self, t):
        return self.x0 + MARGIN_L + np.asarray(t) / self.t_max * self.w

    def py(self, y):
        lo, hi = self.ylim
        return MARGIN_T + (hi - np.asarray(y)) / (hi - lo) * self.h

    def polyline(self, t, y, color: str, cls: str) -> str:
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(self.px(t), self.py(y)))
        return (f'<polyline class="{cls}" points="{pts}" fill="none" '
                f'stroke="{color}" stroke-width="1"/>')

    def frame_and_ticks(self, title: str) -> list:
        x, y = self.x0 + MARGIN_L, MARGIN_T
        out = [f'<rect x="{x:.2f}" y="{y:.2f}" width="{self.w:.2f}" height="{self.h:.2f}" '
               f'fill="none" stroke="#888"/>',
               f'<text x="{x + self.w / 2:.2f}" y="{MARGIN_T - 10:.2f}" '
               f'text-anchor="middle" font-size="12">{escape(title)}</text>']
        for t in np.linspace(0.0, self.t_max, 7):
            px = float(self.px(t))
            out.append(f'<text x="{px:.2f}" y="{MARGIN_T + self.h + 14:.2f}" '
                       f'text-anchor="middle" font-size="9">{t:g}</text>')
        lo, hi = self.ylim
        for v in np.linspace(lo, hi, 5):
            py = float(self.py(v))
            out.append(f'<text x="{x - 4:.2f}" y="{py + 3:.2f}" text-anchor="end" '
                       f'font-size="9">{v:.3g}</text>')
        out.append(f'<text x="{x + self.w / 2:.2f}" y="{PANEL_H - 8:.2f}" '
                   f'text-anchor="middle" font-size="10">time (s)</text>')
        out.append(f'<text x="{self.x0 + 12:.2f}" y="{MARGIN_T + self.h / 2:.2f}" '
                   f'text-anchor="middle" font-size="10" transform="rotate(-90 '
                   f'{self.x0 + 12:.2f} {MARGIN_T + self.h / 2:.2f})">uS</text>')
        return out


def render_svg(frame: Frame, d: Decomposition, peaks: Sequence[Peak], title: str = "") -> str:
    """Return the SVG document as a string."""
    x = frame.samples
    t = np.arange(x.size) / frame.fs
    t_max = float(t[-1]) if x.size > 1 else 1.0
    left = _Axes(0.0, t_max, _limits(x, d.tonic))
    right = _Axes(PANEL_W, t_max, _limits(d.phasic))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * PANEL_W:.0f}" '
             f'height="{PANEL_H:.0f}" viewBox="0 0 {2 * PANEL_W:.0f} {PANEL_H:.0f}">']
    if title:
        parts.append(f"<title>{escape(title)}</title>")
    parts.append('<g class="panel-left">')
    parts += left.frame_and_ticks("EDA and tonic")
    parts.append(left.polyline(t, x, EDA_COLOR, "eda"))
    parts.append(left.polyline(t, d.tonic, TONIC_COLOR, "tonic"))
    parts.append("</g>")
    parts.append('<g class="panel-right">')
    parts += right.frame_and_ticks("Phasic and peaks")
    parts.append(right.polyline(t, d.phasic, PHASIC_COLOR, "phasic"))
    for p in peaks:
        cx, cy = float(right.px(t[p.index])), float(right.py(d.phasic[p.index]))
        parts.append(f'<circle class="peak" cx="{cx:.2f}" cy="{cy:.2f}" r="3" '
                     f'fill="none" stroke="{PEAK_COLOR}"/>')
    parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plot(frame: Frame, d: Decomposition, peaks: Sequence[Peak],
              path: Union[str, Path], title: str = "") -> Path:
    path = Path(path)
    path.write_text(render_svg(frame, d, peaks, title), encoding="utf-8")
    return path
