"""Standalone SVG report from ``sweep.csv`` and ``event_table.csv``.

Output is a pure function of the input tables: coordinates are rounded to
two decimals and every iteration order is fixed, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from afmm.errors import DataError
from afmm.eventstudy import GROUPS, EventTableRow, read_event_table
from afmm.experiments import SweepTable
from afmm.metrics import METRIC_NAMES

PANEL_W, PANEL_H = 360, 220
PAD_L, PAD_R, PAD_T, PAD_B = 56, 16, 28, 36
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
GROUP_COLOR = {"vendor": "#d62728", "financial": "#1f77b4", "control": "#7f7f7f"}


def _f(x: float) -> str:
    return f"{x:.2f}"


def _bounds(values) -> tuple[float, float]:
    vals = [v for v in values if math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if lo == hi:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


class _Panel:
    def __init__(self, x0: float, y0: float, title: str, xlim, ylim):
        self.x0, self.y0 = x0, y0
        self.xlim, self.ylim = xlim, ylim
        self.parts = [
            f'<g class="panel" transform="translate({_f(x0)},{_f(y0)})">',
            f'<text x="{_f(PANEL_W / 2)}" y="16" text-anchor="middle" font-size="12">{escape(title)}</text>',
            f'<rect x="{PAD_L}" y="{PAD_T}" width="{PANEL_W - PAD_L - PAD_R}" '
            f'height="{PANEL_H - PAD_T - PAD_B}" fill="none" stroke="#444"/>',
        ]
        for v in (ylim[0], ylim[1]):
            self.parts.append(f'<text x="{PAD_L - 4}" y="{_f(self.y(v) + 4)}" text-anchor="end" '
                              f'font-size="9">{v:.4g}</text>')

    def x(self, v: float) -> float:
        lo, hi = self.xlim
        return PAD_L + (v - lo) / (hi - lo) * (PANEL_W - PAD_L - PAD_R)

    def y(self, v: float) -> float:
        lo, hi = self.ylim
        return PANEL_H - PAD_B - (v - lo) / (hi - lo) * (PANEL_H - PAD_T - PAD_B)

    def close(self) -> str:
        return "\n".join(self.parts + ["</g>"])


def _line_panels(table: SweepTable) -> list[tuple[str, callable]]:
    xname = table.param_names[0]
    others = table.param_names[1:]
    cells = table.cell_values()
    x_all = np.array([c[0] for c in cells])
    groups: dict[tuple, list[int]] = {}
    for k, c in enumerate(cells):
        groups.setdefault(tuple(c[1:]), []).append(k)
    xlim = _bounds(x_all)

    panels = []
    for metric in METRIC_NAMES:
        means = table.cell_means(metric)

        def draw(x0, y0, metric=metric, means=means):
            p = _Panel(x0, y0, f"{metric} vs {xname}", xlim, _bounds(means))
            for gi, (key, idx) in enumerate(sorted(groups.items())):
                color = PALETTE[gi % len(PALETTE)]
                pts = sorted((x_all[k], means[k]) for k in idx if math.isfinite(means[k]))
                label = ", ".join(f"{n}={v:g}" for n, v in zip(others, key))
                if len(pts) > 1:
                    path = " ".join(f"{_f(p.x(a))},{_f(p.y(b))}" for a, b in pts)
                    p.parts.append(f'<polyline class="series" points="{path}" fill="none" '
                                   f'stroke="{color}" stroke-width="1.5"><title>{escape(label)}</title></polyline>')
                for a, b in pts:
                    p.parts.append(f'<circle class="point" cx="{_f(p.x(a))}" cy="{_f(p.y(b))}" r="2.5" '
                                   f'fill="{color}"/>')
            p.parts.append(f'<text x="{_f(PANEL_W / 2)}" y="{PANEL_H - 8}" text-anchor="middle" '
                           f'font-size="10">{escape(xname)}</text>')
            return p.close()

        panels.append(draw)
    return panels


def _bar_panels(rows: list[EventTableRow]) -> list:
    events = list(dict.fromkeys(r.event_id for r in rows))
    panels = []
    for field, css in (("mean_car", "car-bar"), ("mean_abvol", "abvol-bar")):
        values = [getattr(r, field) for r in rows]
        lo, hi = _bounds(values + [0.0])

        def draw(x0, y0, field=field, css=css, lo=lo, hi=hi):
            p = _Panel(x0, y0, f"{field} by event and group", (0.0, float(len(events))), (lo, hi))
            slot = (PANEL_W - PAD_L - PAD_R) / max(1, len(events))
            bar_w = slot / (len(GROUPS) + 1)
            zero = p.y(0.0)
            p.parts.append(f'<line x1="{PAD_L}" x2="{PANEL_W - PAD_R}" y1="{_f(zero)}" y2="{_f(zero)}" stroke="#888"/>')
            for r in rows:
                e = events.index(r.event_id)
                g = GROUPS.index(r.group) if r.group in GROUPS else len(GROUPS) - 1
                v = getattr(r, field)
                v = v if math.isfinite(v) else 0.0
                x = PAD_L + e * slot + (g + 0.5) * bar_w
                top, height = min(zero, p.y(v)), abs(p.y(v) - zero)
                p.parts.append(
                    f'<rect class="{css}" x="{_f(x)}" y="{_f(top)}" width="{_f(bar_w)}" height="{_f(height)}" '
                    f'fill="{GROUP_COLOR.get(r.group, "#444")}"><title>{escape(r.event_id)} {escape(r.group)} '
                    f'n={r.n} {field}={v:.6g}</title></rect>'
                )
            for e, ev in enumerate(events):
                p.parts.append(f'<text x="{_f(PAD_L + (e + 0.5) * slot)}" y="{PANEL_H - 20}" '
                               f'text-anchor="middle" font-size="10">{escape(ev)}</text>')
            return p.close()

        panels.append(draw)
    return panels


def render_svg(sweep: SweepTable | None, events: list[EventTableRow] | None) -> str:
    panels = []
    if sweep is not None:
        panels += _line_panels(sweep)
    if events is not None:
        panels += _bar_panels(events)
    if not panels:
        raise DataError("nothing to plot: no sweep rows and no event-table rows")
    cols = 2
    rows = math.ceil(len(panels) / cols)
    width, height = cols * PANEL_W, rows * PANEL_H
    body = [draw((k % cols) * PANEL_W, (k // cols) * PANEL_H) for k, draw in enumerate(panels)]
    return "\n".join([
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        '<rect width="100%" height="100%" fill="white"/>',
        *body,
        "</svg>",
        "",
    ])


def emit_report(tables_dir, out_path) -> list[str]:
    """Write the SVG for whichever tables exist in ``tables_dir``; returns the inputs used."""
    d = Path(tables_dir)
    if not d.is_dir():
        raise DataError(f"{d}: not a directory")
    used = []
    sweep = events = None
    if (d / "sweep.csv").is_file():
        sweep = SweepTable.read_csv(d / "sweep.csv")
        if not sweep.rows:
            raise DataError(f"{d / 'sweep.csv'}: table is empty")
        used.append("sweep.csv")
    if (d / "event_table.csv").is_file():
        events = read_event_table(d / "event_table.csv")
        if not events:
            raise DataError(f"{d / 'event_table.csv'}: table is empty")
        used.append("event_table.csv")
    if not used:
        raise DataError(f"{d}: neither sweep.csv nor event_table.csv found")
    Path(out_path).write_text(render_svg(sweep, events))
    return used
