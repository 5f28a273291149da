"""Deterministic SVG line charts of metrics against lead time."""

from __future__ import annotations

import csv
from xml.sax.saxutils import escape

import numpy as np

from .errors import ConfigError

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]
PANEL_W, PANEL_H = 420, 260
MARGIN = dict(left=60, right=20, top=30, bottom=45)
LEGEND_W = 170


def read_metric_csv(path) -> dict:
    """``{variable: {metric: (leads, values)}}``; files without a variable column map to ``""``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        lead_key = "lead_hours" if "lead_hours" in fields else (fields[0] if fields else None)
        metrics = [f for f in fields if f not in ("variable", lead_key, "baseline")]
        if lead_key is None or not metrics:
            raise ConfigError(f"{path}: needs a lead column and at least one metric column")
        data: dict = {}
        for row in reader:
            var = row.get("variable", "")
            for m in metrics:
                data.setdefault(var, {}).setdefault(m, []).append((float(row[lead_key]), float(row[m])))
    out = {}
    for var, per_metric in data.items():
        out[var] = {}
        for m, pts in per_metric.items():
            pts.sort()
            out[var][m] = (np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
    return out


def _fmt(v: float) -> str:
    s = f"{v:.4g}"
    return "0" if s in ("-0", "0") else s


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [round(float(t), 12) for t in np.arange(start, hi + step * 1e-9, step)]


def emit_plot(series: list[tuple[str, dict]], title: str = "") -> str:
    """SVG document with one panel per metric and one polyline per series.

    ``series`` pairs a label with the parsed CSV mapping from
    :func:`read_metric_csv`. All series must share the lead axis.
    """
    if not series:
        raise ConfigError("emit_plot: no series")
    lead_axis = None
    metrics: list[str] = []
    for label, data in series:
        for var, per_metric in data.items():
            for m, (leads, _) in per_metric.items():
                if lead_axis is None:
                    lead_axis = leads
                elif leads.shape != lead_axis.shape or np.any(leads != lead_axis):
                    raise ConfigError(f"emit_plot: series {label!r} has a different lead axis")
                if m not in metrics:
                    metrics.append(m)
    lines = []
    for idx, (label, data) in enumerate(series):
        for var in data:
            name = label if not var or len(data) == 1 else f"{label} {var}"
            lines.append((name, var, data[var], PALETTE[idx % len(PALETTE)]))

    width = len(metrics) * PANEL_W + LEGEND_W
    height = PANEL_H + (20 if title else 0)
    y0 = 20 if title else 0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="14" text-anchor="middle" font-size="13">{escape(title)}</text>')
    x_lo, x_hi = float(lead_axis.min()), float(lead_axis.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    for p, metric in enumerate(metrics):
        ox = p * PANEL_W
        vals = np.concatenate([d[metric][1] for _, _, d, _ in lines if metric in d])
        y_lo, y_hi = float(vals.min()), float(vals.max())
        if y_hi == y_lo:
            y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
        pad = 0.05 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad
        left, right = ox + MARGIN["left"], ox + PANEL_W - MARGIN["right"]
        top, bottom = y0 + MARGIN["top"], y0 + PANEL_H - MARGIN["bottom"]

        def sx(v):
            return left + (v - x_lo) / (x_hi - x_lo) * (right - left)

        def sy(v):
            return bottom - (v - y_lo) / (y_hi - y_lo) * (bottom - top)

        out.append(f'<g class="panel" id="panel-{escape(metric)}">')
        out.append(f'<text x="{(left + right) / 2:.1f}" y="{top - 10:.1f}" text-anchor="middle">'
                   f'{escape(metric.upper())}</text>')
        out.append(f'<line class="axis" x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>')
        out.append(f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>')
        for t in _ticks(x_lo, x_hi):
            if x_lo <= t <= x_hi:
                out.append(f'<text class="tick" x="{sx(t):.2f}" y="{bottom + 14}" text-anchor="middle">{_fmt(t)}</text>')
        for t in _ticks(y_lo, y_hi):
            if y_lo <= t <= y_hi:
                out.append(f'<text class="tick" x="{left - 5}" y="{sy(t) + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
        out.append(f'<text x="{(left + right) / 2:.1f}" y="{bottom + 32}" text-anchor="middle">lead time (h)</text>')
        for name, _, d, color in lines:
            if metric not in d:
                continue
            leads, values = d[metric]
            pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(leads, values))
            out.append(f'<polyline class="series" data-label="{escape(name)}" data-metric="{escape(metric)}" '
                       f'fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append("</g>")
    lx = len(metrics) * PANEL_W + 10
    out.append('<g class="legend">')
    for i, (name, _, _, color) in enumerate(lines):
        y = y0 + MARGIN["top"] + 16 * i
        out.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 20}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{y + 4}">{escape(name)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
