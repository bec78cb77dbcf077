"""Dependency-free SVG charts: line plots per policy and step histograms."""
from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .export import aggregate_rows
from .runner import ResultTable

PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")
W, H = 640, 400
PAD_L, PAD_R, PAD_T, PAD_B = 70, 150, 40, 50

METRIC_LABELS = {"matches_per_user": "matches per user", "retention_rate": "retention rate"}


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def _frame(title: str, xlabel: str, ylabel: str, x_lo, x_hi, y_lo, y_hi):
    sx = lambda v: PAD_L + (v - x_lo) / (x_hi - x_lo) * (W - PAD_L - PAD_R)  # noqa: E731
    sy = lambda v: H - PAD_B - (v - y_lo) / (y_hi - y_lo) * (H - PAD_T - PAD_B)  # noqa: E731
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{PAD_L}" y1="{H - PAD_B}" x2="{W - PAD_R}" y2="{H - PAD_B}" stroke="black"/>',
        f'<line x1="{PAD_L}" y1="{PAD_T}" x2="{PAD_L}" y2="{H - PAD_B}" stroke="black"/>',
        f'<text x="{(PAD_L + W - PAD_R) / 2:.1f}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{(PAD_T + H - PAD_B) / 2:.1f}" text-anchor="middle" transform="rotate(-90 16 {(PAD_T + H - PAD_B) / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for t in _ticks(x_lo, x_hi):
        parts.append(f'<text x="{sx(t):.1f}" y="{H - PAD_B + 15}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y_lo, y_hi):
        parts.append(f'<text x="{PAD_L - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.4g}</text>')
        parts.append(f'<line x1="{PAD_L}" y1="{sy(t):.1f}" x2="{W - PAD_R}" y2="{sy(t):.1f}" stroke="#ddd"/>')
    return parts, sx, sy


def _legend(parts, names):
    for i, name in enumerate(names):
        y = PAD_T + 10 + 18 * i
        c = PALETTE[i % len(PALETTE)]
        parts.append(f'<rect x="{W - PAD_R + 12}" y="{y - 8}" width="12" height="4" fill="{c}"/>')
        parts.append(f'<text x="{W - PAD_R + 30}" y="{y - 2}">{escape(name)}</text>')


def _bounds(values):
    arr = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if arr.size == 0:
        return 0.0, 1.0
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def line_chart(series: dict, title: str, xlabel: str, ylabel: str) -> str:
    """``series`` maps a name to ``(xs, ys)``; one polyline with point markers each."""
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    x_lo, x_hi = _bounds(xs_all)
    y_lo, y_hi = _bounds(ys_all)
    y_lo = min(y_lo, 0.0) if y_lo >= 0 else y_lo
    parts, sx, sy = _frame(title, xlabel, ylabel, x_lo, x_hi, y_lo, y_hi)
    data = {}
    for i, (name, (xs, ys)) in enumerate(series.items()):
        c = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" stroke="{c}" stroke-width="2" points="{pts}"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" fill="{c}"><title>{escape(name)}: ({x:.6g}, {y:.6g})</title></circle>')
        data[name] = {"x": [float(x) for x in xs], "y": [float(y) for y in ys]}
    _legend(parts, list(series))
    parts.append(f"<metadata>{escape(json.dumps(data, sort_keys=True))}</metadata>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def histogram_chart(series: dict, edges, title: str, xlabel: str) -> str:
    """Step outlines of bin counts on shared ``edges``, one per series."""
    edges = np.asarray(edges, dtype=float)
    counts_all = [c for counts in series.values() for c in counts]
    y_hi = max([1.0] + [float(c) for c in counts_all])
    parts, sx, sy = _frame(title, xlabel, "users", float(edges[0]), float(edges[-1]), 0.0, y_hi)
    data = {"edges": edges.tolist()}
    for i, (name, counts) in enumerate(series.items()):
        c = PALETTE[i % len(PALETTE)]
        pts = [f"{sx(edges[0]):.2f},{sy(0):.2f}"]
        for j, n in enumerate(counts):
            pts.append(f"{sx(edges[j]):.2f},{sy(n):.2f}")
            pts.append(f"{sx(edges[j + 1]):.2f},{sy(n):.2f}")
        pts.append(f"{sx(edges[-1]):.2f},{sy(0):.2f}")
        parts.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" stroke="{c}" stroke-width="2" points="{" ".join(pts)}"/>')
        data[name] = [int(n) for n in counts]
    if edges[0] < 0 < edges[-1]:
        parts.append(f'<line x1="{sx(0):.2f}" y1="{PAD_T}" x2="{sx(0):.2f}" y2="{H - PAD_B}" stroke="#999" stroke-dasharray="4 3"/>')
    _legend(parts, list(series))
    parts.append(f"<metadata>{escape(json.dumps(data, sort_keys=True))}</metadata>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _by_step_series(table: ResultTable, metric: str) -> dict:
    series = {}
    for r in aggregate_rows(table):
        xs, ys = series.setdefault(r["policy"], ([], []))
        xs.append(r["step"])
        ys.append(r[metric + "_mean"])
    return series


def _by_axis_series(table: ResultTable, metric: str) -> dict:
    final = {}
    for r in aggregate_rows(table):
        key = (r["policy"], r["axis_value"])
        if key not in final or r["step"] > final[key]["step"]:
            final[key] = r
    series = {}
    for (policy, value), r in final.items():
        xs, ys = series.setdefault(policy, ([], []))
        xs.append(float(value) if isinstance(value, (int, float)) else len(xs))
        ys.append(r[metric + "_mean"])
    return series


def _pooled_hist(table: ResultTable, values_of, bins: int):
    per_policy = {}
    for (_, policy, _seed), fin in sorted(table.finals.items(), key=lambda kv: (str(kv[0][0]), kv[0][1], kv[0][2])):
        vals = values_of(fin)
        if vals is not None:
            per_policy.setdefault(policy, []).append(vals)
    if not per_policy:
        return None
    pooled = {p: np.concatenate(v) for p, v in per_policy.items()}
    lo, hi = _bounds(np.concatenate(list(pooled.values())))
    edges = np.linspace(np.floor(lo), np.ceil(hi), bins + 1)
    return {p: np.histogram(v, bins=edges)[0] for p, v in pooled.items()}, edges


def emit_charts(table: ResultTable, outdir, stem: str = "results", bins: int = 30) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    swept = table.axis is not None
    for metric in ("matches_per_user", "retention_rate"):
        if swept:
            series = _by_axis_series(table, metric)
            svg = line_chart(series, f"{METRIC_LABELS[metric]} vs {table.axis}", table.axis, METRIC_LABELS[metric])
        else:
            series = _by_step_series(table, metric)
            svg = line_chart(series, f"{METRIC_LABELS[metric]} over time", "step", METRIC_LABELS[metric])
        path = outdir / f"{stem}_{metric}.svg"
        path.write_text(svg)
        written.append(path)
    if not table.finals:
        return written
    hist = _pooled_hist(table, lambda f: f.cum_matches[f.retained], bins)
    if hist:
        path = outdir / f"{stem}_match_hist.svg"
        path.write_text(histogram_chart(hist[0], hist[1], "match counts of retained users", "matches"))
        written.append(path)
    hist = _pooled_hist(
        table, lambda f: None if f.satisfactory is None else (f.cum_matches - f.satisfactory)[f.retained], bins
    )
    if hist:
        path = outdir / f"{stem}_deviation_hist.svg"
        path.write_text(histogram_chart(hist[0], hist[1], "match count minus satisfactory level", "m - b"))
        written.append(path)
    return written

