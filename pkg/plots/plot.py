#!/usr/bin/env python3
"""Render RMSE sweep curves from a harness metrics.csv as SVG charts.

One chart per metric family; rows whose metric is ``<family>`` or
``<family>:<variant>`` become one curve per variant on a log-scale y axis.
Every data marker carries the original CSV strings in ``data-sweep`` /
``data-value`` attributes, so tests can re-extract the plotted coordinates
exactly as written.

Usage:
    plot.py --csv metrics.csv --metric position_rmse_m --out fig.svg
    plot.py --csv metrics.csv --all --out-dir figs/
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from collections import OrderedDict

EXPECTED_HEADER = ["sweep", "metric", "value", "trials"]

WIDTH, HEIGHT = 640, 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 160, 40, 55

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
MARKERS = ["circle", "square", "diamond", "triangle"]


class SchemaMismatch(Exception):
    """metrics.csv does not match the harness output schema."""


def read_metrics(path):
    """Parse metrics.csv; returns a list of row dicts with raw strings kept."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch("empty metrics file") from None
        if header != EXPECTED_HEADER:
            raise SchemaMismatch(
                f"unexpected header {header!r}, want {EXPECTED_HEADER!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise SchemaMismatch(f"line {lineno}: expected 4 columns")
            try:
                sweep = float(row[0])
                value = float(row[2])
                int(row[3])
            except ValueError as exc:
                raise SchemaMismatch(f"line {lineno}: {exc}") from None
            rows.append({
                "sweep": sweep, "metric": row[1], "value": value,
                "sweep_raw": row[0], "value_raw": row[2], "trials_raw": row[3],
            })
    if not rows:
        raise SchemaMismatch("metrics file holds no data rows")
    return rows


def metric_families(rows):
    return sorted({r["metric"].split(":", 1)[0] for r in rows})


def select_series(rows, family):
    """OrderedDict variant -> list of rows sorted by sweep value."""
    series = OrderedDict()
    for r in rows:
        base, _, variant = r["metric"].partition(":")
        if base != family:
            continue
        series.setdefault(variant or "default", []).append(r)
    for pts in series.values():
        pts.sort(key=lambda r: r["sweep"])
    if not series:
        raise SchemaMismatch(f"no rows for metric {family!r}")
    return series


def _nice_log_ticks(lo, hi):
    lo_e = math.floor(math.log10(lo))
    hi_e = math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(lo_e, hi_e + 1)]


def _fmt(v):
    if v == 0:
        return "0"
    if abs(v) >= 1000 or abs(v) < 0.01:
        return f"{v:.0e}".replace("e-0", "e-").replace("e+0", "e")
    return f"{v:g}"


def render_svg(series, family, title=None):
    """Build the SVG text for one metric family."""
    xs = sorted({r["sweep"] for pts in series.values() for r in pts})
    ys = [r["value"] for pts in series.values() for r in pts
          if math.isfinite(r["value"]) and r["value"] > 0]
    if not ys:
        ys = [1.0]
    x_lo, x_hi = min(xs), max(xs)
    if x_lo == x_hi:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    y_lo, y_hi = min(ys), max(ys)
    ticks = _nice_log_ticks(y_lo, y_hi)
    y_lo, y_hi = ticks[0], ticks[-1]
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        y = max(y, y_lo)  # nonpositive or sub-floor values clamp to the floor
        return (MARGIN_T + plot_h
                - (math.log10(y) - math.log10(y_lo))
                / (math.log10(y_hi) - math.log10(y_lo)) * plot_h)

    out = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" '
        f'font-family="Helvetica, Arial, sans-serif">'
    )
    out.append(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    out.append(f'<text x="{MARGIN_L + plot_w / 2}" y="{MARGIN_T - 14}" '
               f'text-anchor="middle" font-size="15">{title or family}</text>')
    # frame and gridlines
    out.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" '
               f'height="{plot_h}" fill="none" stroke="black"/>')
    for t in ticks:
        y = sy(t)
        out.append(f'<line x1="{MARGIN_L}" y1="{y:.2f}" x2="{MARGIN_L + plot_w}" '
                   f'y2="{y:.2f}" stroke="#cccccc" stroke-dasharray="3,3"/>')
        out.append(f'<text x="{MARGIN_L - 8}" y="{y + 4:.2f}" text-anchor="end" '
                   f'font-size="11" class="ytick">{_fmt(t)}</text>')
    for x in xs:
        out.append(f'<text x="{sx(x):.2f}" y="{MARGIN_T + plot_h + 18}" '
                   f'text-anchor="middle" font-size="11" class="xtick">{_fmt(x)}</text>')
    out.append(f'<text x="{MARGIN_L + plot_w / 2}" y="{HEIGHT - 14}" '
               f'text-anchor="middle" font-size="13">sweep value</text>')
    out.append(f'<text x="18" y="{MARGIN_T + plot_h / 2}" text-anchor="middle" '
               f'font-size="13" transform="rotate(-90 18 {MARGIN_T + plot_h / 2})">'
               f'RMSE (log scale)</text>')

    for idx, (variant, pts) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        coords = [(sx(r["sweep"]), sy(r["value"]), r) for r in pts
                  if math.isfinite(r["value"])]
        path = " ".join(f"{x:.2f},{y:.2f}" for x, y, _ in coords)
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}" '
                   f'stroke-width="1.8" class="curve" data-variant="{variant}"/>')
        for x, y, r in coords:
            out.append(
                f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3.5" fill="{color}" '
                f'class="datapoint" data-variant="{variant}" '
                f'data-metric="{r["metric"]}" data-sweep="{r["sweep_raw"]}" '
                f'data-value="{r["value_raw"]}" data-trials="{r["trials_raw"]}"/>'
            )
        ly = MARGIN_T + 16 + 20 * idx
        lx = MARGIN_L + plot_w + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="1.8"/>')
        out.append(f'<circle cx="{lx + 11}" cy="{ly - 4}" r="3.5" fill="{color}"/>')
        out.append(f'<text x="{lx + 28}" y="{ly}" font-size="12" '
                   f'class="legend-entry">{variant}</text>')
    out.append("</svg>")
    return "\n".join(out)


def plot_sweep(csv_path, family, out_path, title=None):
    rows = read_metrics(csv_path)
    series = select_series(rows, family)
    svg = render_svg(series, family, title=title)
    with open(out_path, "w") as fh:
        fh.write(svg)
    return out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--csv", required=True)
    parser.add_argument("--metric", help="metric family, e.g. position_rmse_m")
    parser.add_argument("--out", help="output SVG path (single-metric mode)")
    parser.add_argument("--all", action="store_true",
                        help="render every metric family found in the csv")
    parser.add_argument("--out-dir", help="output directory for --all")
    parser.add_argument("--title")
    args = parser.parse_args(argv)

    if args.all:
        if not args.out_dir:
            parser.error("--all requires --out-dir")
        rows = read_metrics(args.csv)
        os.makedirs(args.out_dir, exist_ok=True)
        for family in metric_families(rows):
            path = os.path.join(args.out_dir, f"{family.replace('/', '_')}.svg")
            plot_sweep(args.csv, family, path, title=args.title)
            print(path)
        return 0
    if not (args.metric and args.out):
        parser.error("either --all --out-dir or --metric and --out are required")
    plot_sweep(args.csv, args.metric, args.out, title=args.title)
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
