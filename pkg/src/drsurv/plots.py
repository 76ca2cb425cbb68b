"""Minimal self-contained SVG plotting (no external assets, byte-deterministic).

Just enough for the outputs this package emits: step survival curves with
interval layers, and metric-versus-n panels for the study harness.
"""

from __future__ import annotations

import math

import numpy as np

WIDTH, HEIGHT = 760, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 72, 24, 40, 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _nice_ticks(lo: float, hi: float, target: int = 6):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        lo, hi = 0.0, 1.0
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 10))
        t += step
    return ticks


def _fmt(x: float) -> str:
    if x == int(x) and abs(x) < 1e6:
        return str(int(x))
    return f"{x:.4g}"


class SvgPlot:
    """One cartesian panel; add series then write. Coordinates are data units."""

    def __init__(self, title: str, xlabel: str, ylabel: str,
                 x_range=None, y_range=None):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.series = []
        self.x_range = x_range
        self.y_range = y_range
        self.hlines = []

    def add(self, x, y, label: str = "", color: str | None = None,
            dash: str | None = None, step: bool = False, width: float = 1.6):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        self.series.append({"x": x[keep], "y": y[keep], "label": label,
                            "color": color, "dash": dash, "step": step,
                            "width": width})

    def add_hline(self, y: float, color: str = "#999999", dash: str = "3,3"):
        self.hlines.append((y, color, dash))

    def _ranges(self):
        xs = np.concatenate([s["x"] for s in self.series if s["x"].size]) \
            if any(s["x"].size for s in self.series) else np.array([0.0, 1.0])
        ys = np.concatenate([s["y"] for s in self.series if s["y"].size]) \
            if any(s["y"].size for s in self.series) else np.array([0.0, 1.0])
        ys = np.concatenate([ys, [h[0] for h in self.hlines]]) if self.hlines else ys
        x_lo, x_hi = self.x_range or (float(xs.min()), float(xs.max()))
        y_lo, y_hi = self.y_range or (float(ys.min()), float(ys.max()))
        if x_hi <= x_lo:
            x_hi = x_lo + 1.0
        if y_hi <= y_lo:
            y_hi = y_lo + 1.0
        pad = 0.04 * (y_hi - y_lo)
        if self.y_range is None:
            y_lo, y_hi = y_lo - pad, y_hi + pad
        return x_lo, x_hi, y_lo, y_hi

    def write(self, path) -> None:
        x_lo, x_hi, y_lo, y_hi = self._ranges()
        plot_w = WIDTH - MARGIN_L - MARGIN_R
        plot_h = HEIGHT - MARGIN_T - MARGIN_B

        def sx(x):
            return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

        def sy(y):
            return MARGIN_T + (y_hi - y) / (y_hi - y_lo) * plot_h

        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
                 f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
                 f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
                 f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="16">{self.title}</text>']
        # frame and ticks
        parts.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" '
                     f'height="{plot_h}" fill="none" stroke="#333333"/>')
        for t in _nice_ticks(x_lo, x_hi):
            if not x_lo <= t <= x_hi:
                continue
            px = sx(t)
            parts.append(f'<line x1="{px:.2f}" y1="{MARGIN_T + plot_h}" x2="{px:.2f}" '
                         f'y2="{MARGIN_T + plot_h + 5}" stroke="#333333"/>')
            parts.append(f'<text x="{px:.2f}" y="{MARGIN_T + plot_h + 20}" '
                         f'text-anchor="middle" font-family="sans-serif" '
                         f'font-size="12">{_fmt(t)}</text>')
        for t in _nice_ticks(y_lo, y_hi):
            if not y_lo <= t <= y_hi:
                continue
            py = sy(t)
            parts.append(f'<line x1="{MARGIN_L - 5}" y1="{py:.2f}" x2="{MARGIN_L}" '
                         f'y2="{py:.2f}" stroke="#333333"/>')
            parts.append(f'<text x="{MARGIN_L - 8}" y="{py + 4:.2f}" text-anchor="end" '
                         f'font-family="sans-serif" font-size="12">{_fmt(t)}</text>')
        parts.append(f'<text x="{MARGIN_L + plot_w / 2:.1f}" y="{HEIGHT - 14}" '
                     f'text-anchor="middle" font-family="sans-serif" font-size="13">'
                     f'{self.xlabel}</text>')
        parts.append(f'<text x="20" y="{MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="13" '
                     f'transform="rotate(-90 20 {MARGIN_T + plot_h / 2:.1f})">'
                     f'{self.ylabel}</text>')
        for yv, color, dash in self.hlines:
            if y_lo <= yv <= y_hi:
                parts.append(f'<line x1="{MARGIN_L}" y1="{sy(yv):.2f}" '
                             f'x2="{MARGIN_L + plot_w}" y2="{sy(yv):.2f}" '
                             f'stroke="{color}" stroke-dasharray="{dash}"/>')
        # series
        for i, s in enumerate(self.series):
            color = s["color"] or PALETTE[i % len(PALETTE)]
            if s["x"].size == 0:
                continue
            pts = []
            if s["step"]:
                xs_, ys_ = s["x"], s["y"]
                pts.append((sx(xs_[0]), sy(ys_[0])))
                for j in range(1, xs_.size):
                    pts.append((sx(xs_[j]), sy(ys_[j - 1])))
                    pts.append((sx(xs_[j]), sy(ys_[j])))
            else:
                pts = [(sx(xv), sy(yv)) for xv, yv in zip(s["x"], s["y"])]
            d = "M" + " L".join(f"{px:.2f},{py:.2f}" for px, py in pts)
            dash = f' stroke-dasharray="{s["dash"]}"' if s["dash"] else ""
            parts.append(f'<path d="{d}" fill="none" stroke="{color}" '
                         f'stroke-width="{s["width"]}"{dash}/>')
        # legend (labelled series only)
        labelled = [s for s in self.series if s["label"]]
        for i, s in enumerate(labelled):
            color = s["color"] or PALETTE[self.series.index(s) % len(PALETTE)]
            ly = MARGIN_T + 14 + 18 * i
            lx = MARGIN_L + plot_w - 180
            dash = f' stroke-dasharray="{s["dash"]}"' if s["dash"] else ""
            parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 26}" y2="{ly}" '
                         f'stroke="{color}" stroke-width="2"{dash}/>')
            parts.append(f'<text x="{lx + 32}" y="{ly + 4}" font-family="sans-serif" '
                         f'font-size="12">{s["label"]}</text>')
        parts.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(parts) + "\n")


def survival_plot(path, curves, bands=None, ci_curves=None, title="Counterfactual survival"):
    """curves: {arm: (times, values)}; ci_curves: {arm: (lower, upper)};
    bands: {arm: UniformBand}. Point estimates solid, CIs dashed, bands dotted."""
    plot = SvgPlot(title, "time", "survival probability", y_range=(0.0, 1.0))
    names = {0: "control", 1: "treated"}
    for arm, (times, values) in sorted(curves.items()):
        color = PALETTE[arm]
        plot.add(times, values, label=names.get(arm, str(arm)), color=color, step=True)
        if ci_curves and arm in ci_curves:
            lo, hi = ci_curves[arm]
            plot.add(times, lo, color=color, dash="6,4", step=True, width=1.1)
            plot.add(times, hi, color=color, dash="6,4", step=True, width=1.1)
        if bands and arm in bands:
            band = bands[arm]
            plot.add(band.times, band.lower, color=color, dash="2,3", step=True, width=1.1)
            plot.add(band.times, band.upper, color=color, dash="2,3", step=True, width=1.1)
    plot.write(path)


def contrast_plot(path, result, title, reference=None):
    plot = SvgPlot(title, "time", result.kind.replace("_", " "))
    plot.add(result.times, result.estimate, label="estimate", color=PALETTE[0], step=True)
    plot.add(result.times, result.ci_lower, color=PALETTE[0], dash="6,4", step=True, width=1.1)
    plot.add(result.times, result.ci_upper, color=PALETTE[0], dash="6,4", step=True, width=1.1)
    if result.band is not None:
        plot.add(result.band.times, result.band.lower, color=PALETTE[0], dash="2,3",
                 step=True, width=1.1)
        plot.add(result.band.times, result.band.upper, color=PALETTE[0], dash="2,3",
                 step=True, width=1.1)
    if reference is not None:
        plot.add_hline(reference)
    plot.write(path)


def study_metric_plot(path, summary, metric: str, title: str, reference=None):
    """One line per (estimator, parameter) showing `metric` against n."""
    groups = {}
    for est, param, n, m, value, _ in summary.rows:
        if m != metric:
            continue
        groups.setdefault((est, param), []).append((n, value))
    plot = SvgPlot(title, "sample size n", metric.replace("_", " "))
    for i, ((est, param), pts) in enumerate(sorted(groups.items())):
        pts.sort()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        plot.add(xs, ys, label=f"{est}:{param}", color=PALETTE[i % len(PALETTE)])
    if reference is not None:
        plot.add_hline(reference)
    plot.write(path)
