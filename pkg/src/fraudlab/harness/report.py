"""Plain SVG charts and CSV summaries for a pipeline run."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = 56
PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c")


def histogram_counts(values, bins: int = 40, value_range=None):
    """Equal-width bin edges and counts; the last bin is closed on the right."""
    v = np.asarray(values, dtype=float)
    counts, edges = np.histogram(v, bins=bins, range=value_range)
    return edges, counts


def _fmt(x) -> str:
    x = float(x)
    if x == 0 or 1e-3 <= abs(x) < 1e5:
        return f"{x:.4g}"
    return f"{x:.2e}"


class Svg:
    def __init__(self, title: str, width: int = WIDTH, height: int = HEIGHT):
        self.width, self.height = width, height
        self.parts = [f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>']

    def add(self, element: str):
        self.parts.append(element)

    def rect(self, x, y, w, h, fill, title=None):
        tip = f"<title>{escape(title)}</title>" if title else ""
        self.add(f'<rect x="{x:.2f}" y="{y:.2f}" width="{max(w, 0):.2f}" height="{max(h, 0):.2f}" fill="{fill}">{tip}</rect>')

    def line(self, x1, y1, x2, y2, stroke="#333", width=1.0):
        self.add(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="{stroke}" stroke-width="{width}"/>')

    def text(self, x, y, s, anchor="middle", size=11, rotate=None):
        rot = f' transform="rotate({rotate} {x:.2f} {y:.2f})"' if rotate is not None else ""
        self.add(f'<text x="{x:.2f}" y="{y:.2f}" text-anchor="{anchor}" font-size="{size}"{rot}>{escape(str(s))}</text>')

    def circle(self, x, y, r, fill, opacity=1.0):
        self.add(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{fill}" fill-opacity="{opacity}"/>')

    def polyline(self, pts, stroke, width=1.5):
        s = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        self.add(f'<polyline points="{s}" fill="none" stroke="{stroke}" stroke-width="{width}"/>')

    def render(self) -> str:
        body = "\n".join(self.parts)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif">\n'
                f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


class _Axes:
    """Linear data-to-pixel mapping inside the plot margins."""

    def __init__(self, svg: Svg, xlim, ylim, xlabel="", ylabel=""):
        self.svg = svg
        self.x0, self.x1 = MARGIN, svg.width - MARGIN / 2
        self.y0, self.y1 = svg.height - MARGIN, MARGIN
        self.xlim = _pad(xlim)
        self.ylim = _pad(ylim)
        svg.line(self.x0, self.y0, self.x1, self.y0)
        svg.line(self.x0, self.y0, self.x0, self.y1)
        for t in np.linspace(*self.ylim, 5):
            svg.text(self.x0 - 6, self.y(t) + 4, _fmt(t), anchor="end", size=10)
        if xlabel:
            svg.text((self.x0 + self.x1) / 2, svg.height - 14, xlabel)
        if ylabel:
            svg.text(16, (self.y0 + self.y1) / 2, ylabel, rotate=-90)

    def x(self, v):
        lo, hi = self.xlim
        return self.x0 + (float(v) - lo) / (hi - lo) * (self.x1 - self.x0)

    def y(self, v):
        lo, hi = self.ylim
        return self.y0 - (float(v) - lo) / (hi - lo) * (self.y0 - self.y1)

    def xticks(self, n=5):
        for t in np.linspace(*self.xlim, n):
            self.svg.text(self.x(t), self.y0 + 16, _fmt(t), size=10)


def _pad(lim):
    lo, hi = float(lim[0]), float(lim[1])
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if hi <= lo:
        return lo - 0.5, lo + 0.5
    return lo, hi


def bar_chart(labels, values, title, ylabel="", color=PALETTE[0]) -> str:
    svg = Svg(title)
    vals = [float(v) if math.isfinite(float(v)) else 0.0 for v in values]
    ax = _Axes(svg, (0, max(len(vals), 1)), (min(0.0, min(vals, default=0.0)), max(vals, default=1.0)), ylabel=ylabel)
    for i, (lab, v) in enumerate(zip(labels, vals)):
        x0, x1 = ax.x(i + 0.1), ax.x(i + 0.9)
        top, base = ax.y(max(v, 0.0)), ax.y(min(v, 0.0))
        svg.rect(x0, top, x1 - x0, base - top, color, f"{lab}: {_fmt(v)}")
        svg.text((x0 + x1) / 2, ax.y0 + 14, lab, size=9, rotate=30 if len(labels) > 6 else None)
    return svg.render()


def histogram_chart(values, title, bins=40, xlabel="", value_range=None) -> str:
    edges, counts = histogram_counts(values, bins, value_range)
    svg = Svg(title)
    ax = _Axes(svg, (edges[0], edges[-1]), (0, max(int(counts.max(initial=0)), 1)), xlabel=xlabel, ylabel="count")
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        svg.rect(ax.x(lo), ax.y(c), ax.x(hi) - ax.x(lo), ax.y(0) - ax.y(c), PALETTE[0], f"[{_fmt(lo)}, {_fmt(hi)}): {c}")
    ax.xticks()
    return svg.render()


def line_chart(series: dict, title, xlabel="", ylabel="") -> str:
    """``series`` maps a name to (xs, ys)."""
    svg = Svg(title)
    xs_all = np.concatenate([np.asarray(x, float) for x, _ in series.values()]) if series else np.zeros(1)
    ys_all = np.concatenate([np.asarray(y, float) for _, y in series.values()]) if series else np.zeros(1)
    ys_all = ys_all[np.isfinite(ys_all)] if ys_all.size else ys_all
    ax = _Axes(svg, (xs_all.min(initial=0), xs_all.max(initial=1)),
               (ys_all.min(initial=0), ys_all.max(initial=1)), xlabel, ylabel)
    for k, (name, (xs, ys)) in enumerate(series.items()):
        pts = [(ax.x(a), ax.y(b)) for a, b in zip(xs, ys) if math.isfinite(float(b))]
        svg.polyline(pts, PALETTE[k % len(PALETTE)])
        svg.text(ax.x1 - 4, ax.y1 + 14 * (k + 1), name, anchor="end", size=10)
    ax.xticks()
    return svg.render()


def scatter_chart(points, highlight, title, xlabel="PC1", ylabel="PC2", max_points=5000, seed=0) -> str:
    """Background points in grey, highlighted rows on top; large sets are thinned deterministically."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    h = np.asarray(highlight, dtype=bool).reshape(-1)
    svg = Svg(title)
    if P.shape[0] == 0:
        _Axes(svg, (0, 1), (0, 1), xlabel, ylabel)
        return svg.render()
    ax = _Axes(svg, (P[:, 0].min(), P[:, 0].max()), (P[:, 1].min(), P[:, 1].max()), xlabel, ylabel)
    base = np.flatnonzero(~h)
    if base.size > max_points:
        base = np.sort(np.random.default_rng(seed).choice(base, max_points, replace=False))
    for i in base:
        svg.circle(ax.x(P[i, 0]), ax.y(P[i, 1]), 1.5, "#9a9a9a", 0.5)
    for i in np.flatnonzero(h):
        svg.circle(ax.x(P[i, 0]), ax.y(P[i, 1]), 2.5, PALETTE[3], 0.9)
    svg.text(ax.x1 - 4, ax.y1 + 14, f"highlighted: {int(h.sum())}", anchor="end", size=10)
    ax.xticks()
    return svg.render()


def box_summary(groups: dict, title, ylabel="") -> str:
    """Min / quartiles / max per group (quartiles by linear interpolation)."""
    svg = Svg(title)
    stats = {}
    for k, v in groups.items():
        v = np.asarray(v, dtype=float)
        stats[k] = np.percentile(v, [0, 25, 50, 75, 100]) if v.size else np.full(5, np.nan)
    finite = np.concatenate([s[np.isfinite(s)] for s in stats.values()]) if stats else np.zeros(0)
    ax = _Axes(svg, (0, max(len(stats), 1)), (finite.min(initial=0), finite.max(initial=1)), ylabel=ylabel)
    for i, (k, s) in enumerate(stats.items()):
        cx = ax.x(i + 0.5)
        svg.text(cx, ax.y0 + 14, k, size=9)
        if not np.all(np.isfinite(s)):
            continue
        w = (ax.x(i + 0.8) - ax.x(i + 0.2))
        svg.line(cx, ax.y(s[0]), cx, ax.y(s[4]))
        svg.rect(cx - w / 2, ax.y(s[3]), w, ax.y(s[1]) - ax.y(s[3]), PALETTE[0], f"{k}: median {_fmt(s[2])}")
        svg.line(cx - w / 2, ax.y(s[2]), cx + w / 2, ax.y(s[2]), "#fff", 2)
    return svg.render()


def heat_table(matrix, labels, title) -> str:
    M = np.asarray(matrix, dtype=float)
    n = len(labels)
    svg = Svg(title, width=120 + 70 * n, height=120 + 40 * n)
    for i, lab in enumerate(labels):
        svg.text(110, 100 + 40 * i + 24, lab, anchor="end", size=10)
        svg.text(120 + 70 * i + 35, 90, lab, size=9, rotate=-30)
        for j in range(n):
            v = M[i, j]
            if math.isfinite(v):
                r = int(255 * min(1.0, max(0.0, v))) if v >= 0 else 255
                b = int(255 * min(1.0, max(0.0, -v))) if v < 0 else 255
                fill = f"#{255:02x}{255 - max(r, b) // 2:02x}{255 - r // 2:02x}" if v >= 0 else f"#{255 - b // 2:02x}{255 - b // 2:02x}{255:02x}"
                label = f"{v:.2f}"
            else:
                fill, label = "#eeeeee", "n/a"
            svg.rect(120 + 70 * j, 100 + 40 * i, 68, 38, fill)
            svg.text(120 + 70 * j + 34, 100 + 40 * i + 24, label, size=10)
    return svg.render()


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


@dataclass
class ReportInputs:
    """Everything the report set draws from; all arrays are row-aligned with the feature table."""

    amount: np.ndarray
    category_label: list
    hour: np.ndarray
    day_of_week: np.ndarray
    month: np.ndarray
    detector_scores: dict  # name -> (scores, flags)
    pca_points: np.ndarray
    pca_highlight: dict  # name -> mask
    elbow: dict  # k -> inertia
    k_distances: np.ndarray
    entity_top: dict  # "cards"/"merchants" -> list of EntityRisk
    window_risk: list  # TimeWindowStats
    correlation: np.ndarray
    correlation_labels: list
    loss_history: object = None  # TrainHistory
    extra: dict = field(default_factory=dict)


def render_reports(inp: ReportInputs, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)

    amount = np.asarray(inp.amount, dtype=float)
    hi = float(np.percentile(amount, 99)) if amount.size else 1.0
    edges, counts = histogram_counts(np.minimum(amount, hi), 40, (0.0, hi))
    put("amount_histogram.svg", histogram_chart(np.minimum(amount, hi), "Transaction amounts (99th pct clipped)",
                                                40, "amount", (0.0, hi)))
    write_csv(out / "amount_histogram.csv", ["bin_lo", "bin_hi", "count"],
              [(repr(float(a)), repr(float(b)), int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts)])
    written.append(out / "amount_histogram.csv")

    cats = sorted(set(inp.category_label))
    cat_counts = [sum(1 for c in inp.category_label if c == k) for k in cats]
    order = np.argsort(cat_counts, kind="stable")[::-1]
    put("category_counts.svg", bar_chart([cats[i] for i in order], [cat_counts[i] for i in order],
                                         "Transactions per category", "count"))
    write_csv(out / "category_counts.csv", ["category", "count"], [(cats[i], cat_counts[i]) for i in order])
    written.append(out / "category_counts.csv")

    for name, col, keys in (("hour", inp.hour, range(24)), ("day_of_week", inp.day_of_week, range(7)),
                            ("month", inp.month, range(1, 13))):
        col = np.asarray(col)
        put(f"amount_by_{name}.svg", box_summary({str(k): amount[col == k] for k in keys},
                                                 f"Amount by {name.replace('_', ' ')}", "amount"))

    for name, (scores, flags) in inp.detector_scores.items():
        s = np.asarray(scores, dtype=float)
        f = np.asarray(flags, dtype=bool)
        put(f"scores_{name}.svg", line_chart(
            {"all rows": _ecdf(s), "flagged": _ecdf(s[f])}, f"{name} score distribution (ECDF)", "score", "fraction"))

    for name, mask in inp.pca_highlight.items():
        put(f"pca_{name}.svg", scatter_chart(inp.pca_points, mask, f"PCA projection, {name} flags"))

    ks = sorted(inp.elbow)
    put("elbow.svg", line_chart({"inertia": (ks, [inp.elbow[k] for k in ks])}, "Elbow curve", "k", "inertia"))
    write_csv(out / "elbow.csv", ["k", "inertia"], [(k, repr(float(inp.elbow[k]))) for k in ks])
    written.append(out / "elbow.csv")
    kd = np.asarray(inp.k_distances, dtype=float)
    put("k_distance.svg", line_chart({"k-distance": (np.arange(kd.size), kd)}, "Sorted k-distance", "rank", "distance"))

    for name, rows in inp.entity_top.items():
        put(f"top_{name}.svg", bar_chart([r.entity_id for r in rows], [r.fraud_ratio for r in rows],
                                         f"Top {len(rows)} {name} by flagged ratio", "ratio"))
    put("window_risk.svg", bar_chart([w.window for w in inp.window_risk], [w.mean_risk for w in inp.window_risk],
                                     "Mean weighted risk by time window", "risk"))
    put("indicator_correlation.svg", heat_table(inp.correlation, inp.correlation_labels, "Indicator correlations"))

    if inp.loss_history is not None and inp.loss_history.train_loss:
        h = inp.loss_history
        e = list(range(1, len(h.train_loss) + 1))
        put("autoencoder_loss.svg", line_chart({"train": (e, h.train_loss), "validation": (e, h.val_loss)},
                                               "Autoencoder loss", "epoch", "MSE"))
    return written


def _ecdf(values):
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return np.zeros(0), np.zeros(0)
    if v.size > 2000:
        idx = np.linspace(0, v.size - 1, 2000).astype(int)
        return v[idx], (idx + 1) / v.size
    return v, np.arange(1, v.size + 1) / v.size
