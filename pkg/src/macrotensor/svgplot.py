"""Dependency-free SVG renderers for the diagnostic plots.

Each function turns one plot description into a complete, valid SVG
document string.  Rendering is a pure function of its input, so the same
diagnostics always give byte-identical files.
"""

from xml.sax.saxutils import escape

import numpy as np

__all__ = [
    "render_boxplot",
    "render_outlier_map",
    "render_rd_reduction",
    "render_residual_map",
]

_AXIS = "#444444"
_GRID = "#999999"
_TEXT = "#222222"
_FONT = "font-family=\"Helvetica, Arial, sans-serif\""


def _n(v):
    s = format(float(v), ".6g")
    return "0" if s == "-0" else s


class _Canvas:
    """Accumulates SVG elements and renders the final document."""

    def __init__(self, width, height):
        self.width = width
        self.height = height
        self.parts = []

    def line(self, x1, y1, x2, y2, stroke=_AXIS, width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_n(x1)}" y1="{_n(y1)}" x2="{_n(x2)}" y2="{_n(y2)}" '
            f'stroke="{stroke}" stroke-width="{_n(width)}"{d} />')

    def rect(self, x, y, w, h, fill, stroke="none", width=1.0):
        s = "" if stroke == "none" else \
            f' stroke="{stroke}" stroke-width="{_n(width)}"'
        self.parts.append(
            f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(w)}" '
            f'height="{_n(h)}" fill="{fill}"{s} />')

    def circle(self, cx, cy, r, fill, stroke="none", width=1.0):
        s = "" if stroke == "none" else \
            f' stroke="{stroke}" stroke-width="{_n(width)}"'
        self.parts.append(
            f'<circle cx="{_n(cx)}" cy="{_n(cy)}" r="{_n(r)}" '
            f'fill="{fill}"{s} />')

    def text(self, x, y, s, size=11, anchor="start", fill=_TEXT, rotate=None):
        t = f' transform="rotate({_n(rotate)} {_n(x)} {_n(y)})"' if rotate \
            else ""
        self.parts.append(
            f'<text x="{_n(x)}" y="{_n(y)}" font-size="{_n(size)}" '
            f'text-anchor="{anchor}" fill="{fill}" {_FONT}{t}>'
            f'{escape(str(s))}</text>')

    def render(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" '
                f'width="{_n(self.width)}" height="{_n(self.height)}" '
                f'viewBox="0 0 {_n(self.width)} {_n(self.height)}">')
        body = "\n".join(self.parts)
        return ('<?xml version="1.0" encoding="UTF-8"?>\n'
                f'{head}\n{body}\n</svg>\n')


def _pad_range(lo, hi, frac=0.05):
    if hi <= lo:
        span = abs(hi) if hi else 1.0
        return lo - 0.5 * span, hi + 0.5 * span
    pad = frac * (hi - lo)
    return lo - pad, hi + pad


def _lin_ticks(lo, hi, n=5):
    raw = np.linspace(lo, hi, n)
    return [(v, format(v, ".3g")) for v in raw]


class _Axes:
    """Linear or log-y plotting area with frame, ticks, and labels."""

    def __init__(self, canvas, xlim, ylim, xlabel="", ylabel="", title="",
                 ylog=False, left=64, right=18, top=30, bottom=46):
        self.c = canvas
        self.ylog = ylog
        self.x0, self.x1 = left, canvas.width - right
        self.y0, self.y1 = canvas.height - bottom, top
        self.xlim = xlim
        self.ylim = (np.log10(ylim[0]), np.log10(ylim[1])) if ylog else ylim
        self.xlabel, self.ylabel, self.title = xlabel, ylabel, title

    def x(self, v):
        a, b = self.xlim
        return self.x0 + (v - a) / (b - a) * (self.x1 - self.x0)

    def y(self, v):
        if self.ylog:
            v = np.log10(v)
        a, b = self.ylim
        return self.y0 + (v - a) / (b - a) * (self.y1 - self.y0)

    def frame(self, xticks=None, yticks=None):
        c = self.c
        c.line(self.x0, self.y0, self.x1, self.y0)
        c.line(self.x0, self.y0, self.x0, self.y1)
        for v, lab in (xticks if xticks is not None
                       else _lin_ticks(*self.xlim)):
            px = self.x(v)
            c.line(px, self.y0, px, self.y0 + 4)
            c.text(px, self.y0 + 16, lab, anchor="middle")
        if yticks is None:
            if self.ylog:
                yticks = self._log_ticks()
            else:
                yticks = _lin_ticks(*self.ylim)
        for v, lab in yticks:
            py = self.y(10.0 ** v) if self.ylog else self.y(v)
            c.line(self.x0 - 4, py, self.x0, py)
            c.text(self.x0 - 7, py + 4, lab, anchor="end")
        if self.xlabel:
            c.text((self.x0 + self.x1) / 2, self.c.height - 10, self.xlabel,
                   anchor="middle", size=12)
        if self.ylabel:
            c.text(16, (self.y0 + self.y1) / 2, self.ylabel, anchor="middle",
                   size=12, rotate=-90)
        if self.title:
            c.text((self.x0 + self.x1) / 2, 18, self.title, anchor="middle",
                   size=14)

    def _log_ticks(self):
        lo, hi = self.ylim
        decades = range(int(np.ceil(lo)), int(np.floor(hi)) + 1)
        ticks = [(float(d), f"1e{d:d}") for d in decades]
        if len(ticks) >= 2:
            return ticks
        raw = np.linspace(lo, hi, 4)
        return [(v, format(10.0 ** v, ".2g")) for v in raw]


def render_outlier_map(spec, width=660, height=480):
    """Score distance vs residual distance; one circle per sample.

    Point area grows with the sample's share of flagged cells and the
    fill encodes the green/orange/red imputation response.  Cutoffs are
    dashed.
    """
    pal = spec.palette
    xs = [p["x"] for p in spec.points]
    ys = [p["y"] for p in spec.points]
    c_sd, c_rd = spec.cutoffs["x"], spec.cutoffs["y"]
    xmax = max([c_sd] + xs + [1e-12]) * 1.08
    ymax = max([c_rd] + ys + [1e-12]) * 1.08
    canvas = _Canvas(width, height)
    ax = _Axes(canvas, (0.0, xmax), (0.0, ymax),
               xlabel="score distance", ylabel="residual distance",
               title="Enhanced outlier map")
    ax.frame()
    canvas.line(ax.x(c_sd), ax.y(0), ax.x(c_sd), ax.y(ymax),
                stroke=_GRID, dash="6,4")
    canvas.line(ax.x(0), ax.y(c_rd), ax.x(xmax), ax.y(c_rd),
                stroke=_GRID, dash="6,4")
    for p in spec.points:
        canvas.circle(ax.x(p["x"]), ax.y(p["y"]), p["size"],
                      fill=pal[p["color"]], stroke="#333333", width=0.8)
    for p in spec.points:
        if p["x"] > c_sd or p["y"] > c_rd:
            canvas.text(ax.x(p["x"]) + p["size"] + 2,
                        ax.y(p["y"]) - p["size"] - 2, str(p["index"] + 1),
                        size=10)
    return canvas.render()


def render_rd_reduction(spec, width=720, height=480):
    """Ranked residual distances with their imputed counterparts.

    Filled dot: RD.  Open dot: imputed RD.  The connecting segment keeps
    the sample's outlier-map color; the y axis is logarithmic.
    """
    pal = spec.palette
    c_rd = spec.cutoffs["rd"]
    vals = [v for p in spec.points for v in (p["rd"], p["rd_imp"])]
    if c_rd > 0:
        vals.append(c_rd)
    lo, hi = min(vals), max(vals)
    lo, hi = lo / 1.6, hi * 1.6
    n = len(spec.points)
    canvas = _Canvas(width, height)
    xt = sorted({int(round(v)) for v in np.linspace(1, n, min(n, 6))})
    ax = _Axes(canvas, (0.0, n + 1.0), (lo, hi), ylog=True,
               xlabel="samples ordered by residual distance",
               ylabel="residual distance (log scale)",
               title="Residual distance reduction")
    ax.frame(xticks=[(float(v), str(v)) for v in xt])
    if c_rd > 0:
        canvas.line(ax.x(0), ax.y(c_rd), ax.x(n + 1.0), ax.y(c_rd),
                    stroke=_GRID, dash="6,4")
    for p in spec.points:
        canvas.line(ax.x(p["x"]), ax.y(p["rd"]), ax.x(p["x"]),
                    ax.y(p["rd_imp"]), stroke=pal[p["segment"]], width=1.3)
    for p in spec.points:
        canvas.circle(ax.x(p["x"]), ax.y(p["rd"]), 3.4,
                      fill=pal[p["rd_color"]])
        canvas.circle(ax.x(p["x"]), ax.y(p["rd_imp"]), 3.4, fill="#FFFFFF",
                      stroke=pal[p["imp_color"]], width=1.5)
    return canvas.render()


def render_residual_map(grid, width=940, height=520):
    """Raster of standardized residual colors; one rect per grid cell."""
    n, m = grid.values.shape
    left, top, right, bottom = 64, 34, 18, 46
    cw = min(18.0, max(1.2, (width - left - right) / m))
    ch = min(18.0, max(2.5, (height - top - bottom) / n))
    w = left + right + cw * m
    h = top + bottom + ch * n
    canvas = _Canvas(w, h)
    title = "Standardized residual map"
    meta = grid.meta or {}
    if grid.kind == "sample":
        title += f" (sample {int(meta.get('sample', 0)) + 1})"
        ylab, xlab = "mode-2 index", "mode-3 index"
        row_names = [str(r + 1) for r in range(n)]
    else:
        ylab = "sample"
        block = int(meta.get("col_block", 1))
        xlab = "matricized column" if block == 1 else \
            f"matricized column block (width {block})"
        row_names = [str(r + 1) for r in meta.get("rows", range(n))]
    for r in range(n):
        for c in range(m):
            canvas.rect(left + c * cw, top + r * ch, cw, ch,
                        fill=grid.colors[r][c])
    step = max(1, int(np.ceil(n / 25)))
    for r in range(0, n, step):
        canvas.text(left - 6, top + (r + 0.5) * ch + 3.5, row_names[r],
                    anchor="end", size=9)
    for c in np.linspace(0, m - 1, min(m, 8)):
        c = int(round(c))
        canvas.text(left + (c + 0.5) * cw, top + n * ch + 14, str(c + 1),
                    anchor="middle", size=9)
    canvas.text((left + w - right) / 2, 18, title, anchor="middle", size=14)
    canvas.text((left + w - right) / 2, h - 10, xlab, anchor="middle",
                size=12)
    canvas.text(16, top + n * ch / 2, ylab, anchor="middle", size=12,
                rotate=-90)
    return canvas.render()


def render_boxplot(groups, ylabel="scaled MSE", title="", width=640,
                   height=460):
    """Tukey boxplots, one per (label, values) pair; one rect per box."""
    if not groups:
        raise ValueError("no groups to plot")
    allv = [v for _, vals in groups for v in vals]
    if not allv:
        raise ValueError("no values to plot")
    lo, hi = _pad_range(min(allv), max(allv), 0.08)
    canvas = _Canvas(width, height)
    g = len(groups)
    ax = _Axes(canvas, (0.0, float(g)), (lo, hi), ylabel=ylabel, title=title)
    ax.frame(xticks=[])
    for idx, (label, vals) in enumerate(groups):
        xs = idx + 0.5
        v = np.asarray(sorted(vals), dtype=float)
        q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0])
        iqr = q3 - q1
        inlier = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
        wlo, whi = inlier[0], inlier[-1]
        half = 0.27
        canvas.line(ax.x(xs), ax.y(wlo), ax.x(xs), ax.y(q1))
        canvas.line(ax.x(xs), ax.y(q3), ax.x(xs), ax.y(whi))
        canvas.line(ax.x(xs - half / 2), ax.y(wlo), ax.x(xs + half / 2),
                    ax.y(wlo))
        canvas.line(ax.x(xs - half / 2), ax.y(whi), ax.x(xs + half / 2),
                    ax.y(whi))
        canvas.rect(ax.x(xs - half), ax.y(q3), ax.x(xs + half) - ax.x(xs - half),
                    ax.y(q1) - ax.y(q3), fill="#9ECAE1", stroke="#333333")
        canvas.line(ax.x(xs - half), ax.y(med), ax.x(xs + half), ax.y(med),
                    stroke="#111111", width=1.6)
        for f in v[(v < q1 - 1.5 * iqr) | (v > q3 + 1.5 * iqr)]:
            canvas.circle(ax.x(xs), ax.y(f), 2.6, fill="none",
                          stroke="#333333", width=1.0)
        canvas.text(ax.x(xs), canvas.height - 28, label, anchor="middle",
                    size=12)
    return canvas.render()
