"""Per-sample and per-cell fit diagnostics, plus plot-ready map builders.

Everything here is a pure function of a finished robust fit. The plot
builders return renderer-agnostic descriptions (point lists, raster grids)
that the CLI turns into SVG; they are also JSON-serializable for other
front ends.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .macro import MacroResult
from .robust import _mscale_columns, chi2_quantile, fastmcd, gauss_quantile, unimcd
from .tensor import Tensor3, fold_mode1, unfold_mode1

GREEN = "green"
ORANGE = "orange"
RED = "red"

# raster palette (hex): regular cells, positive ramp, negative ramp, missing
YELLOW = "#FFE45C"
POS_LO = "#FDB863"
POS_HI = "#B2182B"
NEG_LO = "#C2A5CF"
NEG_HI = "#053061"
WHITE = "#FFFFFF"

PALETTE = {
    "regular": YELLOW,
    "pos_low": POS_LO,
    "pos_high": POS_HI,
    "neg_low": NEG_LO,
    "neg_high": NEG_HI,
    "missing": WHITE,
    "green": "#2CA02C",
    "orange": "#FF7F0E",
    "red": "#D62728",
}

# marker radius for the outlier map: area grows affinely with poc
_POINT_R_MIN = 3.0
_POINT_AREA_GAIN = 24.0


@dataclass(frozen=True)
class FitDiagnostics:
    """Row-level distances and cell-level standardized residuals."""

    rd: np.ndarray
    rd_imp: np.ndarray
    sd: np.ndarray
    poc: np.ndarray
    color: tuple
    c_rd: float
    c_sd: float
    c_r: float
    sigma_jk: np.ndarray
    std_residuals: Tensor3


@dataclass(frozen=True)
class RasterGrid:
    kind: str
    values: np.ndarray
    colors: tuple
    c_r: float
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        grid = [[None if not np.isfinite(v) else float(v) for v in row]
                for row in self.values]
        return json.dumps({
            "kind": self.kind,
            "grid": grid,
            "colors": [list(row) for row in self.colors],
            "cutoffs": {"c_r": self.c_r},
            "palette": PALETTE,
            "meta": self.meta,
        }, sort_keys=True)


@dataclass(frozen=True)
class PlotSpec:
    kind: str
    points: tuple
    cutoffs: dict
    palette: dict = field(default_factory=lambda: dict(PALETTE))
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "points": list(self.points),
            "cutoffs": self.cutoffs,
            "palette": self.palette,
            "meta": self.meta,
        }, sort_keys=True)


def classify_rows(rd, rd_imp, c_rd):
    """Green when rd is below the cutoff, otherwise orange if imputing the
    flagged cells brings the distance back under it, else red."""
    rd = np.asarray(rd, float)
    rd_imp = np.asarray(rd_imp, float)
    out = []
    for d, di in zip(rd, rd_imp):
        if d <= c_rd:
            out.append(GREEN)
        elif di <= c_rd:
            out.append(ORANGE)
        else:
            out.append(RED)
    return tuple(out)


def _row_norms(values, fitted):
    return np.linalg.norm(np.asarray(values, float) - fitted, axis=1)


def compute_diagnostics(res: MacroResult, x: Tensor3, p_cell: float = 0.998,
                        p_sd: float = 0.998, seed: int = 0) -> FitDiagnostics:
    """Distances, cell flags and colors for every sample of a robust fit.

    rd uses the data with only its missing cells imputed; rd_imp uses the
    fully imputed data (flagged cells replaced as well). Score distances
    come from a reweighted covariance of the scores with the same subset
    size h as the fit.
    """
    if x.dims != res.x_na.dims:
        raise ValueError("tensor does not match the fit result")
    i_dim, j_dim, k_dim = x.dims
    x1, mask = unfold_mode1(x)
    fit1 = res.model.fitted_unfolded()

    r1, rmask = unfold_mode1(res.residuals)
    _, sigma = _mscale_columns(np.where(rmask, r1, np.nan))
    # an iterative fit never lands on exact zeros; scales and distances
    # within 1e-7 of the data RMS are float noise and count as zero
    obs = x1[mask]
    tol = 1e-7 * float(np.sqrt(np.mean(obs ** 2))) if obs.size else 0.0
    ok = sigma > tol
    std = np.zeros_like(r1)
    np.divide(r1, sigma, out=std, where=ok[None, :] & rmask)

    c_r = float(np.sqrt(chi2_quantile(1, p_cell)))
    flagged = rmask & ok[None, :] & (np.abs(std) > c_r)
    poc = flagged.sum(axis=1) / float(j_dim * k_dim)

    xna1, _ = unfold_mode1(res.x_na)
    xfull1, _ = unfold_mode1(res.x_full)
    rd = _row_norms(xna1, fit1)
    rd_imp = _row_norms(xfull1, fit1)
    rd_floor = tol * np.sqrt(j_dim * k_dim)
    rd[rd <= rd_floor] = 0.0
    rd_imp[rd_imp <= rd_floor] = 0.0

    cov = fastmcd(res.model.a, h=res.h, seed=seed)
    centered = res.model.a - cov.center
    try:
        sol = np.linalg.solve(cov.scatter, centered.T)
    except np.linalg.LinAlgError:
        raise ValueError("degenerate score scatter, score distances undefined")
    sd = np.sqrt(np.maximum(np.sum(centered.T * sol, axis=0), 0.0))

    ls = unimcd(rd ** (2.0 / 3.0), h=res.h)
    c_rd = float(max(ls.location + ls.scale * gauss_quantile(0.99), 0.0) ** 1.5)
    c_sd = float(np.sqrt(chi2_quantile(res.model.rank, p_sd)))

    color = classify_rows(rd, rd_imp, c_rd)
    sigma_grid = sigma.reshape(k_dim, j_dim).T
    std_t = fold_mode1(std, x.dims, rmask)
    for arr in (rd, rd_imp, sd, poc, sigma_grid):
        arr.setflags(write=False)
    return FitDiagnostics(rd=rd, rd_imp=rd_imp, sd=sd, poc=poc, color=color,
                          c_rd=c_rd, c_sd=c_sd, c_r=c_r,
                          sigma_jk=sigma_grid, std_residuals=std_t)


def _hex_to_rgb(h):
    return tuple(int(h[i:i + 2], 16) for i in (1, 3, 5))


def _lerp_hex(lo, hi, t):
    a = _hex_to_rgb(lo)
    b = _hex_to_rgb(hi)
    mixed = tuple(int(round(x + (y - x) * t)) for x, y in zip(a, b))
    return "#%02X%02X%02X" % mixed


def color_for_value(v, c_r):
    """Map one standardized residual to its raster color."""
    if not np.isfinite(v):
        return WHITE
    if abs(v) <= c_r:
        return YELLOW
    t = min((abs(v) - c_r) / (3.0 * c_r), 1.0)
    if v > 0:
        return _lerp_hex(POS_LO, POS_HI, t)
    return _lerp_hex(NEG_LO, NEG_HI, t)


def residual_map(diag: FitDiagnostics, rows=None, col_block: int = 1,
                 sample=None) -> RasterGrid:
    """Raster of standardized residuals.

    Default layout is the mode-1 matricization (samples x response cells)
    with optional aggregation of `col_block` consecutive columns; passing
    `sample` instead yields that sample's J x K map. Aggregated blocks take
    the mean standardized residual, ignoring missing cells; an all-missing
    block stays white.
    """
    if col_block < 1:
        raise ValueError("col_block must be >= 1")
    t = diag.std_residuals
    i_dim, j_dim, k_dim = t.dims
    std1, mask1 = unfold_mode1(t)
    vals = np.where(mask1, std1, np.nan)

    if sample is not None:
        i = int(sample)
        if not 0 <= i < i_dim:
            raise ValueError("sample index out of range")
        grid = vals[i].reshape(k_dim, j_dim).T
        meta = {"sample": i, "layout": "jk"}
    else:
        if rows is None:
            sel = np.arange(i_dim)
        else:
            sel = np.atleast_1d(np.asarray(rows, int))
        if sel.size == 0:
            raise ValueError("empty row selection")
        if sel.min() < 0 or sel.max() >= i_dim:
            raise ValueError("row selection out of range")
        grid = vals[sel]
        if col_block > 1:
            q = grid.shape[1]
            nb = -(-q // col_block)
            pad = np.full((grid.shape[0], nb * col_block - q), np.nan)
            blocks = np.hstack([grid, pad]).reshape(grid.shape[0], nb, col_block)
            ok = np.isfinite(blocks)
            n = ok.sum(axis=2)
            total = np.where(ok, blocks, 0.0).sum(axis=2)
            grid = np.where(n > 0, total / np.maximum(n, 1), np.nan)
        meta = {"rows": [int(r) for r in sel], "col_block": int(col_block),
                "layout": "matricized"}

    colors = tuple(tuple(color_for_value(v, diag.c_r) for v in row)
                   for row in grid)
    grid = np.asarray(grid, float)
    grid.setflags(write=False)
    return RasterGrid(kind="residual_map", values=grid, colors=colors,
                      c_r=diag.c_r, meta=meta)


def point_radius(poc) -> float:
    # area affine in poc so sizes stay strictly monotone
    return float(_POINT_R_MIN * np.sqrt(1.0 + _POINT_AREA_GAIN * float(poc)))


def outlier_map(diag: FitDiagnostics) -> PlotSpec:
    """Score distance vs residual distance, sized by poc, colored by class."""
    points = tuple(
        {"index": i, "x": float(diag.sd[i]), "y": float(diag.rd[i]),
         "size": point_radius(diag.poc[i]), "poc": float(diag.poc[i]),
         "color": diag.color[i]}
        for i in range(diag.rd.size)
    )
    return PlotSpec(kind="outlier_map", points=points,
                    cutoffs={"x": diag.c_sd, "y": diag.c_rd},
                    meta={"x_label": "score distance",
                          "y_label": "residual distance"})


def rd_reduction_plot(diag: FitDiagnostics) -> PlotSpec:
    """Per-sample drop from rd to rd_imp on a log scale, sorted by rd.

    Zero distances are floored at 1e-12 of the largest rd (absolute 1e-12
    when every rd is zero) so perfect fits stay plottable.
    """
    n = diag.rd.size
    order = np.lexsort((np.arange(n), diag.rd))
    floor = 1e-12 * float(diag.rd.max()) if diag.rd.max() > 0 else 1e-12
    points = []
    for pos, i in enumerate(order):
        i = int(i)
        rd = max(float(diag.rd[i]), floor)
        imp = max(float(diag.rd_imp[i]), floor)
        points.append({
            "x": pos + 1, "index": i, "rd": rd, "rd_imp": imp,
            "rd_color": RED if diag.rd[i] > diag.c_rd else GREEN,
            "imp_color": RED if diag.rd_imp[i] > diag.c_rd else GREEN,
            "segment": diag.color[i],
        })
    return PlotSpec(kind="rd_reduction", points=tuple(points),
                    cutoffs={"rd": diag.c_rd},
                    meta={"y_scale": "log", "floor": floor,
                          "y_label": "residual distance"})
