"""Cellwise outlier detection on a matrix with missing entries.

Each column is robustly standardized, then every cell is predicted from up
to ``max_neighbors`` strongly correlated columns (bounded-influence
correlations, per-neighbor robust slopes, weighted-median combination).
Cells whose standardized prediction residual is extreme are flagged, rows
whose overall residual pattern is extreme are flagged, and an imputed copy
of the input is produced with missing and flagged cells replaced by the
destandardized predictions.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .robust import _mscale_columns, chi2_quantile, mscale

__all__ = ["CellFlags", "detect_cells"]

# bounded-influence transform: identity on [-b, b], tanh rolloff on (b, c],
# zero beyond c; q1 fixed by continuity at b
_WRAP_B = 1.5
_WRAP_C = 4.0
_WRAP_Q2 = 0.8622731
_WRAP_Q1 = _WRAP_B / np.tanh(_WRAP_Q2 * (_WRAP_C - _WRAP_B))

_MIN_ABS_CORR = 0.5

# standardized values are O(1), so residual scales and residuals below these
# levels are float dust from exact linear relations, not real variation
_EXACT_SCALE = 1e-9
_EXACT_RESID = 1e-6


def _wrap(z):
    az = np.abs(z)
    with np.errstate(invalid="ignore"):
        rolled = np.sign(z) * _WRAP_Q1 * np.tanh(_WRAP_Q2 * (_WRAP_C - az))
        out = np.where(az <= _WRAP_B, z, rolled)
        return np.where(az > _WRAP_C, 0.0, out)


def _weighted_median_last(values, weights):
    """Weighted median along the last axis.

    Zero-weight entries are ignored.  When the cumulative weight hits half
    the total exactly, the midpoint of the two straddling values is
    returned.  Cells whose total weight is zero get 0.0.
    """
    v = np.where(weights > 0, values, np.inf)
    order = np.argsort(v, axis=-1, kind="stable")
    v = np.take_along_axis(v, order, -1)
    w = np.take_along_axis(weights, order, -1)
    cw = np.cumsum(w, axis=-1)
    total = cw[..., -1]
    half = 0.5 * total
    idx = np.argmax(cw >= half[..., None], axis=-1)
    sel = np.take_along_axis(v, idx[..., None], -1)[..., 0]
    at = np.take_along_axis(cw, idx[..., None], -1)[..., 0]
    last = v.shape[-1] - 1
    nxt = np.take_along_axis(v, np.minimum(idx + 1, last)[..., None], -1)[..., 0]
    tie = (at == half) & (idx < last) & np.isfinite(nxt)
    out = np.where(tie, 0.5 * (sel + nxt), sel)
    return np.where(total > 0, out, 0.0)


def _find_neighbors(w_filled, obs_f, cols, pool, co_min, max_neighbors):
    """Top correlated candidate columns for each column in `cols`.

    w_filled holds wrapped standardized values with 0 at missing cells and
    obs_f the observation indicator, so pairwise-complete Pearson moments
    reduce to six matrix products per block.  Pairs need at least co_min
    co-observed rows, positive variances on both sides, and |corr| >= 0.5.
    Returns (neighbor index matrix with -1 padding, |corr| weight matrix),
    both over the full column count.
    """
    n, p = w_filled.shape
    q = pool.size
    k = min(max_neighbors, max(q - 1, 0))
    nb_idx = np.full((p, max_neighbors), -1, dtype=np.int64)
    nb_w = np.zeros((p, max_neighbors))
    if k == 0 or cols.size == 0:
        return nb_idx, nb_w
    a_pool = w_filled[:, pool]
    m_pool = obs_f[:, pool]
    a2_pool = a_pool * a_pool
    block = max(1, 4_000_000 // q)
    for lo in range(0, cols.size, block):
        cb = cols[lo:lo + block]
        ab = w_filled[:, cb]
        mb = obs_f[:, cb]
        nco = mb.T @ m_pool
        sx = ab.T @ m_pool
        sy = mb.T @ a_pool
        pxy = ab.T @ a_pool
        qx = (ab * ab).T @ m_pool
        qy = mb.T @ a2_pool
        with np.errstate(all="ignore"):
            cov = pxy - sx * sy / nco
            vx = qx - sx * sx / nco
            vy = qy - sy * sy / nco
            corr = cov / np.sqrt(vx * vy)
        bad = (nco < co_min) | (vx <= 0) | (vy <= 0) | ~np.isfinite(corr)
        bad |= pool[None, :] == cb[:, None]
        absc = np.abs(corr)
        absc[bad | (absc < _MIN_ABS_CORR)] = 0.0
        top = np.argpartition(-absc, k - 1, axis=1)[:, :k]
        tw = np.take_along_axis(absc, top, axis=1)
        keep = tw > 0
        nb_idx[cb, :k] = np.where(keep, pool[top], -1)
        nb_w[cb, :k] = np.where(keep, tw, 0.0)
    return nb_idx, nb_w


@dataclass(frozen=True)
class CellFlags:
    """Detector output over an n x p matrix.

    cell_outliers
        0-based (row, col) pairs of observed cells flagged as deviating.
    row_flags
        0-based indices of rows with an extreme overall residual pattern.
    imputed
        Copy of the input with missing and flagged cells replaced by
        predictions; observed unflagged cells are untouched and no cell is
        left missing.
    predicted
        Destandardized predictions for every cell.
    """

    cell_outliers: frozenset
    row_flags: frozenset
    imputed: np.ndarray
    predicted: np.ndarray

    def __post_init__(self):
        for name in ("imputed", "predicted"):
            arr = np.asarray(getattr(self, name), float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.imputed.shape != self.predicted.shape:
            raise ValueError("imputed and predicted shapes differ")
        if np.isnan(self.imputed).any():
            raise ValueError("imputed matrix holds missing cells")

    def cell_mask(self):
        """Boolean matrix with True at flagged cells."""
        out = np.zeros(self.imputed.shape, dtype=bool)
        if self.cell_outliers:
            rows, cols = zip(*self.cell_outliers)
            out[list(rows), list(cols)] = True
        return out


def detect_cells(values, mask=None, cutoff_p=0.99, max_neighbors=10, seed=0,
                 max_pool=8000):
    """Flag deviating cells of a matrix and impute them.

    values
        n x p matrix; NaN entries count as missing.
    mask
        Optional boolean n x p matrix, True = observed.  Combined with the
        NaN pattern of `values`.
    cutoff_p
        Probability defining the flagging cutoff sqrt of the chi-square(1)
        quantile; also used for the univariate prefilter.
    max_neighbors
        Cap on predictor columns per column.
    seed
        Drives the column subsample drawn when p exceeds max_pool.

    Returns a :class:`CellFlags`.
    """
    x = np.asarray(values, float)
    if x.ndim != 2:
        raise ValueError("values must be a 2-D matrix")
    n, p = x.shape
    if n < 4:
        raise ValueError("need at least 4 rows")
    if not 0.0 < cutoff_p < 1.0:
        raise ValueError("cutoff_p must lie in (0, 1)")
    if max_neighbors < 1:
        raise ValueError("max_neighbors must be at least 1")
    obs = np.isfinite(x)
    if mask is not None:
        mask = np.asarray(mask, bool)
        if mask.shape != x.shape:
            raise ValueError("mask shape does not match values")
        obs &= mask
    c_u = float(np.sqrt(chi2_quantile(1, cutoff_p)))

    xn = np.where(obs, x, np.nan)
    med, s_col = _mscale_columns(xn)
    if np.isnan(med).any():
        # columns with no observed cells fall back to the global center
        fallback = float(np.median(x[obs])) if obs.any() else 0.0
        med = np.where(np.isfinite(med), med, fallback)
    with np.errstate(all="ignore"):
        z = (xn - med) / s_col
    z = np.where(s_col > 0, z, np.where(obs, 0.0, np.nan))

    # columns too sparse for neighbor regression are handled univariately
    co_min = max(4.0, n / 2.0)
    uni = obs.sum(axis=0) < co_min
    norm_cols = np.flatnonzero(~uni)

    # prefiltered copy: clearly deviating cells do not feed predictions
    w = np.where(np.abs(z) > c_u, np.nan, z)
    w_obs = np.isfinite(w)
    w_filled = np.where(w_obs, _wrap(w), 0.0)
    obs_f = w_obs.astype(float)

    rng = np.random.default_rng(seed)
    if norm_cols.size > max_pool:
        pool = np.sort(rng.choice(norm_cols, size=max_pool, replace=False))
    else:
        pool = norm_cols
    nb_idx, nb_w = _find_neighbors(w_filled, obs_f, norm_cols, pool, co_min,
                                   max_neighbors)

    # per-neighbor slopes: median over rows of the ratio of prefiltered
    # standardized values, then weighted-median combination of predictions
    gather = np.where(nb_idx >= 0, nb_idx, 0)
    zn = w[:, gather]
    zn[:, nb_idx < 0] = np.nan
    with np.errstate(all="ignore"):
        ratios = w[:, :, None] / zn
    ratios[~np.isfinite(ratios)] = np.nan
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        slope = np.nanmedian(ratios, axis=0)
    pred_z = slope[None, :, :] * zn
    wt = np.broadcast_to(nb_w[None, :, :], pred_z.shape).copy()
    wt[~np.isfinite(pred_z)] = 0.0
    pred_z = np.where(wt > 0, pred_z, 0.0)
    zhat = _weighted_median_last(pred_z, wt)
    has_pred = wt.sum(axis=-1) > 0
    zhat[:, uni] = 0.0
    has_pred[:, uni] = False

    # cells with a neighbor prediction are judged by the standardized
    # prediction residual; cells without one fall back to their own z
    resid = z - zhat
    _, s_res = _mscale_columns(np.where(obs & has_pred, resid, np.nan))
    s_res = np.where(s_res > _EXACT_SCALE, s_res, 0.0)
    with np.errstate(all="ignore"):
        d_pred = resid / s_res
    d_pred = np.where(s_res > 0, d_pred,
                      np.where(np.abs(resid) > _EXACT_RESID, np.inf, 0.0))
    d = np.where(has_pred, d_pred, z)
    d = np.where(obs, d, np.nan)

    with np.errstate(invalid="ignore"):
        flag = obs & (np.abs(d) > c_u)

    # row rule: standardized mean of the chi-square(1) CDF of d^2, upper tail
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cdf = stats.chi2.cdf(np.where(obs, d * d, np.nan), 1.0)
        t_row = np.nanmean(cdf, axis=1)
    valid = np.isfinite(t_row)
    row_flags = np.zeros(n, dtype=bool)
    if valid.sum() >= 2:
        t_med = float(np.median(t_row[valid]))
        t_scale = mscale(t_row[valid])
        with np.errstate(all="ignore"):
            t_std = (t_row - t_med) / t_scale
        if t_scale == 0.0:
            t_std = np.where(t_row > t_med, np.inf, 0.0)
        row_flags = valid & (t_std > c_u)

    pred_full = med + s_col * zhat
    keep = obs & ~flag
    imputed = np.where(keep, x, pred_full)

    rows_i, cols_i = np.nonzero(flag)
    cells = frozenset((int(r), int(c)) for r, c in zip(rows_i, cols_i))
    return CellFlags(
        cell_outliers=cells,
        row_flags=frozenset(int(r) for r in np.flatnonzero(row_flags)),
        imputed=imputed,
        predicted=pred_full,
    )
