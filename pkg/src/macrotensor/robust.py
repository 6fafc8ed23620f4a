"""Robust univariate and multivariate estimators.

Everything here is resistant to a large fraction of aberrant values:
an exact univariate minimum-covariance-determinant location/scale, a
50%-breakdown M-scale, a multivariate FastMCD with C-step refinement,
and projection-based outlyingness of rows.  All randomness flows from a
caller-supplied 64-bit seed through numpy's PCG64 generator.
"""

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats as _stats

__all__ = [
    "LocScale",
    "RobustCov",
    "chi2_quantile",
    "gauss_quantile",
    "unimcd",
    "mscale",
    "fastmcd",
    "proj_outlyingness",
]


@dataclass(frozen=True)
class LocScale:
    location: float
    scale: float


@dataclass(frozen=True)
class RobustCov:
    center: np.ndarray
    scatter: np.ndarray
    support: np.ndarray  # sorted indices of the retained h-subset


def chi2_quantile(df, p):
    """Quantile of the chi-square distribution with ``df`` degrees of freedom.

    ``df`` must be a positive integer and ``p`` strictly inside (0, 1).
    """
    if not isinstance(df, (int, np.integer)) or isinstance(df, bool) or df < 1:
        raise ValueError("df must be a positive integer")
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie strictly inside (0, 1)")
    return float(_stats.chi2.ppf(p, int(df)))


def gauss_quantile(p):
    """Standard normal quantile; ``p`` strictly inside (0, 1)."""
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie strictly inside (0, 1)")
    return float(_stats.norm.ppf(p))


def _consistency(alpha, p):
    """Variance inflation factor making an alpha-coverage MCD scatter
    consistent at the Gaussian model: alpha / P(chi2_{p+2} <= q_{p,alpha})."""
    if alpha >= 1.0:
        return 1.0
    q = float(_stats.chi2.ppf(alpha, p))
    return alpha / float(_stats.chi2.cdf(q, p + 2))


def _check_subset_size(n, h):
    if n < 2:
        raise ValueError("need at least 2 points")
    if not (math.ceil(n / 2) < h <= n):
        raise ValueError("h must satisfy ceil(n/2) < h <= n, got h=%d, n=%d" % (h, n))


def _mcd_windows(cols, h):
    """Exact univariate MCD on each column of ``cols`` (n x m), all observed.

    The optimal h-subset of a univariate sample is a window of consecutive
    order statistics, so only n-h+1 candidates exist per column.  Columns
    are median-centered before the cumulative sums to keep the variance
    difference numerically safe for large offsets.  Ties take the smallest
    window start.  Returns (location, raw_sd) arrays of length m.
    """
    s = np.sort(cols, axis=0)
    n, m = s.shape
    med = s[(n - 1) // 2 : (n + 2) // 2].mean(axis=0)
    sc = s - med
    zero = np.zeros((1, m))
    c1 = np.concatenate([zero, np.cumsum(sc, axis=0)])
    c2 = np.concatenate([zero, np.cumsum(sc * sc, axis=0)])
    sums = c1[h:] - c1[:-h]
    sqs = c2[h:] - c2[:-h]
    var = np.maximum(sqs - sums * sums / h, 0.0) / (h - 1)
    best = var.argmin(axis=0)  # first minimum: smallest starting index
    pick = np.arange(m)
    loc = sums[best, pick] / h + med
    raw_sd = np.sqrt(var[best, pick])
    return loc, raw_sd


def unimcd(x, h):
    """Exact univariate MCD location and consistency-corrected scale.

    Scans all windows of ``h`` consecutive order statistics, keeps the one
    of smallest sample variance (ties: smallest starting index), and returns
    its mean together with its standard deviation multiplied by the Gaussian
    consistency factor for coverage ``h/n``.  A sample where the best window
    is constant yields scale 0.
    """
    x = np.asarray(x, float).ravel()
    if not np.isfinite(x).all():
        raise ValueError("input must be finite (drop missing values first)")
    n = x.size
    _check_subset_size(n, h)
    loc, raw_sd = _mcd_windows(x[:, None], h)
    factor = math.sqrt(_consistency(h / n, 1))
    return LocScale(float(loc[0]), float(raw_sd[0]) * factor)


_TUKEY_C = 1.5476
_MAD_FACTOR = 1.4826022185056018  # 1 / gauss_quantile(0.75)


def _rho(u, c=_TUKEY_C):
    # Tukey biweight rho, clamped to its plateau c^2/6 beyond |u| = c
    a = np.minimum(np.abs(u), c)
    a2 = a * a
    c2 = c * c
    return a2 / 2.0 - a2 * a2 / (2.0 * c2) + a2 * a2 * a2 / (6.0 * c2 * c2)


def mscale(x, max_iter=100, tol=1e-10):
    """50%-breakdown M-scale of a sample around its median.

    Solves mean(rho(d / s)) = rho(inf)/2 for s, with d the deviations from
    the sample median and rho the Tukey biweight at tuning 1.5476 (which
    makes the estimate Fisher-consistent at the Gaussian).  Fixed-point
    iteration starts from the consistent MAD.  Returns 0.0 when more than
    half the values equal the median (MAD = 0).
    """
    x = np.asarray(x, float).ravel()
    if x.size < 2 or not np.isfinite(x).all():
        raise ValueError("need at least 2 finite values")
    d = x - np.median(x)
    s = _MAD_FACTOR * np.median(np.abs(d))
    if s == 0.0:
        return 0.0
    b = _TUKEY_C * _TUKEY_C / 6.0 / 2.0
    for _ in range(max_iter):
        s_new = s * math.sqrt(float(np.mean(_rho(d / s))) / b)
        if abs(s_new - s) <= tol * s:
            return float(s_new)
        s = s_new
    return float(s)


def _mscale_columns(a, max_iter=100, tol=1e-10):
    """Column-wise :func:`mscale` for a matrix with NaN marking missing cells.

    Columns with fewer than 2 observed values, or with MAD 0, get scale 0.
    Returns (median, scale) arrays; medians of empty columns are NaN.
    """
    a = np.asarray(a, float)
    n_obs = np.sum(np.isfinite(a), axis=0)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(np.where(np.isfinite(a), a, np.nan), axis=0)
        med_filled = np.where(np.isfinite(med), med, 0.0)
        d = a - med_filled
        s = _MAD_FACTOR * np.nanmedian(np.abs(d), axis=0)
    s = np.where(np.isfinite(s), s, 0.0)
    s[n_obs < 2] = 0.0
    b = _TUKEY_C * _TUKEY_C / 6.0 / 2.0
    active = s > 0
    for _ in range(max_iter):
        if not active.any():
            break
        sa = s[:]
        with np.errstate(all="ignore"):
            u = d[:, active] / sa[active]
            mean_rho = np.nanmean(_rho(u), axis=0)
        s_new = sa[active] * np.sqrt(mean_rho / b)
        done = np.abs(s_new - sa[active]) <= tol * sa[active]
        s[active] = s_new
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return med, s


def _subset_stats(x, idx):
    sub = x[idx]
    mean = sub.mean(axis=0)
    diff = sub - mean
    cov = diff.T @ diff / (len(idx) - 1)
    return mean, cov


def _logdet(cov):
    sign, ld = np.linalg.slogdet(cov)
    if sign <= 0 or not np.isfinite(ld):
        return None
    return ld


def _cstep(x, mean, cov, h):
    diff = x - mean
    try:
        sol = np.linalg.solve(cov, diff.T)
    except np.linalg.LinAlgError:
        return None
    d2 = np.einsum("ij,ji->i", diff, sol)
    order = np.argsort(d2, kind="stable")[:h]
    subset = np.sort(order)
    mean, cov = _subset_stats(x, subset)
    return mean, cov, subset


def fastmcd(data, h, seed=0, n_starts=500, n_csteps=2, n_finalists=10):
    """FastMCD: robust multivariate location and scatter.

    Runs ``n_csteps`` concentration steps from elemental (F+1)-point starts
    (all of them when there are at most ``n_starts`` combinations, otherwise
    ``n_starts`` seeded random draws), refines the ``n_finalists`` best
    candidates until their retained h-subset stops changing, and returns the
    subset of smallest covariance determinant.  The scatter is the subset
    covariance times the Gaussian consistency factor for coverage ``h/n``.
    The determinant objective is checked to be non-increasing across every
    concentration step.
    """
    x = np.asarray(data, float)
    if x.ndim != 2:
        raise ValueError("data must be 2-d (n points x F coordinates)")
    if not np.isfinite(x).all():
        raise ValueError("data must be finite")
    n, p = x.shape
    if n <= 2 * p:
        raise ValueError("need n > 2F points, got n=%d, F=%d" % (n, p))
    _check_subset_size(n, h)
    factor = _consistency(h / n, p)

    if h == n:
        subset = np.arange(n)
        mean, cov = _subset_stats(x, subset)
        return RobustCov(mean, cov * factor, subset)

    rng = np.random.default_rng(seed)
    if math.comb(n, p + 1) <= n_starts:
        starts = [np.array(c) for c in itertools.combinations(range(n), p + 1)]
    else:
        starts = [rng.choice(n, size=p + 1, replace=False) for _ in range(n_starts)]

    candidates = []
    for start_no, idx in enumerate(starts):
        idx = np.sort(idx)
        mean, cov = _subset_stats(x, idx)
        # grow a singular elemental start with extra random points
        while _logdet(cov) is None and len(idx) < n:
            pool = np.setdiff1d(np.arange(n), idx)
            idx = np.sort(np.append(idx, rng.choice(pool)))
            mean, cov = _subset_stats(x, idx)
        if _logdet(cov) is None:
            continue
        state = (mean, cov)
        subset = idx
        dead = False
        for _ in range(n_csteps):
            step = _cstep(x, state[0], state[1], h)
            if step is None:
                dead = True
                break
            state = (step[0], step[1])
            subset = step[2]
        if dead or len(subset) != h:
            continue
        ld = _logdet(state[1])
        if ld is None:
            continue
        candidates.append((ld, start_no, state[0], state[1], subset))

    if not candidates:
        raise ValueError("singular scatter in every start: data too degenerate")

    candidates.sort(key=lambda c: (c[0], c[1]))
    best = None
    for ld, start_no, mean, cov, subset in candidates[:n_finalists]:
        prev_ld = ld
        for _ in range(200):
            step = _cstep(x, mean, cov, h)
            if step is None:
                break
            new_ld = _logdet(step[1])
            if new_ld is None:
                break
            if new_ld > prev_ld + 1e-9 * max(1.0, abs(prev_ld)):
                raise AssertionError("C-step increased the determinant objective")
            same = np.array_equal(step[2], subset)
            mean, cov, subset = step
            prev_ld = new_ld
            if same:
                break
        key = (prev_ld, start_no)
        if best is None or key < best[0]:
            best = (key, mean, cov, subset)

    _, mean, cov, subset = best
    if _logdet(cov) is None:
        raise ValueError("optimal subset has singular scatter: data too degenerate")
    return RobustCov(mean, cov * factor, subset)


def proj_outlyingness(data, h, ndir=250, seed=0, return_info=False):
    """Projection outlyingness of each row of ``data``.

    Projects the n points onto ``ndir`` random directions (normalized
    differences of two distinct random points; zero-length differences are
    redrawn up to a retry bound), robustly standardizes each projection with
    :func:`unimcd` at subset size ``h``, and reports each point's maximum
    absolute standardized projection.  Directions with zero robust scale are
    skipped; if every direction degenerates an error is raised.
    """
    x = np.asarray(data, float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("data must be 2-d with at least 2 rows")
    if not np.isfinite(x).all():
        raise ValueError("data must be finite")
    n = x.shape[0]
    _check_subset_size(n, h)
    rng = np.random.default_rng(seed)

    def draw(count):
        i1 = rng.integers(0, n, count)
        i2 = rng.integers(0, n - 1, count)
        i2 = i2 + (i2 >= i1)
        return x[i1] - x[i2]

    v = draw(ndir)
    nrm = np.linalg.norm(v, axis=1)
    for _ in range(50):
        bad = nrm == 0.0
        if not bad.any():
            break
        v[bad] = draw(int(bad.sum()))
        nrm[bad] = np.linalg.norm(v[bad], axis=1)
    keep = nrm > 0.0
    n_zero_norm = int((~keep).sum())
    if not keep.any():
        raise ValueError("no usable projection direction: all drawn differences are zero")
    v = v[keep] / nrm[keep, None]

    proj = x @ v.T
    loc, raw_sd = _mcd_windows(proj, h)
    scale = raw_sd * math.sqrt(_consistency(h / n, 1))
    ok = scale > 0.0
    if not ok.any():
        raise ValueError("all projection directions have zero robust scale")
    outl = (np.abs(proj[:, ok] - loc[ok]) / scale[ok]).max(axis=1)
    if return_info:
        info = {
            "n_directions": int(ok.sum()),
            "n_zero_scale": int((~ok).sum()),
            "n_zero_norm": n_zero_norm,
        }
        return outl, info
    return outl
