"""Benchmark data generator and evaluation metrics.

Builds rank-2 trilinear arrays with mixture-sampled loadings and
Frobenius-calibrated noise, then contaminates them according to a quartet
of fractions (clean rows, rowwise outliers, cellwise outliers, missing
cells).  Also provides the error metrics used to compare fits: weighted
mean squared error over regular cells, mean squared error over imputed
cells, and principal angles between loading subspaces, plus a scenario
runner that produces one result row per replicate.
"""

import csv
import time
from dataclasses import dataclass

import numpy as np

from .parafac import FitOptions, als_complete, als_incomplete
from .tensor import Tensor3, fold_mode1, khatri_rao

__all__ = [
    "SCENARIOS",
    "ContaminationSpec",
    "GeneratedData",
    "generate",
    "mse_imputed",
    "mse_regular",
    "run_scenario",
    "subspace_angle",
    "summarize_rows",
    "write_rows_csv",
]

# loading mixtures: three equally likely Gaussian components per column
_MIX_B1 = ((-8.0, 0.0, 8.0), (10.0, 12.0, 10.0))
_MIX_B2 = ((25.0, 20.0, 15.0), (4.0, 4.0, 4.0))
_MIX_C1 = ((-8.0, 0.0, 8.0), (10.0, 10.0, 10.0))
_MIX_C2 = ((-15.0, -20.0, -25.0), (6.0, 6.0, 6.0))

# named contamination quartets (clean, rowwise, cellwise, missing)
SCENARIOS = {
    "U": (1.0, 0.0, 0.0, 0.0),
    "R20": (0.8, 0.2, 0.0, 0.0),
    "C10": (0.0, 0.0, 0.1, 0.0),
    "R10C10": (0.0, 0.1, 0.1, 0.0),
    "NA20": (0.0, 0.0, 0.0, 0.2),
    "R10C10NA10": (0.0, 0.1, 0.1, 0.1),
    "R10C10NA20": (0.0, 0.1, 0.1, 0.2),
    "U40R10C10NA10": (0.4, 0.1, 0.1, 0.1),
    "R30": (0.7, 0.3, 0.0, 0.0),
    "U30C20": (0.3, 0.0, 0.2, 0.0),
    "U50R10C10": (0.5, 0.1, 0.1, 0.0),
}

CSV_FIELDS = ["replicate", "scenario", "method", "mse", "b_angle", "c_angle",
              "mse_imp", "seconds"]


@dataclass(frozen=True)
class ContaminationSpec:
    """Contamination quartet plus outlier magnitude and seed.

    rho
        Fraction of rows reserved clean.
    eps_r
        Fraction of rows fully replaced by 3x + 1.
    eps_c
        Fraction of all cells shifted to the column mean plus gamma column
        standard deviations, drawn in the non-reserved, non-rowwise rows.
    nu
        Fraction of all cells set missing, never on a cellwise-shifted cell.
    """

    rho: float
    eps_r: float
    eps_c: float
    nu: float
    gamma: float = 7.0
    seed: int = 0

    def __post_init__(self):
        for name in ("rho", "eps_r", "eps_c", "nu"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.rho + self.eps_r > 1.0 + 1e-12:
            raise ValueError("rho + eps_r must not exceed 1")
        if self.gamma < 0.0:
            raise ValueError("gamma must be nonnegative")


@dataclass(frozen=True)
class GeneratedData:
    """One simulated data set with its ground truth.

    w is the regular-cell indicator: 0 on every cell of a rowwise-outlier
    row, on every shifted cell, and on every missing cell; 1 elsewhere.
    scale2 is the mean squared clean value, the unit used to report scaled
    errors.
    """

    x: Tensor3
    x_clean: Tensor3
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    row_outliers: frozenset
    cell_outliers: frozenset
    na_cells: frozenset
    w: np.ndarray
    scale2: float


def _mixture(rng, n, mix):
    means, variances = mix
    comp = rng.integers(0, 3, size=n)
    mu = np.asarray(means)[comp]
    sd = np.sqrt(np.asarray(variances))[comp]
    return rng.normal(mu, sd)


def _round_count(x):
    return max(0, int(np.floor(x + 0.5)))


def generate(spec, dims=(50, 76, 61), f=2, noise=0.2):
    """Draw one contaminated data set under `spec`.

    The draw order is fixed (scores, loadings, noise, row assignment,
    shifted cells, missing cells) so a seed pins down the entire instance.
    """
    if f != 2:
        raise ValueError("the loading mixtures define a rank-2 generator")
    if not 0.0 < noise < 1.0:
        raise ValueError("noise must lie in (0, 1)")
    i_dim, j_dim, k_dim = dims
    jk = j_dim * k_dim
    n_cells = i_dim * jk
    rng = np.random.default_rng(spec.seed)

    a = rng.normal(size=(i_dim, 2)) * np.sqrt([1.0, 2.0]) + 10.0
    b = np.column_stack([_mixture(rng, j_dim, _MIX_B1),
                         _mixture(rng, j_dim, _MIX_B2)])
    c = np.column_stack([_mixture(rng, k_dim, _MIX_C1),
                         _mixture(rng, k_dim, _MIX_C2)])
    x_pure = 100.0 * (a @ khatri_rao(c, b).T)

    e_tilde = rng.normal(0.0, np.sqrt(10.0), size=(i_dim, jk))
    e = (noise / (1.0 - noise)) * np.linalg.norm(x_pure) \
        * (e_tilde / np.linalg.norm(e_tilde))
    x_clean = x_pure + e

    n_clean = _round_count(spec.rho * i_dim)
    n_row = _round_count(spec.eps_r * i_dim)
    if n_clean + n_row > i_dim:
        raise ValueError("clean and rowwise row counts exceed the row count")
    perm = rng.permutation(i_dim)
    row_out = perm[n_clean:n_clean + n_row]
    rest = perm[n_clean + n_row:]

    x = x_clean.copy()
    x[row_out] = 3.0 * x[row_out] + 1.0

    n_cell = _round_count(spec.eps_c * n_cells)
    if n_cell > rest.size * jk:
        raise ValueError("cellwise count exceeds the cells available "
                         "outside reserved and rowwise rows")
    cell_rows = np.empty(0, dtype=np.int64)
    cell_cols = np.empty(0, dtype=np.int64)
    if n_cell > 0:
        pick = rng.choice(rest.size * jk, size=n_cell, replace=False)
        cell_rows = rest[pick // jk]
        cell_cols = pick % jk
        # column moments of the noisy pre-contamination data; rowwise
        # replacements must not inflate the shift scale
        col_mean = x_clean.mean(axis=0)
        col_std = x_clean.std(axis=0, ddof=1)
        x[cell_rows, cell_cols] = (col_mean[cell_cols]
                                   + spec.gamma * col_std[cell_cols])

    cell_flat = cell_rows * jk + cell_cols
    n_na = _round_count(spec.nu * n_cells)
    if n_na > n_cells - n_cell:
        raise ValueError("missing-cell count exceeds the non-shifted cells")
    na_flat = np.empty(0, dtype=np.int64)
    if n_na > 0:
        allowed = np.ones(n_cells, dtype=bool)
        allowed[cell_flat] = False
        candidates = np.flatnonzero(allowed)
        na_flat = candidates[rng.choice(candidates.size, size=n_na,
                                        replace=False)]

    mask = np.ones((i_dim, jk), dtype=bool)
    mask.ravel()[na_flat] = False

    w = np.ones((i_dim, jk))
    w[row_out, :] = 0.0
    w[cell_rows, cell_cols] = 0.0
    w.ravel()[na_flat] = 0.0

    def to_triples(flat):
        rows, cols = flat // jk, flat % jk
        return frozenset(zip(rows.tolist(), (cols % j_dim).tolist(),
                             (cols // j_dim).tolist()))

    return GeneratedData(
        x=fold_mode1(np.where(mask, x, 0.0), dims, mask),
        x_clean=fold_mode1(x_clean, dims),
        a=a, b=b, c=c,
        row_outliers=frozenset(row_out.tolist()),
        cell_outliers=to_triples(cell_flat),
        na_cells=to_triples(na_flat),
        w=fold_mode1(w, dims).values,
        scale2=float(np.mean(x_clean ** 2)),
    )


def mse_regular(x, x_hat, w):
    """Weighted mean squared error over the regular cells (w = 1)."""
    x = np.asarray(x, float)
    x_hat = np.asarray(x_hat, float)
    w = np.asarray(w, float)
    m = w.sum()
    if m <= 0:
        raise ValueError("no regular cells")
    return float(np.sum(w * (x - x_hat) ** 2) / m)


def mse_imputed(x_true, x_tilde, w):
    """Mean squared error over the non-regular cells (w = 0).

    x_true holds the pre-contamination values, so this measures how well
    outlying and missing cells were reconstructed.
    """
    x_true = np.asarray(x_true, float)
    x_tilde = np.asarray(x_tilde, float)
    w = np.asarray(w, float)
    n_bad = w.size - w.sum()
    if n_bad <= 0:
        raise ValueError("no non-regular cells")
    return float(np.sum((1.0 - w) * (x_true - x_tilde) ** 2) / n_bad)


def subspace_angle(est, truth):
    """Principal angle (radians) between two loading subspaces.

    Returns the second principal angle when both matrices have two or more
    columns, the first otherwise, so a shared dominant direction does not
    hide a mismatch in the rest of the space.
    """
    est = np.atleast_2d(np.asarray(est, float))
    truth = np.atleast_2d(np.asarray(truth, float))
    if est.shape != truth.shape:
        raise ValueError("shape mismatch")
    f = est.shape[1]
    if np.linalg.matrix_rank(est) < f or np.linalg.matrix_rank(truth) < f:
        raise ValueError("rank-deficient loading matrix")
    q1, _ = np.linalg.qr(est)
    q2, _ = np.linalg.qr(truth)
    s = np.linalg.svd(q1.T @ q2, compute_uv=False)
    angles = np.arccos(np.clip(np.sort(s)[::-1], -1.0, 1.0))
    return float(angles[1] if f >= 2 else angles[0])


def _fit_par(data, rank, seed, n_starts):
    opts = FitOptions(rank=rank, seed=seed, n_starts=n_starts)
    if data.x.mask.all():
        res = als_complete(data.x, opts)
        completed = data.x.values
    else:
        res, completed_t = als_incomplete(data.x, opts)
        completed = completed_t.values
    model = res.model
    # imputations exist only for missing cells; observed values are kept
    x_imp = np.where(data.x.mask, data.x.values, completed)
    return model, model.fitted().values, x_imp


def _fit_macro(data, rank, seed, n_starts):
    from .macro import MacroOptions, macroparafac

    res = macroparafac(data.x, MacroOptions(
        rank=rank, seed=seed, fit=FitOptions(rank=rank, seed=seed,
                                             n_starts=n_starts)))
    return res.model, res.model.fitted().values, res.x_full.values


_METHODS = {"par": _fit_par, "macro": _fit_macro}


def run_scenario(scenario, method, n_rep, seed, gamma=7.0,
                 dims=(50, 76, 61), noise=0.2, rank=2, n_starts=5,
                 csv_path=None):
    """Generate and fit `n_rep` replicates; one result row per replicate.

    `scenario` is a name from :data:`SCENARIOS` or an explicit quartet.
    Replicate r uses seed + r for both generation and fitting.  Squared
    errors are reported in units of the mean squared clean value.  The
    mse_imp column is empty when the scenario has no irregular cells.
    """
    if isinstance(scenario, str):
        try:
            quartet = SCENARIOS[scenario]
        except KeyError:
            raise ValueError(f"unknown scenario {scenario!r}") from None
        name = scenario
    else:
        quartet = tuple(float(v) for v in scenario)
        if len(quartet) != 4:
            raise ValueError("a scenario quartet needs four fractions")
        name = "({},{},{},{})".format(*(f"{v:g}" for v in quartet))
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}")
    fit = _METHODS[method]

    rows = []
    for r in range(n_rep):
        spec = ContaminationSpec(*quartet, gamma=gamma, seed=seed + r)
        data = generate(spec, dims=dims, noise=noise)
        t0 = time.perf_counter()
        model, x_hat, x_imp = fit(data, rank, seed + r, n_starts)
        elapsed = time.perf_counter() - t0
        row = {
            "replicate": r,
            "scenario": name,
            "method": method,
            "mse": mse_regular(data.x_clean.values, x_hat, data.w)
                   / data.scale2,
            "b_angle": subspace_angle(model.b, data.b),
            "c_angle": subspace_angle(model.c, data.c),
            "mse_imp": None,
            "seconds": elapsed,
        }
        if data.w.sum() < data.w.size:
            row["mse_imp"] = mse_imputed(data.x_clean.values, x_imp,
                                         data.w) / data.scale2
        rows.append(row)
    if csv_path is not None:
        write_rows_csv(csv_path, rows)
    return rows


def summarize_rows(rows):
    """Median and quartiles of each numeric column, per scenario/method."""
    out = []
    keys = sorted({(r["scenario"], r["method"]) for r in rows})
    for scen, meth in keys:
        sub = [r for r in rows if r["scenario"] == scen
               and r["method"] == meth]
        entry = {"scenario": scen, "method": meth, "n_rep": len(sub)}
        for col in ("mse", "b_angle", "c_angle", "mse_imp", "seconds"):
            vals = [r[col] for r in sub if r[col] is not None]
            if vals:
                q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
                entry[f"{col}_q1"] = float(q1)
                entry[f"{col}_median"] = float(med)
                entry[f"{col}_q3"] = float(q3)
            else:
                entry[f"{col}_q1"] = entry[f"{col}_median"] = \
                    entry[f"{col}_q3"] = None
        out.append(entry)
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_rows_csv(path, rows, fields=None):
    fields = fields or CSV_FIELDS
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row.get(k)) for k in fields])
