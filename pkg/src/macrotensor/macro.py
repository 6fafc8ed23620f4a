"""Robust trilinear decomposition under rowwise and cellwise outliers.

Six consecutive stages over a three-way array with (possibly) missing
cells:

1. cellwise detection and imputation on the matricized data,
2. projection outlyingness on the cell-imputed rows to pick a trustworthy
   subset of size h,
3. a multi-start complete-data fit on that subset,
4. a warm incomplete-data refit that treats flagged cells and missing
   cells as updatable,
5. a reweighting pass that rebuilds the subset from residual distances
   and refits,
6. final scores, fitted values, residual array, and imputed arrays.

Rows outside the working subset never influence the loading matrices;
their scores come from regressing their fully imputed rows on the fixed
loadings.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .detect import detect_cells
from .parafac import FitOptions, als_complete, als_incomplete, score_rows
from .robust import gauss_quantile, proj_outlyingness, unimcd
from .tensor import CpModel, Tensor3, fold_mode1, khatri_rao, unfold_mode1

__all__ = ["MacroOptions", "MacroResult", "default_h", "macroparafac"]


def default_h(i_dim):
    """Default working subset size: three quarters of (I + 1), rounded up."""
    return int(np.ceil(0.75 * (i_dim + 1)))


@dataclass(frozen=True)
class MacroOptions:
    """Settings for :func:`macroparafac`.

    rank
        Number of trilinear components.
    h
        Working subset size; defaults to ceil(0.75 (I + 1)) and must
        satisfy ceil(I/2) < h < I.
    ndir
        Direction count for the projection outlyingness.
    detector_cutoff, max_neighbors
        Passed to the cellwise detector.
    fit
        Inner alternating-least-squares settings; its rank must match and
        its seed field is superseded by `seed`, which drives every random
        draw of the whole procedure.
    """

    rank: int
    h: int = None
    ndir: int = 250
    detector_cutoff: float = 0.99
    max_neighbors: int = 10
    fit: FitOptions = None
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.ndir < 1:
            raise ValueError("ndir must be at least 1")
        if self.fit is not None and self.fit.rank != self.rank:
            raise ValueError("fit.rank does not match rank")
        if self.h is not None and self.h < 2:
            raise ValueError("h must be at least 2")

    def resolved_fit(self):
        return self.fit if self.fit is not None else FitOptions(rank=self.rank)

    def resolved_h(self, i_dim):
        h = self.h if self.h is not None else default_h(i_dim)
        if not np.ceil(i_dim / 2) < h < i_dim:
            raise ValueError(
                "h = %d out of range: need ceil(I/2) < h < I = %d" % (h, i_dim))
        return int(h)


@dataclass(frozen=True)
class MacroResult:
    """Output of :func:`macroparafac`.

    model
        Final scores and unit-norm loadings.
    x_na
        Input with missing cells replaced by final fitted values.
    x_cell
        Like x_na, with flagged cells also replaced, but only on rows kept
        in the final subset.
    x_full
        Fully imputed array: every flagged cell and missing cell replaced.
    residuals
        Input minus final fitted values, missing where the input is.
    rowwise_set
        Rows excluded from the final subset (potential rowwise outliers).
    cell_set
        Flagged (i, j, k) cells; fixed after stage 1.
    h_star
        The final working subset.
    stage_log
        Per-stage intermediates sufficient to replay each inner fit.
    """

    model: CpModel
    x_na: Tensor3
    x_cell: Tensor3
    x_full: Tensor3
    residuals: Tensor3
    rowwise_set: frozenset
    cell_set: frozenset
    h_star: frozenset
    h: int
    x_full_stage1: Tensor3
    stage_log: dict


def _col_to_jk(col, j_dim):
    return col % j_dim, col // j_dim


def _pick_rows(order_rows, excluded, h, note, log_warnings):
    """First h rows in `order_rows` that are not excluded, topping up from
    the excluded ones in the same order when too few remain."""
    kept = [r for r in order_rows if r not in excluded]
    if len(kept) >= h:
        return np.sort(np.asarray(kept[:h], dtype=np.int64))
    fill = [r for r in order_rows if r in excluded]
    msg = ("only %d rows outside the detector's row flags; filling the "
           "%s subset from flagged rows" % (len(kept), note))
    warnings.warn(msg)
    log_warnings.append(msg)
    out = (kept + fill)[:h]
    return np.sort(np.asarray(out, dtype=np.int64))


def macroparafac(t, opts):
    """Fit a robust rank-F trilinear model to a Tensor3.

    Returns a :class:`MacroResult`; see the module docstring for the
    staging.  All randomness derives from opts.seed.
    """
    i_dim, j_dim, k_dim = t.dims
    if i_dim < 4:
        raise ValueError("need at least 4 row slices")
    h = opts.resolved_h(i_dim)
    rank = opts.rank
    x1, mask = unfold_mode1(t)
    if (mask.sum(axis=1) < rank).any():
        raise ValueError("every row slice needs at least rank observed cells")

    seeds = np.random.SeedSequence(opts.seed).generate_state(5, np.uint64)
    s_detect, s_proj, s_fit3, s_fit4, s_fit5 = (int(v) for v in seeds)
    fit = opts.resolved_fit()
    log_warnings = []

    # stage 1: cellwise detection, initial imputations, initial row choice
    flags = detect_cells(x1, mask, cutoff_p=opts.detector_cutoff,
                         max_neighbors=opts.max_neighbors, seed=s_detect)
    cellmask = flags.cell_mask()
    row_flags_ddc = frozenset(flags.row_flags)
    x_na0 = np.where(mask, x1, flags.imputed)
    x_full0 = np.asarray(flags.imputed, float)
    counts = cellmask.sum(axis=1)
    order_by_flags = np.lexsort((np.arange(i_dim), counts))
    keep1 = _pick_rows(order_by_flags.tolist(), row_flags_ddc, h,
                       "stage-1", log_warnings)
    in_keep1 = np.zeros(i_dim, dtype=bool)
    in_keep1[keep1] = True
    x_cell0 = x_na0.copy()
    pos0 = cellmask & in_keep1[:, None]
    x_cell0[pos0] = x_full0[pos0]

    # stage 2: projection outlyingness of the cell-imputed rows
    outl = proj_outlyingness(x_cell0, h=h, ndir=opts.ndir, seed=s_proj)
    order_by_outl = np.lexsort((np.arange(i_dim), outl))
    h0 = _pick_rows(order_by_outl.tolist(), row_flags_ddc, h,
                    "stage-2", log_warnings)
    in_h0 = np.zeros(i_dim, dtype=bool)
    in_h0[h0] = True

    # stage 3: multi-start complete fit on the fully imputed subset rows
    x_cell1 = np.where(in_h0[:, None], x_full0, x_na0)
    x_cell1_pre = x_cell1.copy()
    sub_dims = (h, j_dim, k_dim)
    t3 = fold_mode1(x_cell1[h0], sub_dims)
    res3 = als_complete(t3, replace(fit, seed=s_fit3))
    b1, c1 = res3.model.b, res3.model.c
    a1 = score_rows(x_cell1[h0], b1, c1)
    fitted1 = a1 @ khatri_rao(c1, b1).T
    fit_missing = ~mask | cellmask
    sub_missing = fit_missing[h0]
    block = x_cell1[h0]
    block[sub_missing] = fitted1[sub_missing]
    x_cell1[h0] = block

    # stage 4: warm incomplete refit on the subset, flagged cells missing
    sub_mask = ~sub_missing
    t4 = fold_mode1(np.where(sub_mask, x_cell1[h0], 0.0), sub_dims, sub_mask)
    res4, _ = als_incomplete(t4, replace(fit, seed=s_fit4, n_starts=1),
                             init=(b1, c1), na_init=x_cell1[h0])
    b2, c2 = res4.model.b, res4.model.c
    a2 = np.empty((i_dim, rank))
    a2[h0] = res4.model.a
    rest = np.flatnonzero(~in_h0)
    if rest.size:
        a2[rest] = score_rows(x_full0[rest], b2, c2)
    fitted2 = a2 @ khatri_rao(c2, b2).T
    x_cell2 = np.where(mask, x1, fitted2)
    pos2 = cellmask & in_h0[:, None]
    x_cell2[pos2] = fitted2[pos2]

    # stage 5: reweighting by residual distances, then the final refit
    a3 = score_rows(x_cell2, b2, c2)
    fitted3 = a3 @ khatri_rao(c2, b2).T
    rd = np.linalg.norm(x_cell2 - fitted3, axis=1)
    loc_scale = unimcd(rd ** (2.0 / 3.0), h)
    base = loc_scale.location + loc_scale.scale * gauss_quantile(0.99)
    c_rd = float(max(base, 0.0) ** 1.5)
    hstar = np.array(sorted(
        i for i in range(i_dim) if rd[i] <= c_rd and i not in row_flags_ddc),
        dtype=np.int64)
    if hstar.size < rank + 1:
        raise RuntimeError(
            "reweighting kept %d rows, fewer than rank + 1 = %d; the data "
            "do not support a stable fit" % (hstar.size, rank + 1))
    in_hstar = np.zeros(i_dim, dtype=bool)
    in_hstar[hstar] = True
    star_missing = fit_missing[hstar]
    star_dims = (hstar.size, j_dim, k_dim)
    t5 = fold_mode1(np.where(~star_missing, x_cell2[hstar], 0.0), star_dims,
                    ~star_missing)
    res5, _ = als_incomplete(t5, replace(fit, seed=s_fit5, n_starts=1),
                             init=(b2, c2), na_init=x_cell2[hstar])
    b5, c5 = res5.model.b, res5.model.c
    a5 = np.empty((i_dim, rank))
    a5[hstar] = res5.model.a
    rest5 = np.flatnonzero(~in_hstar)
    if rest5.size:
        a5[rest5] = score_rows(x_full0[rest5], b5, c5)
    fitted5 = a5 @ khatri_rao(c5, b5).T
    x_full5 = np.where(mask & ~cellmask, x1, fitted5)

    # stage 6: final scores from the fully imputed array
    a6 = score_rows(x_full5, b5, c5)
    xhat6 = a6 @ khatri_rao(c5, b5).T
    resid = np.where(mask, x1 - xhat6, 0.0)
    x_full_final = np.where(mask, x_full5, xhat6)
    x_na_final = np.where(mask, x1, xhat6)
    x_cell_final = x_na_final.copy()
    pos_final = cellmask & in_hstar[:, None]
    x_cell_final[pos_final] = x_full5[pos_final]

    cell_set = frozenset(
        (int(i), *map(int, _col_to_jk(c, j_dim)))
        for i, c in zip(*np.nonzero(cellmask)))
    stage_log = {
        "seeds": {"detect": s_detect, "proj": s_proj, "fit3": s_fit3,
                  "fit4": s_fit4, "fit5": s_fit5},
        "row_flags_ddc": tuple(sorted(row_flags_ddc)),
        "keep_rows_stage1": tuple(keep1.tolist()),
        "outlyingness": outl,
        "h0": tuple(h0.tolist()),
        "x_cell1_pre": x_cell1_pre,
        "x_cell1": x_cell1,
        "b1": b1, "c1": c1, "loss3": res3.loss,
        "x_cell2": x_cell2,
        "b2": b2, "c2": c2, "a2": a2, "loss4": res4.loss,
        "rd": rd, "c_rd": c_rd,
        "h_star": tuple(hstar.tolist()),
        "loss5": res5.loss,
        "n_iter5": res5.n_iter,
        "converged5": res5.converged,
        "fitted5": fitted5,
        "warnings": tuple(log_warnings),
    }
    return MacroResult(
        model=CpModel(a6, b5, c5),
        x_na=fold_mode1(x_na_final, t.dims),
        x_cell=fold_mode1(x_cell_final, t.dims),
        x_full=fold_mode1(x_full_final, t.dims),
        residuals=fold_mode1(resid, t.dims, mask),
        rowwise_set=frozenset(int(r) for r in rest5),
        cell_set=cell_set,
        h_star=frozenset(int(r) for r in hstar),
        h=h,
        x_full_stage1=fold_mode1(x_full0, t.dims),
        stage_log=stage_log,
    )
