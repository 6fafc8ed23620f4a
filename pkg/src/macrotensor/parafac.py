"""Trilinear least-squares fitting by alternating updates.

Two entry points: :func:`als_complete` for fully observed arrays and
:func:`als_incomplete` for arrays with missing cells, which alternates the
same factor updates with model-based replacement of the missing values and
tracks the loss over observed cells only.  Both are deterministic under a
caller-supplied seed and support multiple random starts.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import CpModel, Tensor3, fold_mode1, khatri_rao, unfold_mode1

__all__ = ["FitOptions", "FitResult", "als_complete", "als_incomplete", "score_rows"]


@dataclass(frozen=True)
class FitOptions:
    """Settings shared by the alternating least-squares fits.

    rank
        Number of trilinear components.
    max_iter
        Cap on full update sweeps per start.
    rel_tol
        Convergence threshold on the relative change of the loss.
    n_starts
        Number of random initializations; the best final loss wins,
        ties broken by start index.
    seed
        64-bit seed; every random draw flows from it.
    """

    rank: int
    max_iter: int = 500
    rel_tol: float = 1e-8
    n_starts: int = 5
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.rank, (int, np.integer)) or self.rank < 1:
            raise ValueError("rank must be a positive integer")
        if self.max_iter < 1 or self.n_starts < 1 or self.rel_tol <= 0:
            raise ValueError("max_iter, n_starts must be >= 1 and rel_tol > 0")


@dataclass(frozen=True)
class FitResult:
    model: CpModel
    loss: float
    loss_trace: np.ndarray
    n_iter: int
    converged: bool
    rank_deficient: bool = False
    start_index: int = 0


def _lstsq(design, rhs):
    rcond = 1e-12 * max(design.shape)
    sol, _, rank, _ = np.linalg.lstsq(design, rhs, rcond=rcond)
    return sol, rank


def _solve_ls(g, p, n_design, design_rhs):
    """Least-squares factor update from the F x F gram of the design.

    Solves the normal equations when the gram is safely conditioned; a
    near-singular gram (degenerate sweeps) falls back to the SVD solver
    so the update stays an exact least-squares solve either way.  `p` is
    the design'-times-rhs product, `design_rhs` builds the explicit
    (design, rhs) pair only for the fallback.
    """
    evals = np.linalg.eigvalsh(g)
    f = g.shape[0]
    if evals[0] > 1e-6 * max(evals[-1], 0.0):
        sol = np.linalg.solve(g, p)
        sv_max = np.sqrt(evals[-1])
        rank = int(np.sum(np.sqrt(np.maximum(evals, 0.0))
                          > 1e-12 * max(n_design, f) * sv_max))
        return sol, rank
    design, rhs = design_rhs()
    return _lstsq(design, rhs)


def _random_factors(rng, j, k, rank):
    b = rng.standard_normal((j, rank))
    c = rng.standard_normal((k, rank))
    b /= np.linalg.norm(b, axis=0)
    c /= np.linalg.norm(c, axis=0)
    return b, c


def _als_run(x1, mask, dims, b, c, max_iter, rel_tol):
    """One alternating sweep sequence on the mode-1 matricized data.

    ``x1`` must be complete (missing cells pre-filled); ``mask`` marks the
    observed cells that define the loss.  Returns the factors, trace, the
    working matrix (missing cells holding the final fitted values), and
    flags.  The loss trace is checked to be non-increasing as the sweeps
    proceed; a genuine increase is a bug, not a data property.
    """
    i, j, k = dims
    work = x1.copy()
    incomplete = not mask.all()
    # reference scale for float-noise slack: squared norm of the observed data
    scale = float(np.sum(x1[mask] ** 2)) if incomplete else float(np.sum(x1 * x1))
    trace = []
    a = None
    rank = b.shape[1]
    deficient = False
    converged = False
    prev = np.inf
    fitted = None
    w_ikj = work.reshape(i, k, j)
    for _ in range(max_iter):
        # factor updates; each one is an exact least-squares solve, done
        # through the F x F gram (Hadamard product of factor grams)
        g = (b.T @ b) * (c.T @ c)
        p = np.einsum("ikj,jf,kf->fi", w_ikj, b, c, optimize=True)
        at, r1 = _solve_ls(g, p, j * k, lambda: (khatri_rao(c, b), work.T))
        a = at.T
        g = (a.T @ a) * (c.T @ c)
        p = np.einsum("ikj,if,kf->fj", w_ikj, a, c, optimize=True)
        bt, r2 = _solve_ls(
            g, p, i * k,
            lambda: (khatri_rao(a, c),
                     w_ikj.transpose(2, 0, 1).reshape(j, i * k).T))
        b = bt.T
        g = (a.T @ a) * (b.T @ b)
        p = np.einsum("ikj,if,jf->fk", w_ikj, a, b, optimize=True)
        ct, r3 = _solve_ls(
            g, p, i * j,
            lambda: (khatri_rao(b, a),
                     w_ikj.transpose(1, 2, 0).reshape(k, j * i).T))
        c = ct.T
        if min(r1, r2, r3) < rank:
            deficient = True

        fitted = a @ khatri_rao(c, b).T
        resid = x1 - fitted
        loss = float(np.sum(resid[mask] ** 2)) if incomplete else float(np.sum(resid * resid))
        if trace and loss > prev * (1.0 + 1e-9) + 1e-12 * (scale + 1.0):
            raise AssertionError("loss increased across an alternating sweep")
        trace.append(loss)
        if incomplete:
            work[~mask] = fitted[~mask]
        at_floor = loss <= 1e-20 * scale
        if at_floor or (np.isfinite(prev) and prev - loss <= rel_tol * max(prev, 1e-300)):
            converged = True
            break
        prev = loss
    return a, b, c, np.array(trace), work, converged, deficient


def _column_mean_fill(x1, mask):
    """Per-column means of the observed entries; empty columns fall back to
    the overall observed mean."""
    counts = mask.sum(axis=0)
    sums = np.where(mask, x1, 0.0).sum(axis=0)
    overall = x1[mask].mean()
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), overall)
    return means


def _run_starts(x1, mask, dims, opts, init):
    i, j, k = dims
    children = np.random.SeedSequence(opts.seed).spawn(opts.n_starts)
    best = None
    for s in range(opts.n_starts):
        if s == 0 and init is not None:
            b0 = np.array(init[0], float)
            c0 = np.array(init[1], float)
            if b0.shape != (j, opts.rank) or c0.shape != (k, opts.rank):
                raise ValueError("init factor shapes do not match the data")
        else:
            rng = np.random.default_rng(children[s])
            b0, c0 = _random_factors(rng, j, k, opts.rank)
        out = _als_run(x1, mask, dims, b0, c0, opts.max_iter, opts.rel_tol)
        loss = out[3][-1]
        if best is None or loss < best[0]:
            best = (loss, s, out)
    loss, s, (a, b, c, trace, work, converged, deficient) = best
    model = CpModel.from_factors(a, b, c)
    result = FitResult(
        model=model,
        loss=float(loss),
        loss_trace=trace,
        n_iter=len(trace),
        converged=converged,
        rank_deficient=deficient,
        start_index=s,
    )
    return result, work


def als_complete(t, opts, init=None):
    """Alternating least-squares fit of a fully observed array.

    Parameters
    ----------
    t : Tensor3
        Fully observed data.
    opts : FitOptions
    init : (B, C) pair, optional
        Warm start used for the first start; remaining starts stay random.

    Returns
    -------
    FitResult
        Normalized model, final loss (squared Frobenius residual), the
        per-sweep loss trace of the winning start, and flags.
    """
    if not t.mask.all():
        raise ValueError("als_complete requires a fully observed array")
    x1, mask = unfold_mode1(t)
    _validate_rank_feasible(mask, opts.rank)
    result, _ = _run_starts(x1, mask, t.dims, opts, init)
    return result


def als_incomplete(t, opts, init=None, na_init=None):
    """Alternating fit of an incompletely observed array.

    Missing cells are initialized from ``na_init`` (a complete array of the
    same shape, or its mode-1 matricization) or, by default, from per-column
    observed means of the matricized data.  Each sweep refits the factors on
    the completed matrix, then replaces the missing cells with the current
    fitted values; the reported loss covers observed cells only.

    Returns
    -------
    (FitResult, Tensor3)
        The fit and the final fully observed array whose missing cells hold
        the converged fitted values.
    """
    x1, mask = unfold_mode1(t)
    if not mask.any():
        raise ValueError("mask is entirely false")
    _validate_rank_feasible(mask, opts.rank)
    i, j, k = t.dims
    filled = x1.copy()
    if na_init is not None:
        na = np.asarray(na_init, float)
        if na.shape == (i, j, k):
            na = np.transpose(na, (0, 2, 1)).reshape(i, j * k)
        if na.shape != x1.shape:
            raise ValueError("na_init shape does not match the data")
        if not np.isfinite(na[~mask]).all():
            raise ValueError("na_init must be finite at missing cells")
        filled[~mask] = na[~mask]
    else:
        means = _column_mean_fill(x1, mask)
        fill = np.broadcast_to(means, x1.shape)
        filled[~mask] = fill[~mask]
    result, work = _run_starts(filled, mask, t.dims, opts, init)
    return result, fold_mode1(work, t.dims)


def _validate_rank_feasible(mask, rank):
    rows = mask.sum(axis=1)
    if (rows < rank).any():
        bad = int(np.argmax(rows < rank))
        raise ValueError(
            "row slice %d has %d observed cells, fewer than rank %d" % (bad, rows[bad], rank)
        )


def score_rows(x_rows, b, c):
    """Least-squares sample scores for complete matricized rows.

    Given rows of an ``n x JK`` matrix and loading matrices ``b`` (J x F)
    and ``c`` (K x F), returns the ``n x F`` score matrix solving each row's
    regression on the Khatri-Rao design, via the truncated pseudo-inverse.
    """
    x_rows = np.atleast_2d(np.asarray(x_rows, float))
    if not np.isfinite(x_rows).all():
        raise ValueError("rows must be complete and finite")
    design = khatri_rao(c, b)
    if design.shape[0] != x_rows.shape[1]:
        raise ValueError("row length %d does not match J*K = %d" % (x_rows.shape[1], design.shape[0]))
    sol, _ = _lstsq(design, x_rows.T)
    return sol.T
