"""Three-way arrays with explicit missingness and the matrix kernels they share.

The array convention throughout the package: a data cube has shape
``(I, J, K)`` with ``i`` indexing samples (mode 1), and its mode-1
matricization is the ``I x JK`` matrix whose column ``k*J + j`` (0-based)
holds ``x[i, j, k]``.  Every fitting routine works on that matricization,
so the Khatri-Rao product and the masked least-squares kernels live here.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor3",
    "CpModel",
    "unfold_mode1",
    "fold_mode1",
    "khatri_rao",
    "pinv_solve",
    "masked_ls_rows",
    "cp_normalize",
]


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Tensor3:
    """A dense ``(I, J, K)`` float array plus a boolean observation mask.

    Unobserved cells hold 0.0 (a sentinel that no arithmetic path reads);
    missingness lives only in ``mask``.  Both buffers are C-contiguous with
    ``i`` outermost and are marked read-only after construction.
    """

    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError("values must be a 3-d array with all dims >= 1")
        m = self.mask
        if m is None:
            m = np.isfinite(v)
        m = np.asarray(m, dtype=bool)
        if m.shape != v.shape:
            raise ValueError("mask shape %s != values shape %s" % (m.shape, v.shape))
        v = np.where(m, v, 0.0)
        if not np.isfinite(v[m]).all():
            raise ValueError("observed cells must be finite")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "mask", _readonly(m))

    @property
    def dims(self):
        return self.values.shape

    @property
    def n_observed(self):
        return int(self.mask.sum())

    @classmethod
    def from_array(cls, a):
        """Build from an array where NaN marks a missing cell."""
        return cls(np.asarray(a, dtype=float))

    def unfold(self):
        return unfold_mode1(self)


def unfold_mode1(t):
    """Mode-1 matricization of a :class:`Tensor3`.

    Returns
    -------
    (values, mask)
        ``I x JK`` float and bool arrays; column ``k*J + j`` is cell
        ``(i, j, k)``.
    """
    i, j, k = t.dims
    v = np.transpose(t.values, (0, 2, 1)).reshape(i, j * k)
    m = np.transpose(t.mask, (0, 2, 1)).reshape(i, j * k)
    return np.ascontiguousarray(v), np.ascontiguousarray(m)


def fold_mode1(m, dims, mask=None):
    """Exact inverse of :func:`unfold_mode1`.

    Parameters
    ----------
    m : ndarray
        ``I x JK`` matrix.
    dims : tuple of int
        Target ``(I, J, K)``.
    mask : ndarray of bool, optional
        Same shape as ``m``; defaults to all observed.
    """
    i, j, k = dims
    m = np.asarray(m, dtype=float)
    if m.shape != (i, j * k):
        raise ValueError("matrix shape %s does not match dims %s" % (m.shape, dims))
    v = np.transpose(m.reshape(i, k, j), (0, 2, 1))
    mk = None
    if mask is not None:
        mk = np.transpose(np.asarray(mask, bool).reshape(i, k, j), (0, 2, 1))
    return Tensor3(v, mk if mk is not None else np.ones((i, j, k), bool))


def khatri_rao(c, b):
    """Column-wise Kronecker product: column f is ``vec(b_f c_f')``.

    For ``c`` of shape ``(K, F)`` and ``b`` of shape ``(J, F)`` the result
    has shape ``(J*K, F)`` with entry ``(k*J + j, f) = b[j, f] * c[k, f]``,
    matching the mode-1 column order above.
    """
    c = np.asarray(c, float)
    b = np.asarray(b, float)
    if c.ndim != 2 or b.ndim != 2 or c.shape[1] != b.shape[1]:
        raise ValueError("factor matrices must be 2-d with equal column counts")
    k, f = c.shape
    j = b.shape[0]
    return np.einsum("kf,jf->kjf", c, b).reshape(k * j, f)


def pinv_solve(m, rhs):
    """Minimum-norm least-squares solution of ``m @ x = rhs``.

    Singular values below ``1e-12 * max(m.shape)`` relative to the largest
    are truncated, so rank-deficient systems return the pseudo-inverse
    solution instead of raising.
    """
    m = np.asarray(m, float)
    rhs = np.asarray(rhs, float)
    if m.ndim != 2:
        raise ValueError("coefficient matrix must be 2-d")
    if not (np.isfinite(m).all() and np.isfinite(rhs).all()):
        raise ValueError("non-finite input")
    rcond = 1e-12 * max(m.shape)
    x, _, _, _ = np.linalg.lstsq(m, rhs, rcond=rcond)
    return x


def masked_ls_rows(coef, data, mask):
    """Row-wise least squares against a shared coefficient matrix.

    Solves, for each row ``i`` of ``data`` (``n x p``), the least-squares
    problem restricted to that row's observed entries:
    ``min_beta sum_{j observed} (data[i, j] - (coef @ beta)[j])^2`` with
    ``coef`` of shape ``(p, F)``.  Returns the ``n x F`` matrix of solutions.

    Raises if any row has fewer observed entries than F.
    """
    coef = np.asarray(coef, float)
    data = np.asarray(data, float)
    mask = np.asarray(mask, bool)
    if data.shape != mask.shape:
        raise ValueError("data and mask shapes differ")
    n, p = data.shape
    if coef.shape[0] != p:
        raise ValueError("coef rows must match data columns")
    f = coef.shape[1]
    counts = mask.sum(axis=1)
    if (counts < f).any():
        bad = int(np.argmax(counts < f))
        raise ValueError("row %d has %d observed entries, fewer than F=%d" % (bad, counts[bad], f))
    if mask.all():
        return pinv_solve(coef, data.T).T
    out = np.empty((n, f))
    for i in range(n):
        m = mask[i]
        out[i] = pinv_solve(coef[m], data[i, m])
    return out


def cp_normalize(a, b, c):
    """Normalize a factor triple to the model's storage convention.

    Columns of ``b`` and ``c`` are scaled to unit Euclidean norm and signed
    so each column's largest-magnitude element is positive; scales and signs
    are absorbed into ``a``.  Zero columns are left as zeros.  The implied
    fitted array is unchanged.
    """
    a = np.array(a, float)
    b = np.array(b, float)
    c = np.array(c, float)
    for mat in (b, c):
        nrm = np.linalg.norm(mat, axis=0)
        nz = nrm > 0
        mat[:, nz] /= nrm[nz]
        a[:, nz] *= nrm[nz]
        # sign convention: first element of largest magnitude made positive
        piv = np.abs(mat).argmax(axis=0)
        sgn = np.sign(mat[piv, np.arange(mat.shape[1])])
        sgn[sgn == 0] = 1.0
        mat *= sgn
        a *= sgn
    return a, b, c


@dataclass(frozen=True)
class CpModel:
    """A rank-F trilinear model ``x[i,j,k] = sum_f A[i,f] B[j,f] C[k,f]``.

    Stored normalized: unit-norm columns in B and C with the scale and a
    positive-leading-element sign convention absorbed into A.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, float)
        b = np.asarray(self.b, float)
        c = np.asarray(self.c, float)
        if not (a.ndim == b.ndim == c.ndim == 2):
            raise ValueError("factors must be 2-d")
        if not (a.shape[1] == b.shape[1] == c.shape[1] >= 1):
            raise ValueError("factors must share F >= 1 columns")
        object.__setattr__(self, "a", _readonly(a))
        object.__setattr__(self, "b", _readonly(b))
        object.__setattr__(self, "c", _readonly(c))

    @property
    def rank(self):
        return self.b.shape[1]

    @property
    def dims(self):
        return (self.a.shape[0], self.b.shape[0], self.c.shape[0])

    @classmethod
    def from_factors(cls, a, b, c):
        return cls(*cp_normalize(a, b, c))

    def fitted_unfolded(self):
        """Fitted values as the I x JK mode-1 matrix."""
        return self.a @ khatri_rao(self.c, self.b).T

    def fitted(self):
        """Fitted values as a fully observed Tensor3."""
        return fold_mode1(self.fitted_unfolded(), self.dims)
