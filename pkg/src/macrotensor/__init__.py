"""Robust trilinear decomposition of incomplete three-way arrays.

Setting the environment variable MACROTENSOR_THREADS before this package
is first imported caps the BLAS thread pools (0 or unset keeps the
library defaults).  It must run before numpy loads, hence its place at
the top of the package.
"""

def _cap_threads():
    import os

    threads = os.environ.get("MACROTENSOR_THREADS", "").strip()
    if not threads or threads == "0":
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(var, threads)


_cap_threads()

from .tensor import (
    CpModel,
    Tensor3,
    cp_normalize,
    fold_mode1,
    khatri_rao,
    masked_ls_rows,
    pinv_solve,
    unfold_mode1,
)

__version__ = "0.1.0"
