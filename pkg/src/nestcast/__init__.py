"""Global-regional weather forecasting on region-refined spherical graphs."""

import os as _os

__version__ = "0.1.0"

# NESTCAST_THREADS caps BLAS/OpenMP threads; must be set before numpy loads
_threads = _os.environ.get("NESTCAST_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
