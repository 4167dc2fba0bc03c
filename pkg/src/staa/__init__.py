"""Learned space-time downsampling and video upscaling at desk scale.

Set ``STAA_THREADS`` before the first import to cap BLAS/numba worker
threads (``0`` means single-threaded, which is also the deterministic mode).
Set ``STAA_NUMBA=0`` to use the pure-numpy kernels.
"""

import os as _os

_threads = _os.environ.get("STAA_THREADS")
if _threads is not None:
    try:
        _n = str(max(1, int(_threads)))
    except ValueError:
        _n = "1"
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        _os.environ.setdefault(_var, _n)

__version__ = "0.1.0"
