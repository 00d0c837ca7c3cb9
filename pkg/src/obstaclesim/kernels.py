"""Backend dispatch for the hot stepping kernel.

The numba path is used when numba imports cleanly; set SIM_DISABLE_NUMBA=1
to force the pure-numpy reference path.  Both implement the same contract
(see kernels_numpy.run_chunk) and are cross-checked in the test suite.
"""

from __future__ import annotations

import os

from . import kernels_numpy

NDIAG = kernels_numpy.NDIAG

if os.environ.get("SIM_DISABLE_NUMBA", "0") not in ("1", "true", "yes"):
    try:
        from . import kernels_numba
        run_chunk = kernels_numba.run_chunk
        BACKEND = "numba"
    except ImportError:  # pragma: no cover
        run_chunk = kernels_numpy.run_chunk
        BACKEND = "numpy"
else:
    run_chunk = kernels_numpy.run_chunk
    BACKEND = "numpy"


def backend_name() -> str:
    return BACKEND
