"""Kernel backend selection.

The hot kernels (conv2d, selective scan) exist twice: a numba-jitted version
and a pure-numpy fallback. `PRISM_KERNELS=numpy` or `PRISM_KERNELS=numba`
forces a backend; the default is numba when it imports, numpy otherwise.
"""

import os
import warnings

_choice = os.environ.get("PRISM_KERNELS", "auto").lower()

if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(f"PRISM_KERNELS must be 'numba' or 'numpy', got {_choice!r}")

if _choice == "numpy":
    from . import kernels_numpy as kernels
else:
    try:
        from . import kernels_numba as kernels
    except ImportError:
        if _choice == "numba":
            raise
        warnings.warn("numba unavailable, falling back to pure-numpy kernels")
        from . import kernels_numpy as kernels

KERNELS = kernels


def backend_name() -> str:
    return KERNELS.NAME
