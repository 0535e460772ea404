"""Kernel backend selection.

The hot multilinear kernels in :mod:`riscade.kernels` exist twice: a numba
``@njit`` version and a pure-numpy fallback. The environment variable
``RISCADE_BACKEND`` picks which one the public names bind to:

* ``auto`` (or unset): numba when it imports, numpy otherwise
* ``numba``: require numba, raise if unavailable
* ``numpy``: force the fallback

Resolution happens once at import time.
"""

import os
import warnings

_REQUESTED = os.environ.get("RISCADE_BACKEND", "auto").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

if _REQUESTED in ("auto", ""):
    USE_NUMBA = HAVE_NUMBA
elif _REQUESTED == "numba":
    if not HAVE_NUMBA:
        raise ImportError("RISCADE_BACKEND=numba but numba is not importable")
    USE_NUMBA = True
elif _REQUESTED == "numpy":
    USE_NUMBA = False
else:
    warnings.warn(
        f"unrecognized RISCADE_BACKEND={_REQUESTED!r}; using auto selection",
        stacklevel=2,
    )
    USE_NUMBA = HAVE_NUMBA


def active_backend() -> str:
    """Name of the kernel backend in use: 'numba' or 'numpy'."""
    return "numba" if USE_NUMBA else "numpy"
