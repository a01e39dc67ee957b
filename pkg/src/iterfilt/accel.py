"""Numerics backend selection for the hot inner kernels.

Every kernel in :mod:`iterfilt._kernels` exists in two functionally
equivalent flavours: a numba ``@njit`` loop and a plain-numpy array
version.  The active flavour is fixed once, at import time, from the
``ITERFILT_BACKEND`` environment variable:

* ``numba`` -- require numba, raise if it cannot be imported;
* ``numpy`` -- pure-numpy fallback path;
* unset or ``auto`` -- numba when importable, numpy otherwise.

Index-producing kernels agree exactly between backends.  Floating-point
reductions agree to roundoff (BLAS blocking versus sequential loops);
each backend is individually deterministic.

Run ``python -m benchmarks.bench_kernels`` from the repository root to
compare the two flavours on this machine.
"""

import os

_choice = os.environ.get("ITERFILT_BACKEND", "auto").strip().lower() or "auto"
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"ITERFILT_BACKEND={_choice!r} not recognized; expected 'numba', 'numpy' or 'auto'"
    )

try:
    import numba  # noqa: F401

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

if _choice == "numba" and not NUMBA_AVAILABLE:
    raise RuntimeError("ITERFILT_BACKEND=numba but numba cannot be imported")

USING_NUMBA = NUMBA_AVAILABLE and _choice != "numpy"
BACKEND = "numba" if USING_NUMBA else "numpy"
