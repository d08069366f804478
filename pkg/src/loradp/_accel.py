"""Backend switch for the compiled kernels.

Set ``LORADP_BACKEND=numpy`` to force the pure-numpy path. The default is
``numba`` when it imports, otherwise numpy.
"""

import os

_requested = os.environ.get("LORADP_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"LORADP_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _numba = None

HAVE_NUMBA = _numba is not None
BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    Compiled versions are always built when numba exists so both paths can be
    compared in tests and benchmarks regardless of ``BACKEND``.
    """
    if HAVE_NUMBA:
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
