"""Kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly; the pure
numpy twin is the fallback.  Set FEDCORRECT_KERNELS=numpy or =cython to force a
backend (forcing an unavailable one raises at import time).
"""

import os

from . import numpy_backend

_requested = os.environ.get("FEDCORRECT_KERNELS", "").strip().lower()

try:
    from . import _dense as _compiled
except ImportError:
    _compiled = None

if _requested == "numpy":
    _impl = numpy_backend
elif _requested == "cython":
    if _compiled is None:
        raise ImportError(
            "FEDCORRECT_KERNELS=cython but the compiled extension is not available; "
            "reinstall the package or unset the variable"
        )
    _impl = _compiled
elif _requested:
    raise ImportError(f"unknown FEDCORRECT_KERNELS value {_requested!r}")
else:
    _impl = _compiled if _compiled is not None else numpy_backend

BACKEND = "cython" if _impl is _compiled and _compiled is not None else "numpy"

forward = _impl.forward
backward = _impl.backward
logits = _impl.logits


def available_backends() -> list[str]:
    names = ["numpy"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names


def get_backend(name: str):
    """Return a specific backend module (for tests and benchmarks)."""
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernel extension not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
