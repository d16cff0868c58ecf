"""Curvature kernel backend selection.

The compiled Cython core is used when importable; the NumPy reference
implementation is the fallback.  Override with AEMASS_BACKEND=numpy|cython.
Both backends are kept in exact agreement by tests/test_kernels.py.
"""

from __future__ import annotations

import os

from . import reference

_requested = os.environ.get("AEMASS_BACKEND", "auto").lower()

if _requested not in ("auto", "numpy", "cython"):
    raise ValueError(f"AEMASS_BACKEND must be auto|numpy|cython, got {_requested!r}")

backend_name = "numpy"
first_order = reference.first_order
second_order = reference.second_order

if _requested in ("auto", "cython"):
    try:
        from . import _fastcore

        first_order = _fastcore.first_order
        second_order = _fastcore.second_order
        backend_name = "cython"
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "AEMASS_BACKEND=cython but the compiled kernel is not built; "
                "reinstall with 'pip install -e . --no-build-isolation'"
            )

__all__ = ["first_order", "second_order", "backend_name", "reference"]
