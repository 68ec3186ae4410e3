"""Kernel backend selection.

The compiled Cython extension is preferred when importable; the pure-Python
twin is the fallback. ``BIOFILMCAL_BACKEND=python`` forces the fallback,
``BIOFILMCAL_BACKEND=compiled`` makes a missing extension a hard error.
"""
from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_FORCED = os.environ.get("BIOFILMCAL_BACKEND")
if _FORCED not in (None, "", "compiled", "python"):
    raise ValueError(f"BIOFILMCAL_BACKEND must be 'compiled' or 'python', "
                     f"got {_FORCED!r}")
if _FORCED == "compiled" and _compiled is None:
    raise ImportError("BIOFILMCAL_BACKEND=compiled but the extension "
                      "biofilmcal._kernels is not built")

if _compiled is not None and _FORCED != "python":
    _default = _compiled
else:
    _default = _kernels_py

BACKEND_NAME = _default.BACKEND_NAME


def available_backends() -> list[str]:
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def get_backend(name: str | None = None):
    """Return a kernel module by name (None: the import-time default)."""
    if name is None:
        return _default
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled backend is not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
