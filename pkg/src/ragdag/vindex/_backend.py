"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the pure
Python twin is the fallback. Setting ``RAGDAG_PURE_PYTHON`` to any
non-empty value forces the fallback, which is how tests pin a backend.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py

_COMPILED: ModuleType | None
try:
    from . import _kernels_cy as _compiled_mod
except ImportError:
    _COMPILED = None
else:
    _COMPILED = _compiled_mod

_FORCE_PURE = bool(os.environ.get("RAGDAG_PURE_PYTHON"))

if _COMPILED is not None and not _FORCE_PURE:
    _ACTIVE = _COMPILED
    BACKEND_NAME = "compiled"
else:
    _ACTIVE = _kernels_py
    BACKEND_NAME = "python"


def get_kernels() -> ModuleType:
    """Module providing ``search_layer`` and ``select_heuristic``."""
    return _ACTIVE


def available_backends() -> dict[str, ModuleType]:
    """All importable kernel backends, keyed by name."""
    out: dict[str, ModuleType] = {"python": _kernels_py}
    if _COMPILED is not None:
        out["compiled"] = _COMPILED
    return out
