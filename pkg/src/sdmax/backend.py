"""Kernel backend selection: compiled extension when available, numpy otherwise.

Set ``SDM_BACKEND=numpy`` to force the fallback, ``SDM_BACKEND=cython`` to
require the extension (ImportError if missing). ``use()`` switches at
runtime, which the backend benchmark relies on.
"""

from __future__ import annotations

import os

from . import kernels_py
from .errors import ConfigError

try:
    from . import _kernels
except ImportError:
    _kernels = None

_impl = None


def available() -> list[str]:
    names = ["numpy"]
    if _kernels is not None:
        names.insert(0, "cython")
    return names


def use(name: str):
    """Select the active backend by name; returns the backend module."""
    global _impl
    if name in ("cython", "compiled"):
        if _kernels is None:
            raise ImportError("compiled kernels are not built; run pip install -e .")
        _impl = _kernels
    elif name in ("numpy", "python"):
        _impl = kernels_py
    elif name == "auto":
        _impl = _kernels if _kernels is not None else kernels_py
    else:
        raise ConfigError(f"unknown backend {name!r} (expected cython, numpy or auto)")
    return _impl


def backend_name() -> str:
    return _impl.NAME


def forward_batch(weights, biases, x, want_cache: bool = False):
    return _impl.forward_batch(weights, biases, x, want_cache)


def input_grad_batch(weights, acts, dl_ds):
    return _impl.input_grad_batch(weights, acts, dl_ds)


use(os.environ.get("SDM_BACKEND", "auto").strip().lower() or "auto")
