"""Kernel backend selection.

The hot tree kernels exist twice: a compiled Cython extension and a pure
Python mirror with identical semantics (bit-identical arithmetic, same node
layout). The compiled module is used when importable; setting the
environment variable ``OCTFUSE_PURE=1`` forces the fallback, which is what
the backend-equivalence tests and the benchmark rely on.
"""

from __future__ import annotations

import os

from . import _pykernels

_kernels = None
if not os.environ.get("OCTFUSE_PURE"):
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        _kernels = None


def get():
    """Return the active kernel module."""
    return _kernels if _kernels is not None else _pykernels


def name() -> str:
    return "compiled" if _kernels is not None else "pure"
