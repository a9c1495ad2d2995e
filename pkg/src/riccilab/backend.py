"""Stencil backend selection.

At import time the compiled extension is preferred, with the pure-numpy
kernels as fallback.  ``RICCILAB_BACKEND=python`` (or ``compiled``) in the
environment forces a choice; :func:`use` switches at runtime, which the
benchmark harness relies on to time both implementations in one process.

Derivatives along an arbitrary grid axis are routed through a
(pre, n, post) contiguous view so both backends share one entry point.
"""

from __future__ import annotations

import os

import numpy as np

from . import _stencil_numpy

_impl = None
BACKEND = "python"


def _select_initial():
    global _impl, BACKEND
    forced = os.environ.get("RICCILAB_BACKEND", "auto").lower()
    if forced in ("python", "numpy"):
        _impl, BACKEND = _stencil_numpy, "python"
        return
    try:
        from . import _stencil_core

        _impl, BACKEND = _stencil_core, "compiled"
    except ImportError:
        if forced == "compiled":
            raise ImportError(
                "RICCILAB_BACKEND=compiled but the extension is not built; "
                "run: pip install -e . --no-build-isolation"
            )
        _impl, BACKEND = _stencil_numpy, "python"


def use(name: str) -> str:
    """Switch backend at runtime ('compiled', 'python' or 'auto'). Returns the active name."""
    global _impl, BACKEND
    name = name.lower()
    if name in ("python", "numpy"):
        _impl, BACKEND = _stencil_numpy, "python"
    elif name in ("compiled", "auto"):
        try:
            from . import _stencil_core

            _impl, BACKEND = _stencil_core, "compiled"
        except ImportError:
            if name == "compiled":
                raise
            _impl, BACKEND = _stencil_numpy, "python"
    else:
        raise ValueError(f"unknown backend {name!r}")
    return BACKEND


def diff_axis(values: np.ndarray, axis: int, spacing: float, order: int) -> np.ndarray:
    """Periodic 4th-order derivative of ``values`` along ``axis``.

    ``order`` selects the first-derivative stencil or the compact
    second-derivative stencil.  Component axes (anything after the grid
    axes) ride along untouched.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    a = np.asarray(values, dtype=np.float64)
    n = a.shape[axis]
    pre = post = 1
    for s in a.shape[:axis]:
        pre *= s
    for s in a.shape[axis + 1:]:
        post *= s
    flat = np.ascontiguousarray(a).reshape(pre, n, post)
    if order == 1:
        out = _impl.diff1_axis(flat, spacing)
    else:
        out = _impl.diff2_axis(flat, spacing)
    return np.asarray(out).reshape(a.shape)


def diff1_symbol(theta: np.ndarray, spacing: float) -> np.ndarray:
    """Fourier symbol magnitude of the first-derivative stencil: D e^{ikx} = i*m*e^{ikx}."""
    return (8.0 * np.sin(theta) - np.sin(2.0 * theta)) / (6.0 * spacing)


def diff2_symbol(theta: np.ndarray, spacing: float) -> np.ndarray:
    """Fourier symbol of the second-derivative stencil (real, <= 0)."""
    return (-30.0 + 32.0 * np.cos(theta) - 2.0 * np.cos(2.0 * theta)) / (
        12.0 * spacing * spacing
    )


_select_initial()
