"""Compiled stencil core vs pure-numpy fallback."""

import numpy as np
import pytest

from riccilab import backend


requires_compiled = pytest.mark.skipif(
    backend.use("auto") != "compiled", reason="compiled extension not built"
)


def teardown_module(module):
    backend.use("auto")


@requires_compiled
def test_backends_agree_bitwise(rng):
    from riccilab import _stencil_core, _stencil_numpy

    for shape in [(4, 16, 1), (2, 32, 9), (1, 8, 48)]:
        a = np.ascontiguousarray(rng.normal(size=shape))
        for fn in ("diff1_axis", "diff2_axis"):
            c = np.asarray(getattr(_stencil_core, fn)(a, 0.37))
            p = getattr(_stencil_numpy, fn)(a, 0.37)
            np.testing.assert_allclose(c, p, rtol=0, atol=1e-14)


def test_runtime_switch(rng):
    a = rng.normal(size=(16, 16))
    backend.use("python")
    assert backend.BACKEND == "python"
    out_py = backend.diff_axis(a, 0, 0.1, 1)
    name = backend.use("auto")
    out_auto = backend.diff_axis(a, 0, 0.1, 1)
    np.testing.assert_allclose(out_py, out_auto, atol=1e-14)
    assert backend.BACKEND == name


def test_diff_axis_rejects_bad_order(rng):
    with pytest.raises(ValueError):
        backend.diff_axis(rng.normal(size=(8,)), 0, 0.1, 3)


def test_symbols_match_operator():
    # stencil symbols reproduce the action on pure modes
    n, L = 32, 2 * np.pi
    h = L / n
    x = np.arange(n) * h
    for k in (1, 3, 5):
        theta = k * h * 2 * np.pi / L
        f = np.cos(2 * np.pi * k * x / L)
        d2 = backend.diff_axis(f, 0, h, 2)
        np.testing.assert_allclose(
            d2, backend.diff2_symbol(theta, h) * f, atol=1e-11
        )
        d1 = backend.diff_axis(np.sin(2 * np.pi * k * x / L), 0, h, 1)
        np.testing.assert_allclose(
            d1, backend.diff1_symbol(theta, h) * f, atol=1e-11
        )
