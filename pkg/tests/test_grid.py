"""Grid construction, discrete calculus and field serialization."""

import numpy as np
import pytest

from riccilab.errors import GridMismatchError
from riccilab.grid import (
    Grid,
    ScalarField,
    SymTensor2Field,
    ThreeFormField,
    integrate,
    load_field,
    partial_derivative,
    save_field,
    sup_norm,
)
from riccilab.synthesis import smooth_scalar, smooth_vec_oneform

from conftest import observed_order


def test_grid_invariants():
    g = Grid((16, 32), (1.0, 4.0))
    assert g.dim == 2
    assert g.spacing == (1.0 / 16, 4.0 / 32)
    assert g.npoints == 512
    with pytest.raises(ValueError):
        Grid((4,), (1.0,))  # too few points for the stencil
    with pytest.raises(ValueError):
        Grid((16, 16, 16, 16), (1.0,) * 4)
    with pytest.raises(ValueError):
        Grid((16,), (-1.0,))


def test_derivative_of_constant_is_zero():
    g = Grid((16,), (2 * np.pi,))
    f = ScalarField(g, np.full(g.shape, 0.7))
    assert sup_norm(partial_derivative(f, 0, 1)) == 0.0
    assert sup_norm(partial_derivative(f, 0, 2)) == 0.0


def test_derivative_matches_trig():
    g = Grid((64,), (2 * np.pi,))
    x = g.axis_coords(0)
    f = ScalarField(g, np.sin(x))
    d1 = partial_derivative(f, 0, 1)
    assert sup_norm(ScalarField(g, d1.data - np.cos(x))) < 5e-6
    d2 = partial_derivative(f, 0, 2)
    assert sup_norm(ScalarField(g, d2.data + np.sin(x))) < 5e-6


def test_derivative_general_period():
    L = 3.0
    g = Grid((96,), (L,))
    x = g.axis_coords(0)
    f = ScalarField(g, np.sin(2 * np.pi * x / L))
    d1 = partial_derivative(f, 0, 1)
    expected = (2 * np.pi / L) * np.cos(2 * np.pi * x / L)
    assert sup_norm(ScalarField(g, d1.data - expected)) < 1e-5


def test_second_stencil_vs_composed_first(rng):
    # the compact order-2 stencil and twice-applied order-1 agree at O(h^4)
    errs = []
    for n in (24, 48):
        g = Grid((n, n), (2 * np.pi, 2 * np.pi))
        f = smooth_scalar(g, np.random.default_rng(3), kmax=2)
        direct = partial_derivative(f, 0, 2)
        composed = partial_derivative(partial_derivative(f, 0, 1), 0, 1)
        errs.append(sup_norm(direct - composed))
    assert observed_order(errs[0], errs[1]) >= 3.0


def test_mixed_derivatives_commute(rng):
    errs = []
    for n in (24, 48):
        g = Grid((n, n), (2 * np.pi, 2 * np.pi))
        f = smooth_scalar(g, np.random.default_rng(4), kmax=2)
        ab = partial_derivative(partial_derivative(f, 0, 1), 1, 1)
        ba = partial_derivative(partial_derivative(f, 1, 1), 0, 1)
        # discrete stencils commute exactly; this is a round-off check
        errs.append(sup_norm(ab - ba))
    assert max(errs) < 1e-12


def test_axis_out_of_range():
    g = Grid((16,), (1.0,))
    f = ScalarField(g, np.zeros(g.shape))
    with pytest.raises(IndexError):
        partial_derivative(f, 1, 1)


def test_refinement_order_of_derivative():
    errs = []
    for n in (32, 64):
        g = Grid((n,), (2 * np.pi,))
        x = g.axis_coords(0)
        f = ScalarField(g, np.sin(3 * x))
        d = partial_derivative(f, 0, 1)
        errs.append(sup_norm(ScalarField(g, d.data - 3 * np.cos(3 * x))))
    # doubling must reduce the error by at least 2^3 (observed order >= 3)
    assert errs[0] / errs[1] >= 8.0


def test_integrate_torus_area():
    g = Grid((16, 16), (2 * np.pi, 2 * np.pi))
    one = ScalarField(g, np.ones(g.shape))
    assert abs(integrate(one, one) - 4 * np.pi**2) < 1e-12


def test_integrate_mean_zero_mode():
    g = Grid((32,), (2 * np.pi,))
    f = ScalarField(g, np.sin(g.axis_coords(0)))
    assert abs(integrate(f)) < 1e-12


def test_integration_by_parts_exact(rng):
    g = Grid((24, 24), (2 * np.pi, 3.0))
    f = smooth_scalar(g, rng, kmax=3)
    for axis in range(2):
        assert abs(integrate(partial_derivative(f, axis, 1))) < 1e-13


def test_integrate_grid_mismatch():
    a = ScalarField(Grid((16,), (1.0,)), np.zeros(16))
    b = ScalarField(Grid((32,), (1.0,)), np.zeros(32))
    with pytest.raises(GridMismatchError):
        integrate(a, b)


def test_sup_norm_zero_field():
    g = Grid((8, 8), (1.0, 1.0))
    assert sup_norm(ScalarField(g, np.zeros(g.shape))) == 0.0


def test_symtensor_requires_symmetry():
    g = Grid((8, 8), (1.0, 1.0))
    bad = np.zeros(g.shape + (2, 2))
    bad[..., 0, 1] = 1.0
    with pytest.raises(ValueError):
        SymTensor2Field(g, bad)


def test_threeform_requires_3d():
    with pytest.raises(ValueError):
        ThreeFormField(Grid((8, 8), (1.0, 1.0)), np.zeros((8, 8)))


def test_field_roundtrip(tmp_path, rng):
    g = Grid((8, 12), (1.0, 2.0))
    f = smooth_vec_oneform(g, rng, fiber_rank=3)
    path = tmp_path / "field.rlf"
    save_field(f, path)
    back = load_field(path)
    assert type(back) is type(f)
    assert back.grid == f.grid
    assert back.fiber_rank == 3
    np.testing.assert_array_equal(back.data, f.data)


def test_field_arithmetic(rng):
    g = Grid((8,), (1.0,))
    a = smooth_scalar(g, rng)
    b = smooth_scalar(g, rng)
    np.testing.assert_allclose((a + b).data, a.data + b.data)
    np.testing.assert_allclose((a - b).data, a.data - b.data)
    np.testing.assert_allclose((2.0 * a).data, 2.0 * a.data)
