"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines; the same checks (at the same sizes and tolerances) back the CLI's
``riccilab verify --full``.
"""

import numpy as np
import pytest

from riccilab import estimates, flows, stability, verification as V
from riccilab.geometry import SyntheticCurvature, flat_metric_state
from riccilab.grid import Grid, ScalarField, sup_norm
from riccilab.synthesis import constant_threeform, zero_vec_oneform


def _report(criterion, result):
    print(f"criterion {criterion}: {result.line()}")
    assert result.passed, f"criterion {criterion} failed: {result.as_dict()}"


# run once, shared by criteria 1 and 2 (same trajectory)
@pytest.fixture(scope="module")
def sandwich_results():
    return V.check_sandwich_and_gradient(
        points=64, t_end=5.0, margin=1e-3, amplitude=0.1
    )


def test_criterion_01_sandwich_bound(sandwich_results):
    res = sandwich_results[0]
    _report(1, res)
    assert res.detail["runtime_ok"], "run exceeded the 2 minute budget"


def test_criterion_02_gradient_decay(sandwich_results):
    _report(2, sandwich_results[1])


def test_criterion_03_comparison_ode():
    _report(3, V.check_comparison_ode())


def test_criterion_04_algebraic_identity():
    _report(4, V.check_algebraic_identity(draws=10_000))


def test_criterion_05_quadratic_form_bound():
    _report(5, V.check_l0_spectrum_bound(points=16, rayleigh_samples=500))


def test_criterion_06_linearization_lemmas():
    for res in V.check_linearizations():
        _report(6, res)


def test_criterion_07_kernel_dimensions():
    for res in V.check_kernels():
        _report(7, res)


def test_criterion_08_tension_field_equivalence():
    _report(8, V.check_hmf_equivalence(draws=100))


def test_criterion_09_warped_ricci_decomposition():
    _report(9, V.check_warped_ricci_refinement(sizes=(32, 64)))


def test_criterion_10_spectrum_vs_dynamics():
    for res in V.check_spectrum_vs_dynamics():
        _report(10, res)


def test_criterion_11_normalization_transform():
    _report(11, V.check_normalize_transform())


def test_criterion_12_evolution_identities():
    _report(12, V.check_evolution_identities())


def test_criterion_13_fixed_point_exactness():
    for res in V.check_fixed_points(steps=1000):
        _report(13, res)
        assert res.detail["rhs_sup"] <= 1e-13
        assert res.detail["drift"] <= 1e-10
