"""Initial-data builders: band-limited random fields and named mode bumps.

Random fields are synthesized from a few low Fourier modes so that the
fourth-order stencils resolve them well; every builder is deterministic
given the numpy Generator passed in.
"""

from __future__ import annotations

import numpy as np

from .grid import (
    Grid,
    ScalarField,
    SymTensor2Field,
    FiberMetricField,
    ThreeFormField,
    VecOneFormField,
)
from . import targets


def smooth_scalar_data(grid: Grid, rng, kmax=2, amplitude=1.0):
    """Random real trigonometric polynomial with |k|_inf <= kmax, sup ~ amplitude."""
    meshes = grid.meshes()
    out = np.zeros(grid.shape)
    ks = [range(-kmax, kmax + 1)] * grid.dim
    for kvec in np.stack(np.meshgrid(*ks, indexing="ij"), axis=-1).reshape(-1, grid.dim):
        if not np.any(kvec):
            continue
        phase = 2 * np.pi * rng.random()
        coef = rng.normal()
        arg = sum(
            2 * np.pi * kvec[a] * meshes[a] / grid.periods[a] for a in range(grid.dim)
        )
        out += coef * np.cos(arg + phase)
    sup = np.max(np.abs(out))
    if sup > 0:
        out *= amplitude / sup
    return out


def smooth_scalar(grid, rng, kmax=2, amplitude=1.0) -> ScalarField:
    return ScalarField(grid, smooth_scalar_data(grid, rng, kmax, amplitude))


def mode_scalar(grid: Grid, axis=0, mode=1, amplitude=0.1, offset=0.0) -> ScalarField:
    """amplitude * sin(2 pi mode x_axis / L_axis) + offset."""
    x = grid.meshes()[axis]
    return ScalarField(
        grid, offset + amplitude * np.sin(2 * np.pi * mode * x / grid.periods[axis])
    )


def smooth_symtensor(grid, rng, kmax=2, amplitude=1.0) -> SymTensor2Field:
    d = grid.dim
    data = np.zeros(grid.shape + (d, d))
    for i in range(d):
        for j in range(i, d):
            v = smooth_scalar_data(grid, rng, kmax, amplitude)
            data[..., i, j] = v
            data[..., j, i] = v
    return SymTensor2Field(grid, data)


def perturbed_flat_metric(grid, rng, amplitude=0.05, kmax=2) -> SymTensor2Field:
    h = smooth_symtensor(grid, rng, kmax, amplitude)
    return SymTensor2Field(grid, np.broadcast_to(np.eye(grid.dim), h.data.shape) + h.data)


def smooth_vec_oneform(grid, rng, fiber_rank=1, kmax=2, amplitude=1.0) -> VecOneFormField:
    data = np.zeros(grid.shape + (grid.dim, fiber_rank))
    for a in range(grid.dim):
        for i in range(fiber_rank):
            data[..., a, i] = smooth_scalar_data(grid, rng, kmax, amplitude)
    return VecOneFormField(grid, data, fiber_rank=fiber_rank)


def _sym_expm(S):
    """Matrix exponential of a stack of symmetric matrices via eigh."""
    w, V = np.linalg.eigh(S)
    return np.einsum("...ik,...k,...jk->...ij", V, np.exp(w), V)


def smooth_spd_map(grid, rng, N=2, kmax=2, amplitude=0.3, base=None) -> targets.MapField:
    """SPD-valued map G = expm(S0 + random symmetric field)."""
    S = np.zeros(grid.shape + (N, N))
    for i in range(N):
        for j in range(i, N):
            v = smooth_scalar_data(grid, rng, kmax, amplitude)
            S[..., i, j] = v
            S[..., j, i] = v
    if base is not None:
        S = S + np.asarray(base, dtype=float)
    return targets.MapField(grid, _sym_expm(S), target=targets.spd(N))


def smooth_fibermetric(grid, rng, N=2, kmax=2, amplitude=0.3, base=None) -> FiberMetricField:
    G = smooth_spd_map(grid, rng, N=N, kmax=kmax, amplitude=amplitude, base=base)
    return FiberMetricField(grid, G.data, fiber_rank=N)


def constant_fibermetric(grid, matrix) -> FiberMetricField:
    matrix = np.asarray(matrix, dtype=float)
    N = matrix.shape[0]
    data = np.broadcast_to(matrix, grid.shape + (N, N)).copy()
    return FiberMetricField(grid, data, fiber_rank=N)


def zero_vec_oneform(grid, fiber_rank=1) -> VecOneFormField:
    return VecOneFormField(
        grid, np.zeros(grid.shape + (grid.dim, fiber_rank)), fiber_rank=fiber_rank
    )


def constant_threeform(grid, value=0.0) -> ThreeFormField:
    return ThreeFormField(grid, np.full(grid.shape, float(value)))


def smooth_threeform(grid, rng, kmax=2, amplitude=1.0) -> ThreeFormField:
    return ThreeFormField(grid, smooth_scalar_data(grid, rng, kmax, amplitude))
