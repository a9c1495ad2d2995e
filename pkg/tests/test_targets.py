"""Harmonic-map targets: tension fields, pullbacks, the fiber heat identity."""

import numpy as np
import pytest

from riccilab import targets as T
from riccilab import geometry as G
from riccilab.grid import Grid, sup_norm
from riccilab.synthesis import (
    perturbed_flat_metric,
    smooth_scalar_data,
    smooth_spd_map,
    smooth_vec_oneform,
)


def _sym_basis_matrices(N):
    """Coordinate basis E_A for symmetric matrices: E_pp and E_pq + E_qp."""
    basis, labels = [], []
    for p in range(N):
        e = np.zeros((N, N))
        e[p, p] = 1.0
        basis.append(e)
        labels.append((p, p))
    for p in range(N):
        for q in range(p + 1, N):
            e = np.zeros((N, N))
            e[p, q] = e[q, p] = 1.0
            basis.append(e)
            labels.append((p, q))
    return basis, labels


def _spd_metric_components(Gmat, basis):
    """gbar_AB(G) = tr(G^-1 E_A G^-1 E_B) in the coordinate basis."""
    Ginv = np.linalg.inv(Gmat)
    k = len(basis)
    out = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            out[a, b] = np.trace(Ginv @ basis[a] @ Ginv @ basis[b])
    return out


def _spd_christoffels_fd(Gmat, basis, step=1e-5):
    """Levi-Civita symbols of the invariant SPD metric by central differences."""
    k = len(basis)
    dg = np.empty((k, k, k))  # dg[c, a, b] = d g_ab / d t_c
    for c in range(k):
        plus = _spd_metric_components(Gmat + step * basis[c], basis)
        minus = _spd_metric_components(Gmat - step * basis[c], basis)
        dg[c] = (plus - minus) / (2 * step)
    g_inv = np.linalg.inv(_spd_metric_components(Gmat, basis))
    gamma = np.empty((k, k, k))  # gamma[c, a, b] = Gamma^c_ab
    for c in range(k):
        for a in range(k):
            for b in range(k):
                s = 0.0
                for d in range(k):
                    s += g_inv[c, d] * (dg[a][d, b] + dg[b][d, a] - dg[d][a, b])
                gamma[c, a, b] = 0.5 * s
    return gamma


class TestTargetSpaces:
    def test_constructors(self):
        assert T.euclidean(3).value_shape == (3,)
        assert T.spd(2).value_shape == (2, 2)
        with pytest.raises(ValueError):
            T.TargetSpace("weird", 2)

    def test_spd_map_validation(self):
        grid = Grid((8,), (1.0,))
        bad = np.broadcast_to(np.diag([1.0, -1.0]), grid.shape + (2, 2)).copy()
        with pytest.raises(Exception):
            T.MapField(grid, bad, target=T.spd(2))

    def test_spd_metric_positive_definite(self, rng):
        # gbar_G is positive-definite on symmetric matrices at random SPD G
        basis, _ = _sym_basis_matrices(3)
        for _ in range(20):
            A = rng.normal(size=(3, 3))
            Gmat = A @ A.T + 0.5 * np.eye(3)
            comp = _spd_metric_components(Gmat, basis)
            assert np.min(np.linalg.eigvalsh(0.5 * (comp + comp.T))) > 0


class TestTensionField:
    def test_constant_maps(self):
        grid = Grid((12, 12), (1.0, 1.0))
        m = G.flat_metric_state(grid)
        for target, value in [
            (T.euclidean(2), [0.3, -1.0]),
            (T.spd(2), [[2.0, 0.3], [0.3, 1.0]]),
        ]:
            phi = T.constant_map(grid, target, value)
            assert sup_norm(T.tension_field(phi, m)) == 0.0

    def test_euclidean_circle_mode(self):
        grid = Grid((64,), (2 * np.pi,))
        m = G.flat_metric_state(grid)
        data = np.sin(grid.axis_coords(0))[..., None]
        phi = T.MapField(grid, data, target=T.euclidean(1))
        assert sup_norm(T.tension_field(phi, m) + data) < 5e-6

    def test_spd_christoffel_sum_oracle(self, rng):
        # closed-form tension vs the Christoffel-sum form with symbols
        # obtained by finite differences of the invariant metric
        grid = Grid((16,), (2 * np.pi,))
        m = G.flat_metric_state(grid)
        N = 2
        Gmap = smooth_spd_map(grid, rng, N=N, kmax=1, amplitude=0.3)
        closed = T.tension_field(Gmap, m)

        basis, labels = _sym_basis_matrices(N)
        k = len(basis)
        # coordinates of the map and their derivatives
        coords = np.stack(
            [Gmap.data[..., p, q] for (p, q) in labels], axis=-1
        )  # (n, k)
        dcoords = G.gradient_scalar(coords, grid)[..., 0, :]  # 1D base
        lap_coords = G.laplacian_scalar_data(coords, m)
        oracle = np.zeros_like(coords)
        for idx in range(grid.points[0]):
            gamma = _spd_christoffels_fd(Gmap.data[idx], basis)
            quad = np.einsum("cab,a,b->c", gamma, dcoords[idx], dcoords[idx])
            oracle[idx] = lap_coords[idx] + quad
        closed_coords = np.stack(
            [closed[..., p, q] for (p, q) in labels], axis=-1
        )
        assert sup_norm(closed_coords - oracle) < 1e-8

    def test_congruence_equivariance(self, rng):
        # G -> P^T G P is an isometry of the SPD target: the tension maps
        # by the same congruence
        grid = Grid((16, 16), (2 * np.pi, 2 * np.pi))
        m = G.build_metric_state(perturbed_flat_metric(grid, rng, 0.2))
        Gmap = smooth_spd_map(grid, rng, N=2, amplitude=0.4)
        P = np.array([[1.0, 0.7], [-0.2, 1.4]])
        tau = T.tension_field(Gmap, m)
        moved = T.MapField(
            grid, np.einsum("pi,...pq,qj->...ij", P, Gmap.data, P), target=T.spd(2)
        )
        tau_moved = T.tension_field(moved, m)
        assert sup_norm(tau_moved - np.einsum("pi,...pq,qj->...ij", P, tau, P)) < 1e-10


class TestPullback:
    def test_constant_map_vanishes(self):
        grid = Grid((8, 8), (1.0, 1.0))
        phi = T.constant_map(grid, T.spd(2), np.eye(2))
        assert sup_norm(T.pullback_form(phi)) == 0.0

    def test_linear_euclidean_map(self):
        # phi = a x: pullback = a^2 dx^2 (use a resolvable linear-per-period map)
        grid = Grid((32,), (2 * np.pi,))
        a = 0.8
        data = (a * np.sin(grid.axis_coords(0)))[:, None]
        phi = T.MapField(grid, data, target=T.euclidean(1))
        pb = T.pullback_form(phi).data[..., 0, 0]
        expected = (a * np.cos(grid.axis_coords(0))) ** 2
        assert sup_norm(pb - expected) < 1e-4

    def test_positive_semidefinite(self, rng):
        grid = Grid((10, 10), (1.0, 1.0))
        for _ in range(10):
            Gmap = smooth_spd_map(grid, rng, N=2, amplitude=0.5)
            pb = T.pullback_form(Gmap).data
            eigs = np.linalg.eigvalsh(pb)
            assert np.min(eigs) > -1e-12

    def test_spd_trace_loop_oracle(self, rng):
        # independent trace-loop evaluation of the gradient term:
        # (1/2) G^{ik} G^{jl} D_a G_ij D_b G_kl = (1/2) pullback
        grid = Grid((12,), (2 * np.pi,))
        Gmap = smooth_spd_map(grid, rng, N=2, amplitude=0.4)
        dG = G.gradient_scalar(Gmap.data, grid)
        Ginv = np.linalg.inv(Gmap.data)
        N = 2
        loop = np.zeros(grid.shape + (1, 1))
        for i in range(N):
            for kk in range(N):
                for j in range(N):
                    for ll in range(N):
                        loop[..., 0, 0] += 0.5 * (
                            Ginv[..., i, kk] * Ginv[..., j, ll]
                            * dG[..., 0, i, j] * dG[..., 0, kk, ll]
                        )
        pb = T.pullback_form(Gmap).data
        assert sup_norm(loop[..., 0, 0] - 0.5 * pb[..., 0, 0]) < 1e-12


class TestFiberHeatIdentity:
    def test_trivial_zero(self):
        grid = Grid((8, 8), (1.0, 1.0))
        m = G.flat_metric_state(grid)
        Gmap = T.constant_map(grid, T.spd(2), np.eye(2))
        A = T.VecOneFormField(grid, np.zeros(grid.shape + (2, 2)), fiber_rank=2)
        assert T.check_modified_hmf_identity(Gmap, A, m) == 0.0

    def test_zero_connection_random_map(self, rng):
        grid = Grid((16,), (2 * np.pi,))
        m = G.flat_metric_state(grid)
        Gmap = smooth_spd_map(grid, rng, N=2, amplitude=0.5)
        A = T.VecOneFormField(grid, np.zeros(grid.shape + (1, 2)), fiber_rank=2)
        assert T.check_modified_hmf_identity(Gmap, A, m) < 1e-10

    def test_random_connection_and_map(self, rng):
        grid = Grid((12, 12), (2 * np.pi, 2 * np.pi))
        m = G.build_metric_state(perturbed_flat_metric(grid, rng, 0.2))
        Gmap = smooth_spd_map(grid, rng, N=2, amplitude=0.5)
        A = smooth_vec_oneform(grid, rng, fiber_rank=2)
        assert T.check_modified_hmf_identity(Gmap, A, m) < 1e-10

    def test_congruence_keeps_residual_small(self, rng):
        grid = Grid((12,), (2 * np.pi,))
        m = G.flat_metric_state(grid)
        Gmap = smooth_spd_map(grid, rng, N=2, amplitude=0.4)
        A = smooth_vec_oneform(grid, rng, fiber_rank=2)
        P = np.array([[1.2, 0.4], [0.0, 0.9]])
        moved_G = T.MapField(
            grid, np.einsum("pi,...pq,qj->...ij", P, Gmap.data, P), target=T.spd(2)
        )
        Pinv = np.linalg.inv(P)
        moved_A = T.VecOneFormField(
            grid, np.einsum("...ak,ik->...ai", A.data, Pinv), fiber_rank=2
        )
        assert T.check_modified_hmf_identity(moved_G, moved_A, m) < 1e-10

    def test_coupling_constant_probe(self, rng):
        # which coupling weight makes the metric-equation gradient term equal
        # 2c * pullback: records c = 1/4 for the unscaled trace metric
        grid = Grid((12,), (2 * np.pi,))
        m = G.flat_metric_state(grid)
        Gmap = smooth_spd_map(grid, rng, N=3, amplitude=0.4)
        c = T.coupling_constant_probe(Gmap, m)
        assert abs(c - 0.25) < 1e-12
