"""Flow right-hand sides, gauging, stepping, and the normalization transform."""

import numpy as np
import pytest

from riccilab import flows, targets
from riccilab import geometry as G
from riccilab.errors import NumericalFailureError
from riccilab.grid import Grid, ScalarField, SymTensor2Field, sup_norm
from riccilab.synthesis import (
    constant_fibermetric,
    constant_threeform,
    mode_scalar,
    perturbed_flat_metric,
    smooth_scalar_data,
    smooth_vec_oneform,
    zero_vec_oneform,
)
from riccilab.verification import fixed_point_setup, random_direction


def _roll_state(state, shift, axis):
    arrays = {
        k: np.roll(v, shift, axis=axis) for k, v in state.arrays().items()
    }
    return state.replace_arrays(arrays, state.time)


class TestFixedPoints:
    @pytest.mark.parametrize("system", ["hrf", "warped", "invariant", "connection"])
    def test_rhs_vanishes(self, system):
        st, p, synth, grid = fixed_point_setup(system)
        delta = flows.make_rhs(system, p)(st)
        assert max(sup_norm(v) for v in delta.values()) == 0.0

    def test_flat_hrf_zero_normalization(self):
        grid = Grid((8, 8), (1.0, 1.0))
        m0 = G.flat_metric_state(grid)
        phi = targets.constant_map(grid, targets.euclidean(1), [0.0])
        st = flows.HRFState(g=m0.g.copy(), phi=phi)
        delta = flows.rhs_hrf(st, flows.FlowParams())
        assert max(sup_norm(v) for v in delta.values()) == 0.0

    def test_stationary_over_steps(self):
        st, p, synth, grid = fixed_point_setup("connection")
        cfg = flows.StepperConfig(dt=1e-3, t_end=0.1, record_every=100)
        traj = flows.run_flow(st, p, cfg)
        drift = max(
            sup_norm(traj.states[-1].arrays()[k] - st.arrays()[k])
            for k in st.arrays()
        )
        assert drift == 0.0


class TestWarpedRHS:
    def test_heat_mode_decay(self):
        # pure heat flow: harmonic-map system with c = 0 keeps the flat
        # metric exactly frozen, so phi obeys the plain heat equation and
        # the mode-1 amplitude decays like e^{-t} (1% tolerance at t = 1)
        grid = Grid((64,), (2 * np.pi,))
        m0 = G.flat_metric_state(grid)
        phi = targets.MapField(
            grid, mode_scalar(grid, 0, 1, 0.1).data[..., None],
            target=targets.euclidean(1),
        )
        st = flows.HRFState(g=m0.g.copy(), phi=phi)
        traj = flows.run_flow(
            st, flows.FlowParams(c=0.0), flows.StepperConfig(t_end=1.0, record_every=1000)
        )
        assert sup_norm(traj.states[-1].g.data - m0.g.data) == 0.0
        amp = sup_norm(traj.states[-1].phi.data)
        expected = 0.1 * np.exp(-1.0)
        assert abs(amp - expected) < 0.01 * expected
        # the warped mu = 0 system adds the gradient source to the metric;
        # the mode amplitude still tracks e^{-t} within 1%
        st_w = flows.WarpedState(g=m0.g.copy(), phi=mode_scalar(grid, 0, 1, 0.1))
        traj_w = flows.run_flow(
            st_w, flows.FlowParams(mu=0.0, m=1),
            flows.StepperConfig(t_end=1.0, record_every=1000), normalized=False,
        )
        assert abs(sup_norm(traj_w.states[-1].phi.data) - expected) < 0.01 * expected

    def test_heat_equation_rhs(self):
        grid = Grid((48,), (2 * np.pi,))
        m0 = G.flat_metric_state(grid)
        st = flows.WarpedState(g=m0.g.copy(), phi=mode_scalar(grid, 0, 1, 1.0))
        mdim = 2
        p = flows.FlowParams(mu=0.0, m=mdim)
        delta = flows.rhs_warped(st, p, normalized=False)
        assert sup_norm(delta["phi"] + st.phi.data) < 1e-4
        dphi = G.gradient_scalar(st.phi.data, grid)
        pb = dphi[..., :, None] * dphi[..., None, :]
        assert sup_norm(delta["g"] - 2 * mdim * pb) == 0.0  # flat Ricci is exact zero

    def test_warped_equals_hrf_with_scalar_target(self, rng):
        # plain warped flow at mu=0 is the harmonic-map flow with target R,
        # coupling c = m
        grid = Grid((16, 16), (2 * np.pi, 2 * np.pi))
        g = perturbed_flat_metric(grid, rng, 0.2)
        phi_data = smooth_scalar_data(grid, rng, amplitude=0.4)
        mdim = 3
        wst = flows.WarpedState(g=g, phi=ScalarField(grid, phi_data))
        wdelta = flows.rhs_warped(
            wst, flows.FlowParams(mu=0.0, m=mdim), normalized=False
        )
        hst = flows.HRFState(
            g=g.copy(),
            phi=targets.MapField(
                grid, phi_data[..., None], target=targets.euclidean(1)
            ),
        )
        hdelta = flows.rhs_hrf(hst, flows.FlowParams(c=float(mdim)))
        assert sup_norm(wdelta["g"] - hdelta["g"]) < 1e-13
        assert sup_norm(wdelta["phi"] - hdelta["phi"][..., 0]) < 1e-13

    def test_pregauge_shift_equivalence(self, rng):
        # adding the Lie derivatives along X = -m grad(phi) to the pre-gauge
        # form recovers the plain warped system (stencil-order agreement:
        # the shift composes first-derivative stencils)
        errs = []
        for n in (16, 32):
            grid = Grid((n, n), (2 * np.pi, 2 * np.pi))
            g = perturbed_flat_metric(grid, np.random.default_rng(31), 0.15)
            phi = ScalarField(
                grid, smooth_scalar_data(grid, np.random.default_rng(32), 1, 0.3)
            )
            st = flows.WarpedState(g=g, phi=phi)
            p = flows.FlowParams(mu=-0.5, m=2)
            pre = flows.rhs_warped_pregauge(st, p)
            plain = flows.rhs_warped(st, p, normalized=False)
            m = G.lean_metric(g)
            dphi = G.gradient_scalar(phi.data, grid)
            X = G.VectorField(
                grid, -p.m * np.einsum("...ab,...b->...a", m.g_inv, dphi)
            )
            shift_g = G.lie_derivative_metric(X, m).data
            shift_phi = G.lie_derivative_scalar(X, phi.data, grid)
            err_g = sup_norm(pre["g"] + shift_g - plain["g"])
            err_phi = sup_norm(pre["phi"] + shift_phi - plain["phi"])
            errs.append(max(err_g, err_phi))
        assert errs[0] / errs[1] > 8.0  # pure stencil-composition error, O(h^4)

    def test_mu_validation(self):
        grid = Grid((8, 8), (1.0, 1.0))
        st = flows.WarpedState(
            g=G.flat_metric_state(grid).g, phi=ScalarField(grid, np.zeros(grid.shape))
        )
        with pytest.raises(ValueError):
            flows.rhs_warped(st, flows.FlowParams(mu=-0.3), normalized=False)

    def test_positive_mu_run_stops_before_degeneration(self):
        grid = Grid((12, 12), (2 * np.pi, 2 * np.pi))
        m0 = G.flat_metric_state(grid)
        st = flows.WarpedState(g=m0.g.copy(), phi=mode_scalar(grid, 0, 1, 0.05))
        p = flows.FlowParams(mu=0.5, m=1)
        cfg = flows.StepperConfig(t_end=5.0, record_every=50)
        traj = flows.run_flow(st, p, cfg, normalized=False)
        assert traj.degenerated
        assert traj.times[-1] < np.exp(2 * 0.05)


class TestInvariantRHS:
    def test_one_dimensional_closed_form(self):
        # on a circle dA vanishes identically, so the gauge-field equation
        # reduces to dA/dt = -(s/2) A exactly
        grid = Grid((24,), (2 * np.pi,))
        m0 = G.flat_metric_state(grid)
        rng = np.random.default_rng(3)
        A = smooth_vec_oneform(grid, rng, fiber_rank=1)
        st = flows.InvariantState(
            g=m0.g.copy(), A=A, G=constant_fibermetric(grid, np.eye(1))
        )
        s = 1.3
        p = flows.FlowParams(s=s)
        delta = flows.rhs_invariant(st, p)
        assert sup_norm(delta["A"] + 0.5 * s * A.data) < 1e-14

    def test_g_equation_matches_identity_check(self, rng):
        # with A = 0 the fiber equation is the tension-field flow
        grid = Grid((12, 12), (2 * np.pi, 2 * np.pi))
        g = perturbed_flat_metric(grid, rng, 0.2)
        from riccilab.synthesis import smooth_fibermetric

        Gf = smooth_fibermetric(grid, rng, N=2, amplitude=0.4)
        st = flows.InvariantState(g=g, A=zero_vec_oneform(grid, 2), G=Gf)
        delta = flows.rhs_invariant(st, flows.FlowParams())
        m = G.build_metric_state(g)
        Gmap = targets.MapField(grid, Gf.data, target=targets.spd(2))
        tau = targets.tension_field(Gmap, m)
        assert sup_norm(delta["G"] - tau) < 1e-10


class TestConnectionRHS:
    def test_torsion_square_constant_form(self):
        # H = c dx^dy^dz on the flat metric: H^2 = 2 c^2 Id
        grid = Grid((8, 8, 8), (1.0, 1.0, 1.0))
        m0 = G.flat_metric_state(grid)
        c = 0.7
        H = constant_threeform(grid, c)
        sq = flows.torsion_square(H, m0.g_inv)
        expected = np.broadcast_to(2 * c**2 * np.eye(3), sq.shape)
        assert sup_norm(sq - expected) < 1e-14

    def test_torsion_square_brute_force(self, rng):
        grid = Grid((8, 8, 8), (2 * np.pi,) * 3)
        g = perturbed_flat_metric(grid, rng, 0.2)
        gi = G.inv_sym(g.data)
        from riccilab.synthesis import smooth_threeform

        H = smooth_threeform(grid, rng)
        fast = flows.torsion_square(H, gi)
        full = G.threeform_full_tensor(H.data, grid)
        slow = np.zeros_like(fast)
        for i in range(3):
            for j in range(3):
                acc = np.zeros(grid.shape)
                for p in range(3):
                    for q in range(3):
                        for r in range(3):
                            for s in range(3):
                                acc += (
                                    gi[..., p, q] * gi[..., r, s]
                                    * full[..., i, p, r] * full[..., j, q, s]
                                )
                slow[..., i, j] = acc
        assert sup_norm(fast - slow) < 1e-12

    def test_requires_3d(self):
        grid = Grid((8, 8), (1.0, 1.0))
        with pytest.raises(ValueError):
            constant_threeform(grid, 0.0)


class TestGaugeStructure:
    @pytest.mark.parametrize("system", ["hrf", "warped", "invariant", "connection"])
    def test_translation_equivariance(self, system, rng):
        # circulant stencils commute with grid shifts exactly
        st, p, synth, grid = fixed_point_setup(system)
        direction = random_direction(system, st, rng, amplitude=0.2)
        st = st.replace_arrays(
            {k: v + direction[k] for k, v in st.arrays().items()}, 0.0
        )
        rhs = flows.make_rhs(system, p)
        rolled = rhs(_roll_state(st, 3, 0))
        plain = rhs(st)
        worst = max(
            sup_norm(rolled[k] - np.roll(plain[k], 3, axis=0)) for k in plain
        )
        assert worst < 1e-12

    def test_gauged_minus_ungauged_is_lie_term(self, rng):
        # at g = g0 + eps h the gauge difference is eps L_{W'} g0 + O(eps^2)
        # with W' the linearized DeTurck field (div h - (1/2) grad tr h)
        st, p, synth, grid = fixed_point_setup("connection")
        from dataclasses import replace

        p_ungauged = replace(p, gauge=None)
        h = random_direction("connection", st, rng)["g"]
        eps = 1e-5
        pert = st.replace_arrays(
            {"g": st.g.data + eps * h, "H": st.H.data}, 0.0
        )
        gauged = flows.rhs_connection(pert, p)
        ungauged = flows.rhs_connection(pert, p_ungauged)
        diff = (gauged["g"] - ungauged["g"]) / eps
        m0 = G.flat_metric_state(grid)
        dh = G._stack_derivatives(h, grid)
        div_h = np.einsum("...aab->...b", dh)
        tr_h = np.einsum("...aa->...", h[..., :, :])
        wprime = div_h - 0.5 * G.gradient_scalar(tr_h, grid)
        lie = G.lie_derivative_metric(G.VectorField(grid, wprime), m0).data
        assert sup_norm(diff - lie) < 1e-3 * max(1.0, sup_norm(lie))

    def test_rhs_matches_trajectory_derivative(self):
        # finite-difference time derivative of an integrated path agrees
        # with the instantaneous right-hand side at O(dt)
        grid = Grid((16, 16), (2 * np.pi, 2 * np.pi))
        m0 = G.flat_metric_state(grid)
        st = flows.WarpedState(g=m0.g.copy(), phi=mode_scalar(grid, 0, 1, 0.1))
        p = flows.FlowParams(mu=-0.5, m=1)
        cfg = flows.StepperConfig(t_end=0.05, record_every=1)
        traj = flows.run_flow(st, p, cfg, normalized=False)
        dt = traj.times[1] - traj.times[0]
        fd = (traj.states[1].arrays()["phi"] - traj.states[0].arrays()["phi"]) / dt
        rhs0 = flows.rhs_warped(traj.states[0], p, normalized=False)["phi"]
        assert sup_norm(fd - rhs0) < 10 * dt


class TestStepper:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            flows.StepperConfig(cfl=0.5)
        with pytest.raises(ValueError):
            flows.StepperConfig(dt=-1.0)
        with pytest.raises(ValueError):
            flows.StepperConfig(scheme="euler")

    def test_cfl_dt_resolution(self):
        grid = Grid((32, 32), (2 * np.pi, 2 * np.pi))
        m0 = G.flat_metric_state(grid)
        st = flows.WarpedState(
            g=m0.g.copy(), phi=ScalarField(grid, np.zeros(grid.shape))
        )
        cfg = flows.StepperConfig(cfl=0.1, t_end=1.0)
        dt = flows.resolve_dt(st, cfg)
        h = 2 * np.pi / 32
        assert dt <= 0.1 * h * h + 1e-15

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_nan_detection_aborts(self):
        grid = Grid((12, 12), (2 * np.pi, 2 * np.pi))
        m0 = G.flat_metric_state(grid)
        st = flows.WarpedState(g=m0.g.copy(), phi=mode_scalar(grid, 0, 3, 0.5))
        p = flows.FlowParams(mu=0.0, m=1)
        cfg = flows.StepperConfig(dt=1.0, t_end=40.0, record_every=5)  # wildly unstable
        with pytest.raises(NumericalFailureError):
            flows.run_flow(st, p, cfg, normalized=False)

    def test_single_step(self):
        st, p, synth, grid = fixed_point_setup("warped")
        out = flows.step(st, p, flows.StepperConfig(dt=1e-3, t_end=1.0))
        assert out.time == pytest.approx(1e-3)
        assert sup_norm(out.phi.data - st.phi.data) == 0.0


class TestNormalizeTransform:
    def test_identity_at_s_zero(self):
        grid = Grid((12, 12), (2 * np.pi, 2 * np.pi))
        m0 = G.flat_metric_state(grid)
        st = flows.WarpedState(g=m0.g.copy(), phi=mode_scalar(grid, 0, 1, 0.1))
        p = flows.FlowParams(mu=0.0, m=1)
        traj = flows.run_flow(
            st, p, flows.StepperConfig(t_end=0.3, record_every=2), normalized=False
        )
        times, states, residual, _ = flows.normalize_transform(traj, s=0.0)
        # hrf-style transform: identity on the samples
        np.testing.assert_allclose(times, traj.times)
        for a, b in zip(states, traj.states):
            assert sup_norm(a.arrays()["g"] - b.arrays()["g"]) == 0.0

    def test_constant_solution_maps_to_anchor(self):
        # spatially constant phi solving the comparison ODE transforms to
        # the constant anchor value for all time
        grid = Grid((8, 8), (2 * np.pi, 2 * np.pi))
        m0 = G.flat_metric_state(grid)
        d = 0.3
        st = flows.WarpedState(
            g=m0.g.copy(), phi=ScalarField(grid, np.full(grid.shape, d))
        )
        p = flows.FlowParams(mu=-0.5, m=1)
        traj = flows.run_flow(
            st, p, flows.StepperConfig(t_end=1.0, record_every=4), normalized=False
        )
        _, states, _, _ = flows.normalize_transform(traj, s=2.0)
        for s_ in states:
            assert sup_norm(s_.phi.data - d) < 1e-8

    def test_transform_needs_plain_run(self):
        st, p, synth, grid = fixed_point_setup("warped")
        traj = flows.run_flow(
            st, p, flows.StepperConfig(t_end=0.05, record_every=1), normalized=True
        )
        with pytest.raises(ValueError):
            flows.normalize_transform(traj, s=2.0)
