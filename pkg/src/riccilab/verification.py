"""Verification battery: each check returns a CheckResult and is shared by
the CLI ``verify`` subcommand and the acceptance test suite (which runs the
checks at their full contractual sizes and tolerances).
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import estimates, flows, stability, synthesis, targets
from .geometry import (
    SyntheticCurvature,
    build_metric_state,
    flat_metric_state,
    lean_metric,
)
from .grid import Grid, ScalarField, SymTensor2Field, sup_norm
from .synthesis import (
    constant_fibermetric,
    mode_scalar,
    smooth_scalar_data,
    smooth_symtensor,
    smooth_vec_oneform,
    zero_vec_oneform,
    constant_threeform,
    smooth_threeform,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: value={self.value:.3e} tol={self.tolerance:.3e}"

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "value": float(self.value),
            "tolerance": float(self.tolerance),
            "detail": {k: _plain(v) for k, v in self.detail.items()},
        }


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


# ---------------------------------------------------------------------------
# fixed points of the four systems


def fixed_point_setup(system: str, points=None, fiber_rank=2, target_dim=2):
    """Declared Einstein fixed point of a system on its synthetic reference.

    Warped runs use a 2-dimensional base (constant curvature K = -1, so
    lam = -1); the other systems use 3-dimensional bases (lam = -2).
    Returns (state, params, synth, grid).
    """
    if system == "warped":
        pts = points or (16, 16)
        grid = Grid(pts, tuple(2 * np.pi for _ in pts))
        synth = SyntheticCurvature(K=-1.0, n=2)
        m0 = flat_metric_state(grid)
        p = flows.fixed_point_params(synth, mu=-0.5, m=1, phi_avg0=0.25, gauge=m0)
        st = flows.WarpedState(
            g=m0.g.copy(), phi=ScalarField(grid, np.full(grid.shape, 0.25))
        )
        return st, p, synth, grid
    pts = points or (8, 8, 8)
    grid = Grid(pts, tuple(2 * np.pi for _ in pts))
    synth = SyntheticCurvature(K=-1.0, n=3)
    m0 = flat_metric_state(grid)
    if system == "hrf":
        p = flows.fixed_point_params(synth, c=1.0, gauge=m0)
        phi0 = targets.constant_map(
            grid, targets.euclidean(target_dim), 0.3 * np.arange(1, target_dim + 1)
        )
        st = flows.HRFState(g=m0.g.copy(), phi=phi0)
    elif system == "invariant":
        p = flows.fixed_point_params(synth, gauge=m0)
        G0 = constant_fibermetric(grid, np.array([[2.0, 0.5], [0.5, 1.0]])[:fiber_rank, :fiber_rank])
        st = flows.InvariantState(
            g=m0.g.copy(), A=zero_vec_oneform(grid, fiber_rank), G=G0
        )
    elif system == "connection":
        p = flows.fixed_point_params(synth, gauge=m0)
        st = flows.ConnectionState(g=m0.g.copy(), H=constant_threeform(grid, 0.0))
    else:
        raise ValueError(f"unknown system {system!r}")
    return st, p, synth, grid


def random_direction(system: str, state, rng, kmax=2, amplitude=0.5):
    """Smooth band-limited direction matching a state's field layout."""
    grid = state.grid
    direction = {"g": smooth_symtensor(grid, rng, kmax, amplitude).data}
    if system in ("hrf",):
        shape = state.phi.data.shape
        psi = np.stack(
            [
                smooth_scalar_data(grid, rng, kmax, amplitude)
                for _ in range(int(np.prod(shape[grid.dim:])))
            ],
            axis=-1,
        ).reshape(shape)
        direction["phi"] = psi
    elif system == "warped":
        direction["phi"] = smooth_scalar_data(grid, rng, kmax, amplitude)
    elif system == "invariant":
        direction["A"] = smooth_vec_oneform(
            grid, rng, state.fiber_rank, kmax, amplitude
        ).data
        F = smooth_symtensor_fiber(grid, rng, state.fiber_rank, kmax, amplitude)
        direction["G"] = F
    elif system == "connection":
        direction["H"] = smooth_scalar_data(grid, rng, kmax, amplitude)
    return direction


def smooth_symtensor_fiber(grid, rng, N, kmax, amplitude):
    F = np.zeros(grid.shape + (N, N))
    for i in range(N):
        for j in range(i, N):
            v = smooth_scalar_data(grid, rng, kmax, amplitude)
            F[..., i, j] = v
            F[..., j, i] = v
    return F


# ---------------------------------------------------------------------------
# individual checks


def check_comparison_ode() -> CheckResult:
    value = abs(estimates.comparison_solution(-0.5, 0.0, 1.0) - 0.5 * np.log(2.0))
    return CheckResult("comparison_ode_value", value <= 1e-12, value, 1e-12)


def check_algebraic_identity(draws=10_000, seed=7) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        n = int(rng.integers(3, 6))
        sec = stability.random_einstein_sec(n, rng)
        lam_i = rng.normal(size=n) * 2.0
        worst = max(worst, stability.algebraic_identity_check(lam_i, sec))
    return CheckResult(
        "algebraic_curvature_identity", worst <= 1e-10, worst, 1e-10,
        {"draws": draws, "n_range": [3, 5]},
    )


def check_l0_spectrum_bound(points=16, rayleigh_samples=500, seed=3) -> CheckResult:
    grid = Grid((points,) * 3, (2 * np.pi,) * 3)
    synth = SyntheticCurvature(K=-1.0, n=3)
    op = stability.make_block_operator("metric", grid, lam=synth.lam, synth=synth)
    rep = stability.spectrum(op, k=8)
    bound = synth.K * (synth.n - 2)
    rng = np.random.default_rng(seed)
    rayleigh = stability.quadratic_form_bound(op, rayleigh_samples, rng)
    ok = rep.top <= bound + 1e-6 and rayleigh <= rep.top + 1e-6
    return CheckResult(
        "metric_block_spectral_bound", ok, rep.top, bound + 1e-6,
        {"rayleigh_max": rayleigh, "verdict": rep.verdict, "dof": op.dof},
    )


def check_linearizations(points=None, seed=11, eps_pair=(1e-3, 1e-4)) -> list:
    """Analytic blocks vs centred-difference linearization, all four systems."""
    results = []
    rng = np.random.default_rng(seed)
    for system in ("hrf", "warped", "invariant", "connection"):
        st, p, synth, grid = fixed_point_setup(system, points)
        kw = (
            {"target_dim": st.phi.data.shape[-1]}
            if system == "hrf"
            else {"fiber_rank": st.fiber_rank}
            if system == "invariant"
            else {}
        )
        ops = stability.system_block_operators(
            system, grid, synth, assemble="never", **kw
        )
        rhs = flows.make_rhs(system, p)
        direction = random_direction(system, st, rng)
        lin = stability.linearize_numeric(rhs, st, direction, eps_pair)
        residuals, orders = {}, {}
        for name, op in ops.items():
            expected = op.apply(direction[name])
            res = {
                eps: sup_norm(lin.per_eps[eps][name] - expected)
                for eps in eps_pair
            }
            coarse, fine = res[eps_pair[0]], res[eps_pair[1]]
            if coarse < 1e-10:
                order = np.inf  # quadratic nonlinearity: both residuals at round-off
            else:
                order = np.log(coarse / max(fine, 1e-300)) / np.log(
                    eps_pair[0] / eps_pair[1]
                )
            residuals[name] = fine
            orders[name] = order
        worst = max(residuals.values())
        worst_order = min(orders.values())
        ok = worst <= 1e-6 and (worst_order >= 1.9 or worst_order == np.inf)
        results.append(
            CheckResult(
                f"linearization_{system}", ok, worst, 1e-6,
                {
                    "residual_at_1e-4": residuals,
                    "observed_order": {k: float(v) for k, v in orders.items()},
                    "base_residual": lin.base_residual,
                },
            )
        )
    return results


def check_kernels(seed=5) -> list:
    """Kernel dimensions / harmonic top eigenvalues of the matter blocks."""
    results = []
    grid1 = Grid((48,), (2 * np.pi,))
    for k in (1, 2, 3):
        op = stability.make_block_operator("map", grid1, target_dim=k)
        rep = stability.spectrum(op, k=k + 3)
        results.append(
            CheckResult(
                f"map_block_kernel_k{k}", rep.kernel_dim == k, rep.kernel_dim, k,
                {"verdict": rep.verdict, "gap": rep.gap},
            )
        )
    grid2 = Grid((12, 12), (2 * np.pi, 2 * np.pi))
    op = stability.make_block_operator("fiber", grid2, fiber_rank=2, trace_free=True)
    rep = stability.spectrum(op, k=6)
    results.append(
        CheckResult(
            "fiber_block_tracefree_kernel", rep.kernel_dim == 2, rep.kernel_dim, 2,
            {"verdict": rep.verdict, "gap": rep.gap},
        )
    )
    lam = -1.0
    op = stability.make_block_operator("oneform", grid2, lam=lam, fiber_rank=1)
    rep = stability.spectrum(op, k=6)
    err = abs(rep.top - lam)
    results.append(
        CheckResult(
            "oneform_block_harmonic_top", err <= 1e-6, err, 1e-6,
            {"top": rep.top, "verdict": rep.verdict},
        )
    )
    return results


def check_hmf_equivalence(draws=100, seed=23) -> CheckResult:
    """Two-path residual of the fiber heat operator on random (g, A, G)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(draws):
        dim = 1 if i % 2 == 0 else 2
        pts = (24,) if dim == 1 else (12, 12)
        grid = Grid(pts, tuple(2 * np.pi for _ in pts))
        g = synthesis.perturbed_flat_metric(grid, rng, amplitude=0.2)
        m = build_metric_state(g)
        N = 2
        G = synthesis.smooth_spd_map(grid, rng, N=N, amplitude=0.4)
        A = smooth_vec_oneform(grid, rng, N, amplitude=0.5)
        worst = max(worst, targets.check_modified_hmf_identity(G, A, m))
    return CheckResult(
        "fiber_heat_two_path", worst <= 1e-10, worst, 1e-10, {"draws": draws}
    )


def check_warped_ricci_refinement(sizes=(32, 64)) -> CheckResult:
    """Oracle residuals must fall by >= 8 per doubling; mixed block at zero."""
    residuals = []
    mixed_worst = 0.0
    for n in sizes:
        grid = Grid((n, n), (2 * np.pi, 2 * np.pi))
        gd = np.broadcast_to(np.eye(2), grid.shape + (2, 2)).copy()
        phi = mode_scalar(grid, 0, 1, 0.3)
        res = estimates.warped_ricci_oracle(SymTensor2Field(grid, gd), phi)
        residuals.append(res)
        mixed_worst = max(mixed_worst, res["mixed"])
    factors = {
        k: residuals[0][k] / max(residuals[1][k], 1e-300)
        for k in ("horizontal", "vertical")
    }
    ok = min(factors.values()) >= 8.0 and mixed_worst <= 1e-12
    return CheckResult(
        "warped_ricci_decomposition", ok, min(factors.values()), 8.0,
        {"residuals": residuals, "factors": factors, "mixed_worst": mixed_worst},
    )


def check_sandwich_and_gradient(
    points=64, t_end=5.0, margin=1e-3, record_samples=160, amplitude=0.1
) -> list:
    """Maximum-principle monitors on the expanding warped run."""
    grid = Grid((points, points), (2 * np.pi, 2 * np.pi))
    m0 = flat_metric_state(grid)
    st = flows.WarpedState(g=m0.g.copy(), phi=mode_scalar(grid, 0, 1, amplitude))
    p = flows.FlowParams(mu=-0.5, m=1)
    cfg = flows.StepperConfig(t_end=t_end, record_every=1)
    dt = flows.resolve_dt(st, cfg)
    steps = int(np.ceil(t_end / dt))
    cfg = flows.StepperConfig(
        t_end=t_end, record_every=max(1, steps // record_samples)
    )
    start = _time.perf_counter()
    traj = flows.run_flow(st, p, cfg, normalized=False)
    wall = _time.perf_counter() - start
    sandwich = estimates.monitor_sandwich(traj, margin=margin)
    gradient = estimates.monitor_gradient_decay(traj, margin=margin)
    ratio = estimates.gradient_ratio_series(traj)
    ratio_monotone = bool(np.all(np.diff(ratio) <= 1e-6))
    return [
        CheckResult(
            "sandwich_bound", not sandwich.violated, sandwich.max_violation, margin,
            {"wall_time_s": wall, "samples": len(traj), "dt": traj.dt,
             "runtime_ok": wall <= 120.0},
        ),
        CheckResult(
            "gradient_decay_bound",
            (not gradient.violated) and ratio_monotone,
            gradient.max_violation,
            margin,
            {"tightest_constant": gradient.details["tightest_constant"],
             "envelope_constant": gradient.details["b"] ** 2 * gradient.details["U0"],
             "ratio_monotone": ratio_monotone},
        ),
    ]


def check_spectrum_vs_dynamics(seed=17) -> list:
    """Fitted decay rates of near-fixed-point runs vs operator eigenvalues."""
    results = []

    # warped: top eigenvalue of the map block is 2 lam (constant mode)
    st, p, synth, grid = fixed_point_setup("warped", points=(12, 12))
    eps = 1e-3
    st = flows.WarpedState(
        g=st.g, phi=ScalarField(grid, st.phi.data + eps), time=0.0
    )
    cfg = flows.StepperConfig(t_end=1.5, record_every=2)
    traj = flows.run_flow(st, p, cfg, normalized=True)
    dev = traj.series(lambda s: sup_norm(s.phi.data - p.phi_avg0))
    fit = estimates.fit_decay(traj.times, dev, (0.1, 1.4))
    expected = abs(2.0 * synth.lam)
    rel = abs(fit.lam_fit - expected) / expected
    results.append(
        CheckResult(
            "dynamics_rate_warped_map", rel <= 0.05, rel, 0.05,
            {"fitted": fit.lam_fit, "expected": expected},
        )
    )

    # invariant: A-block rate |lam|
    st, p, synth, grid = fixed_point_setup("invariant", points=(8, 8, 8))
    A = zero_vec_oneform(grid, st.fiber_rank)
    A.data[..., 0, 0] = eps
    st = flows.InvariantState(g=st.g, A=A, G=st.G, time=0.0)
    cfg = flows.StepperConfig(t_end=0.8, record_every=1)
    traj = flows.run_flow(st, p, cfg)
    dev = traj.series(lambda s: sup_norm(s.A.data))
    fit = estimates.fit_decay(traj.times, dev, (0.05, 0.75))
    expected = abs(synth.lam)
    rel = abs(fit.lam_fit - expected) / expected
    results.append(
        CheckResult(
            "dynamics_rate_invariant_oneform", rel <= 0.05, rel, 0.05,
            {"fitted": fit.lam_fit, "expected": expected},
        )
    )

    # connection: H-block rate |2 lam| on the constant mode
    st, p, synth, grid = fixed_point_setup("connection", points=(8, 8, 8))
    st = flows.ConnectionState(
        g=st.g, H=constant_threeform(grid, eps), time=0.0
    )
    cfg = flows.StepperConfig(t_end=0.6, record_every=1)
    traj = flows.run_flow(st, p, cfg)
    dev = traj.series(lambda s: sup_norm(s.H.data))
    fit = estimates.fit_decay(traj.times, dev, (0.02, 0.55))
    expected = abs(2.0 * synth.lam)
    rel = abs(fit.lam_fit - expected) / expected
    results.append(
        CheckResult(
            "dynamics_rate_connection_threeform", rel <= 0.05, rel, 0.05,
            {"fitted": fit.lam_fit, "expected": expected},
        )
    )
    return results


def check_normalize_transform(base_points=16, base_dt_scale=1.0) -> CheckResult:
    """Substitution residual of the normalized system on transformed runs.

    Runs the plain expanding warped flow at two resolutions (halving both
    the grid spacing and the recording step) and requires the residual to
    drop by at least ~4 (the recording-difference order), with C(dt^2 + h^4)
    as the bound shape.
    """
    residuals = []
    for level in (0, 1):
        n = base_points * (2**level)
        grid = Grid((n, n), (2 * np.pi, 2 * np.pi))
        m0 = flat_metric_state(grid)
        st = flows.WarpedState(g=m0.g.copy(), phi=mode_scalar(grid, 0, 1, 0.1))
        p = flows.FlowParams(mu=-0.5, m=1, lam=-1.0)
        # halving h quarters the step; record_every=2**level halves the
        # recording interval, which dominates the residual (O(dt_rec^2))
        cfg = flows.StepperConfig(t_end=0.5, record_every=2**level)
        traj = flows.run_flow(st, p, cfg, normalized=False)
        _, _, residual, _ = flows.normalize_transform(traj, s=2.0)
        residuals.append(residual)
    factor = residuals[0] / max(residuals[1], 1e-300)
    ok = factor >= 3.0
    return CheckResult(
        "normalization_transform_residual", ok, factor, 3.0,
        {"residuals": residuals},
    )


def check_evolution_identities(base_points=16) -> CheckResult:
    """Evolution-identity residuals fall under refinement (O(dt + h^4))."""
    worst = {}
    for level in (0, 1):
        n = base_points * (2**level)
        grid = Grid((n, n), (2 * np.pi, 2 * np.pi))
        m0 = flat_metric_state(grid)
        st = flows.WarpedState(g=m0.g.copy(), phi=mode_scalar(grid, 0, 1, 0.1))
        p = flows.FlowParams(mu=-0.5, m=1)
        cfg = flows.StepperConfig(t_end=0.25, record_every=1)
        traj = flows.run_flow(st, p, cfg, normalized=False)
        worst[level] = max(
            estimates.evolution_identity_residual(traj, "dphi_sq"),
            estimates.evolution_identity_residual(traj, "dphi"),
        )
    factor = worst[0] / max(worst[1], 1e-300)
    ok = factor >= 3.0
    return CheckResult(
        "evolution_identities", ok, factor, 3.0, {"residuals": worst}
    )


def check_fixed_points(steps=1000) -> list:
    """RHS exactness and RK4 stationarity at every declared fixed point."""
    results = []
    for system in ("hrf", "warped", "invariant", "connection"):
        pts = (12, 12) if system == "warped" else (8, 8, 8)
        st, p, synth, grid = fixed_point_setup(system, pts)
        rhs = flows.make_rhs(system, p)
        delta = rhs(st)
        rhs_sup = max(sup_norm(v) for v in delta.values())
        cfg = flows.StepperConfig(dt=2e-4, t_end=steps * 2e-4, record_every=steps)
        traj = flows.run_flow(st, p, cfg)
        drift = max(
            sup_norm(traj.states[-1].arrays()[k] - st.arrays()[k])
            for k in st.arrays()
        )
        ok = rhs_sup <= 1e-13 and drift <= 1e-10
        results.append(
            CheckResult(
                f"fixed_point_{system}", ok, max(rhs_sup, drift), 1e-10,
                {"rhs_sup": rhs_sup, "drift": drift, "steps": steps},
            )
        )
    return results


# ---------------------------------------------------------------------------
# suites


def run_suite(suite: str, fast: bool = True) -> list:
    """Named check subsets; ``fast`` shrinks the expensive runs for CLI use."""
    suites = {"identities", "linearization", "estimates", "spectra", "all"}
    if suite not in suites:
        raise ValueError(f"unknown suite {suite!r} (choose from {sorted(suites)})")
    out = []
    if suite in ("identities", "all"):
        out.append(check_comparison_ode())
        out.append(check_algebraic_identity(draws=2000 if fast else 10_000))
        out.append(check_hmf_equivalence(draws=20 if fast else 100))
        out.append(
            check_warped_ricci_refinement(sizes=(16, 32) if fast else (32, 64))
        )
    if suite in ("linearization", "all"):
        out.extend(check_linearizations())
        out.extend(check_fixed_points(steps=100 if fast else 1000))
    if suite in ("estimates", "all"):
        out.extend(
            check_sandwich_and_gradient(points=32 if fast else 64,
                                        t_end=2.0 if fast else 5.0)
        )
        out.append(check_evolution_identities())
        out.append(check_normalize_transform())
    if suite in ("spectra", "all"):
        out.append(check_l0_spectrum_bound(points=12 if fast else 16))
        out.extend(check_kernels())
        out.extend(check_spectrum_vs_dynamics())
    return out
