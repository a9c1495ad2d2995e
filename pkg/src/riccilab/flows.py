"""Right-hand sides of the four curvature-normalized flow systems, DeTurck
gauging, the normalization transform, and explicit RK4 time stepping.

The four systems evolve

* harmonic-map Ricci flow:   (g, phi) with phi mapping into R^k or SPD(N),
* warped-product Ricci flow: (g, phi) with scalar warping phi and fiber
  Einstein constant mu,
* locally R^N-invariant Ricci flow: (g, A, G),
* connection Ricci flow:     (g, H) with a top-degree torsion 3-form.

Normalization enters through the constant s (equal to -2*lam at a
declared fixed point), which makes Einstein references genuine fixed
points.  The warped normalized system is written directly in terms of s:

    dg/dt   = -2 Rc + 2 m dphi x dphi - s g
    dphi/dt = Delta phi + (s/2) (exp(-2 (phi - phi_avg0)) - 1)

so its linearization at the fixed point is Delta + 2 lam.

DeTurck gauging *adds* the Lie derivative along W^k = g^{ij} (Gamma -
Gamma_0)^k_{ij} to every block (the sign that makes the metric block
strictly parabolic: the gauged linearization at a flat reference is the
plain rough Laplacian); for the invariant system the fiber gauge
subtracts d(delta A), turning the A-block into the Hodge Laplacian.

Synthetic space-form curvature (see geometry.synthetic_ricci_term)
replaces "Rc" by "Rc_grid + algebraic model term" so that the flat torus
reference is exactly Einstein and all declared fixed points are exact to
round-off.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import targets as targets_mod
from .errors import NumericalFailureError
from .geometry import (
    LeanMetric,
    MetricState,
    SyntheticCurvature,
    codifferential_oneform,
    codifferential_twoform,
    deturck_field,
    exterior_derivative_oneform,
    first_non_spd_point,
    gradient_scalar,
    hodge_laplacian_threeform,
    laplacian_scalar_data,
    lean_metric,
    lie_derivative_metric,
    lie_derivative_scalar,
    synthetic_ricci_term,
    threeform_full_tensor,
)
from .grid import (
    Grid,
    ScalarField,
    SymTensor2Field,
    FiberMetricField,
    ThreeFormField,
    VecOneFormField,
    average,
    sup_norm,
)
from .targets import MapField, pullback_form, tension_field


# ---------------------------------------------------------------------------
# parameters and states


@dataclass
class FlowParams:
    """Shared flow parameters.

    c may be a constant or a non-increasing function of time; s is the
    normalization constant (-2*lam at fixed points); lam is the Einstein
    constant of the reference; m the warped fiber dimension; mu the fiber
    Einstein constant; phi_avg0 the warped normalization anchor.  gauge
    holds a reference MetricState for DeTurck gauging (None = ungauged).
    """

    c: float | Callable = 0.0
    s: float = 0.0
    lam: float = 0.0
    m: int = 1
    mu: float = -0.5
    phi_avg0: float = 0.0
    gauge: Optional[MetricState] = None
    synth: Optional[SyntheticCurvature] = None

    def __post_init__(self):
        if not callable(self.c) and self.c < 0:
            raise ValueError("coupling c must be >= 0")
        if self.synth is not None and self.synth.active:
            expected = self.synth.lam
            if abs(self.lam - expected) > 1e-12:
                raise ValueError(
                    f"lam={self.lam} inconsistent with synthetic K(n-1)={expected}"
                )

    def coupling_at(self, t: float) -> float:
        return float(self.c(t)) if callable(self.c) else float(self.c)


def fixed_point_params(synth: SyntheticCurvature, **kw) -> FlowParams:
    """Parameters for the declared Einstein fixed point: s = -2 lam."""
    return FlowParams(lam=synth.lam, s=-2.0 * synth.lam, synth=synth, **kw)


@dataclass
class HRFState:
    g: SymTensor2Field
    phi: MapField
    time: float = 0.0

    system = "hrf"

    @property
    def grid(self) -> Grid:
        return self.g.grid

    def arrays(self):
        return {"g": self.g.data, "phi": self.phi.data}

    def replace_arrays(self, arrays, time):
        return HRFState(
            g=SymTensor2Field(self.grid, arrays["g"]),
            phi=MapField(self.grid, arrays["phi"], target=self.phi.target),
            time=time,
        )


@dataclass
class WarpedState:
    g: SymTensor2Field
    phi: ScalarField
    time: float = 0.0

    system = "warped"

    @property
    def grid(self) -> Grid:
        return self.g.grid

    def arrays(self):
        return {"g": self.g.data, "phi": self.phi.data}

    def replace_arrays(self, arrays, time):
        return WarpedState(
            g=SymTensor2Field(self.grid, arrays["g"]),
            phi=ScalarField(self.grid, arrays["phi"]),
            time=time,
        )


@dataclass
class InvariantState:
    g: SymTensor2Field
    A: VecOneFormField
    G: FiberMetricField
    time: float = 0.0

    system = "invariant"

    @property
    def grid(self) -> Grid:
        return self.g.grid

    @property
    def fiber_rank(self) -> int:
        return self.A.fiber_rank

    def arrays(self):
        return {"g": self.g.data, "A": self.A.data, "G": self.G.data}

    def replace_arrays(self, arrays, time):
        return InvariantState(
            g=SymTensor2Field(self.grid, arrays["g"]),
            A=VecOneFormField(self.grid, arrays["A"], fiber_rank=self.A.fiber_rank),
            G=FiberMetricField(self.grid, arrays["G"], fiber_rank=self.G.fiber_rank),
            time=time,
        )


@dataclass
class ConnectionState:
    g: SymTensor2Field
    H: ThreeFormField
    time: float = 0.0

    system = "connection"

    @property
    def grid(self) -> Grid:
        return self.g.grid

    def arrays(self):
        return {"g": self.g.data, "H": self.H.data}

    def replace_arrays(self, arrays, time):
        return ConnectionState(
            g=SymTensor2Field(self.grid, arrays["g"]),
            H=ThreeFormField(self.grid, arrays["H"]),
            time=time,
        )


# ---------------------------------------------------------------------------
# right-hand sides


def _model_ricci(m: LeanMetric, p: FlowParams):
    if p.synth is not None and p.synth.active:
        return m.ricci + synthetic_ricci_term(m.g.data, m.g_inv, p.synth)
    return m.ricci


def _gauge_vector(m: LeanMetric, p: FlowParams):
    if p.gauge is None:
        return None
    return deturck_field(m, p.gauge)


def rhs_hrf(st: HRFState, p: FlowParams) -> dict:
    """Curvature-normalized harmonic-map Ricci flow increment.

    dg = -2 Rc + 2 c pullback(phi) - s g (+ L_W g when gauged),
    dphi = tension(phi) (+ W(phi)).
    """
    m = lean_metric(st.g)
    c = p.coupling_at(st.time)
    dg = -2.0 * _model_ricci(m, p) - p.s * st.g.data
    if c != 0.0:
        dg = dg + 2.0 * c * pullback_form(st.phi).data
    dphi = tension_field(st.phi, m)
    W = _gauge_vector(m, p)
    if W is not None:
        dg = dg + lie_derivative_metric(W, m).data
        dphi = dphi + lie_derivative_scalar(W, st.phi.data, m.grid)
    return {"g": dg, "phi": dphi}


def rhs_warped(st: WarpedState, p: FlowParams, normalized: bool = True) -> dict:
    """Warped-product Ricci flow increment (normalized or plain form)."""
    if not normalized and p.mu not in (-0.5, 0.0, 0.5):
        raise ValueError("fiber Einstein constant must be rescaled to -1/2, 0 or 1/2")
    m = lean_metric(st.g)
    grid = m.grid
    dphi_form = gradient_scalar(st.phi.data, grid)
    pb = dphi_form[..., :, None] * dphi_form[..., None, :]
    lap_phi = laplacian_scalar_data(st.phi.data, m)
    if normalized:
        dg = -2.0 * _model_ricci(m, p) + 2.0 * p.m * pb - p.s * st.g.data
        dphi = lap_phi + 0.5 * p.s * (np.exp(-2.0 * (st.phi.data - p.phi_avg0)) - 1.0)
    else:
        dg = -2.0 * m.ricci + 2.0 * p.m * pb
        dphi = lap_phi - p.mu * np.exp(-2.0 * st.phi.data)
    W = _gauge_vector(m, p)
    if W is not None:
        dg = dg + lie_derivative_metric(W, m).data
        dphi = dphi + lie_derivative_scalar(W, st.phi.data, grid)
    return {"g": dg, "phi": dphi}


def rhs_warped_pregauge(st: WarpedState, p: FlowParams) -> dict:
    """Warped-product evolution before the -m grad(phi) diffeomorphism shift.

    dg = -2 Rc + 2m Hess(phi) + 2m dphi x dphi,
    dphi = Delta phi + m |dphi|^2 - mu e^{-2 phi}.
    Shifting by the Lie derivatives along X = -m grad(phi) recovers
    :func:`rhs_warped` with ``normalized=False``.
    """
    from .geometry import hessian

    if p.mu not in (-0.5, 0.0, 0.5):
        raise ValueError("fiber Einstein constant must be rescaled to -1/2, 0 or 1/2")
    m = lean_metric(st.g)
    grid = m.grid
    dphi_form = gradient_scalar(st.phi.data, grid)
    pb = np.einsum("...a,...b->...ab", dphi_form, dphi_form)
    hess = hessian(st.phi, m).data
    grad_sq = np.einsum("...ab,...a,...b->...", m.g_inv, dphi_form, dphi_form)
    dg = -2.0 * m.ricci + 2.0 * p.m * hess + 2.0 * p.m * pb
    dphi = (
        laplacian_scalar_data(st.phi.data, m)
        + p.m * grad_sq
        - p.mu * np.exp(-2.0 * st.phi.data)
    )
    return {"g": dg, "phi": dphi}


def rhs_invariant(st: InvariantState, p: FlowParams) -> dict:
    """Curvature-normalized locally R^N-invariant Ricci flow increment."""
    m = lean_metric(st.g)
    grid = m.grid
    G = st.G.data
    G_inv = np.linalg.inv(G)
    dG = gradient_scalar(G, grid)  # (..., a, i, j)
    dA = exterior_derivative_oneform(st.A.data, grid)  # (..., a, b, k)

    grad_term = 0.5 * np.einsum(
        "...ik,...jl,...aij,...bkl->...ab", G_inv, G_inv, dG, dG, optimize=True
    )
    da_metric = np.einsum(
        "...gd,...ij,...agi,...bdj->...ab", m.g_inv, G, dA, dA, optimize=True
    )
    dg = -2.0 * _model_ricci(m, p) + grad_term + da_metric - p.s * st.g.data
    dg = 0.5 * (dg + np.swapaxes(dg, -1, -2))

    delta_dA = codifferential_twoform(dA, m)  # (..., a, k)
    coupling = np.einsum(
        "...ij,...bg,...gjk,...bak->...ai", G_inv, m.g_inv, dG, dA, optimize=True
    )
    dA_dt = -delta_dA + coupling - 0.5 * p.s * st.A.data

    lap_G = laplacian_scalar_data(G, m)
    grad_quad = np.einsum(
        "...ab,...kl,...aik,...blj->...ij", m.g_inv, G_inv, dG, dG, optimize=True
    )
    source = 0.5 * np.einsum(
        "...ag,...bd,...ik,...jl,...abk,...gdl->...ij",
        m.g_inv, m.g_inv, G, G, dA, dA, optimize=True,
    )
    dG_dt = lap_G - grad_quad - source
    dG_dt = 0.5 * (dG_dt + np.swapaxes(dG_dt, -1, -2))

    W = _gauge_vector(m, p)
    if W is not None:
        dg = dg + lie_derivative_metric(W, m).data
        # base transport of A plus the fiber gauge -d(delta A)
        delta_A = codifferential_oneform(st.A.data, m)  # (..., k)
        dA_dt = dA_dt + _lie_oneform(W.data, st.A.data, grid) - gradient_scalar(
            delta_A, grid
        )
        dG_dt = dG_dt + lie_derivative_scalar(W, G, grid)
    return {"g": dg, "A": dA_dt, "G": dG_dt}


def _lie_oneform(Wdata, A, grid):
    """(L_W A)_a = W^b D_b A_a + A_b D_a W^b (fiber index rides along)."""
    dA_full = gradient_scalar(A, grid)  # (..., b, a, k)
    dW = gradient_scalar(Wdata, grid)  # (..., a, b)
    return np.einsum("...b,...bak->...ak", Wdata, dA_full) + np.einsum(
        "...bk,...ab->...ak", A, dW
    )


def torsion_square(H: ThreeFormField, g_inv) -> np.ndarray:
    """(H^2)_ij = g^{pq} g^{rs} H_ipr H_jqs for a top-degree 3-form."""
    full = threeform_full_tensor(H.data, H.grid)
    return np.einsum(
        "...pq,...rs,...ipr,...jqs->...ij", g_inv, g_inv, full, full, optimize=True
    )


def rhs_connection(st: ConnectionState, p: FlowParams) -> dict:
    """Curvature-normalized connection Ricci flow increment.

    dg = -2 Rc + (1/2) H^2 - s g,  dH = Delta_d H - s H.
    """
    if st.grid.dim != 3:
        raise ValueError("connection flow needs a 3-dimensional grid")
    m = lean_metric(st.g)
    dg = -2.0 * _model_ricci(m, p) + 0.5 * torsion_square(st.H, m.g_inv) - p.s * st.g.data
    dH = hodge_laplacian_threeform(st.H, m).data - p.s * st.H.data
    W = _gauge_vector(m, p)
    if W is not None:
        dg = dg + lie_derivative_metric(W, m).data
        # Lie derivative of a top form: d(i_W H) = D_a(f W^a) on the component
        dH = dH + sum(
            _d1_axis(st.H.data * W.data[..., a], a, st.grid) for a in range(3)
        )
    return {"g": dg, "H": dH}


def _d1_axis(arr, axis, grid):
    from . import backend

    return backend.diff_axis(arr, axis, grid.spacing[axis], 1)


RHS_BY_SYSTEM = {
    "hrf": rhs_hrf,
    "warped": rhs_warped,
    "invariant": rhs_invariant,
    "connection": rhs_connection,
}


def make_rhs(system: str, p: FlowParams, **kw) -> Callable:
    """Bind a system's right-hand side to fixed parameters."""
    fn = RHS_BY_SYSTEM[system]
    if system == "warped":
        normalized = kw.pop("normalized", True)
        return lambda st: fn(st, p, normalized=normalized)
    return lambda st: fn(st, p)


# ---------------------------------------------------------------------------
# time stepping


@dataclass
class StepperConfig:
    """Explicit RK4 stepping controls.

    dt = None derives the step from the parabolic CFL bound
    cfl * h_min^2 / max-diffusivity; cfl defaults well inside the RK4
    stability region for the compact second-derivative stencil in up to
    three dimensions.
    """

    dt: Optional[float] = None
    cfl: float = 0.1
    t_end: float = 1.0
    record_every: int = 1
    scheme: str = "rk4"

    def __post_init__(self):
        if self.scheme != "rk4":
            raise ValueError("only the rk4 scheme is implemented")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl <= 0.25:
            raise ValueError("cfl must lie in (0, 0.25]")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


def max_diffusivity(state) -> float:
    """Upper bound for the diffusion coefficient: spectral bound on g^{-1}."""
    from .geometry import inv_sym

    g_inv = inv_sym(state.g.data)
    row_sum = np.max(np.sum(np.abs(g_inv), axis=-1))
    return float(max(row_sum, 1e-30))


def resolve_dt(state, cfg: StepperConfig) -> float:
    if cfg.dt is not None:
        return cfg.dt
    h_min = min(state.grid.spacing)
    return cfg.cfl * h_min * h_min / max_diffusivity(state)


def _axpy(state, deltas_coefs, dt, new_time):
    arrays = {}
    for name, base in state.arrays().items():
        acc = base
        for delta, coef in deltas_coefs:
            acc = acc + (dt * coef) * delta[name]
        arrays[name] = acc
    return state.replace_arrays(arrays, new_time)


def rk4_step(state, rhs: Callable, dt: float):
    t = state.time
    k1 = rhs(state)
    k2 = rhs(_axpy(state, [(k1, 0.5)], dt, t + 0.5 * dt))
    k3 = rhs(_axpy(state, [(k2, 0.5)], dt, t + 0.5 * dt))
    k4 = rhs(_axpy(state, [(k3, 1.0)], dt, t + dt))
    return _axpy(
        state,
        [(k1, 1.0 / 6.0), (k2, 1.0 / 3.0), (k3, 1.0 / 3.0), (k4, 1.0 / 6.0)],
        dt,
        t + dt,
    )


def step(state, p: FlowParams, cfg: StepperConfig, **rhs_kw):
    """One RK4 step of the state's own system."""
    rhs = make_rhs(state.system, p, **rhs_kw)
    return rk4_step(state, rhs, resolve_dt(state, cfg))


@dataclass
class Trajectory:
    """Recorded flow run: sampled states plus run metadata."""

    system: str
    times: list
    states: list
    params: FlowParams
    cfg: StepperConfig
    dt: float
    degenerated: bool = False
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.states[0].grid

    def __len__(self):
        return len(self.times)

    def series(self, fn):
        """Map a state -> value function over the samples."""
        return np.array([fn(st) for st in self.states])


def _check_finite(state, step_idx):
    for name, arr in state.arrays().items():
        if not np.all(np.isfinite(arr)):
            raise NumericalFailureError(
                f"non-finite values in field '{name}'",
                time=state.time,
                step=step_idx,
                diagnostics={"field": name},
            )


def _check_spd_state(state, step_idx):
    fields = [("g", state.g.data)]
    if state.system == "invariant":
        fields.append(("G", state.G.data))
    elif state.system == "hrf" and state.phi.target.kind == "spd":
        fields.append(("phi", state.phi.data))
    for name, arr in fields:
        if arr.shape[-1] <= 3:
            pt = first_non_spd_point(arr)
        else:
            pt_ok = np.all(np.linalg.eigvalsh(arr) > 0)
            pt = None if pt_ok else ()
        if pt is not None:
            raise NumericalFailureError(
                f"field '{name}' lost positive-definiteness at point {pt}",
                time=state.time,
                step=step_idx,
                diagnostics={"field": name, "point": pt},
            )


def run_flow(state, p: FlowParams, cfg: StepperConfig, **rhs_kw) -> Trajectory:
    """Integrate to cfg.t_end with uniform steps, recording every record_every.

    Aborts with NumericalFailureError on NaN or SPD loss.  Plain warped
    runs with mu = +1/2 stop before the lower comparison envelope
    degenerates (the run is marked, not continued).
    """
    t_end = cfg.t_end
    degenerated = False
    if (
        state.system == "warped"
        and not rhs_kw.get("normalized", True)
        and p.mu > 0
    ):
        t_degenerate = float(np.exp(2.0 * np.min(state.phi.data)))
        if t_end >= 0.9 * t_degenerate:
            t_end = 0.9 * t_degenerate
            degenerated = True
    dt = resolve_dt(state, cfg)
    n_steps = max(1, int(np.ceil(t_end / dt - 1e-12)))
    dt = t_end / n_steps
    rhs = make_rhs(state.system, p, **rhs_kw)

    start = _time.perf_counter()
    times = [state.time]
    states = [state]
    current = state
    for k in range(1, n_steps + 1):
        current = rk4_step(current, rhs, dt)
        _check_finite(current, k)
        if k % cfg.record_every == 0 or k == n_steps:
            _check_spd_state(current, k)
            times.append(current.time)
            states.append(current)
    return Trajectory(
        system=state.system,
        times=times,
        states=states,
        params=p,
        cfg=cfg,
        dt=dt,
        degenerated=degenerated,
        wall_time=_time.perf_counter() - start,
        extra=dict(rhs_kw),
    )


# ---------------------------------------------------------------------------
# normalization transform


def normalize_transform(traj: Trajectory, s: float):
    """Map a plain (un-normalized) trajectory onto the normalized system.

    For warped runs (mu = -1/2) the recipe rescales the metric by
    sigma(t) = s (e^{2 phi_avg0} + t), translates the warping function by
    the comparison-ODE drift, and reparametrizes time; the transformed
    samples then satisfy the autonomous normalized system up to sampling
    and truncation error.  For other systems only the metric/time part
    applies, with sigma(t) = 1 + s t (s = 0 is the identity transform).

    Returns (new_times, transformed_states, residual, details): the
    residual is the sup-norm defect of the normalized system evaluated on
    the transformed samples with non-uniform centred time differences.
    """
    if s < 0:
        raise ValueError("normalization constant s must be >= 0")
    tbar = np.asarray(traj.times)
    if traj.system == "warped" and traj.extra.get("normalized", True):
        raise ValueError("transform expects a plain (un-normalized) trajectory")
    if s == 0.0:
        # identity transform: the residual is the plain system's own
        # sampling residual
        rhs_kw = {"normalized": False} if traj.system == "warped" else {}
        rhs = make_rhs(traj.system, replace(traj.params, gauge=None), **rhs_kw)
        t_new = tbar.copy()
        states = list(traj.states)
        residual = _sampling_residual(states, t_new, rhs)
        return list(map(float, t_new)), states, residual, {"sigma": np.ones_like(tbar)}
    if traj.system == "warped":
        if traj.params.mu != -0.5:
            raise ValueError("warped transform is defined for mu = -1/2")
        st0 = traj.states[0]
        m0 = lean_metric(st0.g)
        phi_avg0 = average(st0.phi, m0.vol_field)
        e2 = np.exp(2.0 * phi_avg0)
        sigma = s * (e2 + tbar)
        t_new = (np.log(e2 + tbar) - np.log(e2 + tbar[0])) / s
        shift = -0.5 * np.log(e2 + tbar) + phi_avg0
        states = []
        for i, st in enumerate(traj.states):
            g_new = SymTensor2Field(st.grid, st.g.data / sigma[i])
            phi_new = ScalarField(st.grid, st.phi.data + shift[i])
            states.append(WarpedState(g=g_new, phi=phi_new, time=float(t_new[i])))
        p_new = replace(traj.params, s=s, phi_avg0=phi_avg0, gauge=None)
        rhs = make_rhs("warped", p_new, normalized=True)
    else:
        sigma = 1.0 + s * tbar
        t_new = np.log1p(s * tbar) / s
        states = []
        for i, st in enumerate(traj.states):
            arrays = st.arrays()
            arrays = {k: (v / sigma[i] if k in ("g", "H") else v) for k, v in arrays.items()}
            states.append(st.replace_arrays(arrays, float(t_new[i])))
        p_new = replace(traj.params, s=s, gauge=None)
        rhs = make_rhs(traj.system, p_new)

    residual = _sampling_residual(states, t_new, rhs)
    return list(map(float, t_new)), states, residual, {"sigma": sigma}


def _sampling_residual(states, times, rhs) -> float:
    """Sup defect of du/dt = rhs(u) with non-uniform centred time differences."""
    residual = 0.0
    for i in range(1, len(states) - 1):
        dtm = times[i] - times[i - 1]
        dtp = times[i + 1] - times[i]
        predicted = rhs(states[i])
        for name, arr in states[i].arrays().items():
            prev_arr = states[i - 1].arrays()[name]
            next_arr = states[i + 1].arrays()[name]
            dudt = (
                dtm / dtp * (next_arr - arr) + dtp / dtm * (arr - prev_arr)
            ) / (dtm + dtp)
            residual = max(residual, sup_norm(dudt - predicted[name]))
    return residual
