"""Harmonic-map target geometry: flat R^k and the SPD cone with its invariant metric.

For the SPD target the Riemannian metric on tangent symmetric matrices is

    gbar_G(X, Y) = tr(G^-1 X G^-1 Y),

whose Levi-Civita connection has the closed-form Christoffel action
Gamma_G(X, Y) = -(X G^-1 Y + Y G^-1 X) / 2.  The tension field of a map
G(x) therefore collapses to

    tau G = Delta G - g^{ab} (D_a G) G^-1 (D_b G),

which is what the fiber heat equation of the invariant flow contains.
Target curvature never enters: the linearizations used downstream are
taken at constant maps, where all target Christoffel terms vanish.

General SPD fibers are allowed (no fixed-determinant projection): the
fiber evolution equation does not preserve det G, and the identity
checks below hold for the full cone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, NotSPDError
from .grid import Grid, GridField, SymTensor2Field, VecOneFormField, sup_norm
from .geometry import (
    MetricState,
    exterior_derivative_oneform,
    gradient_scalar,
    laplacian_scalar_data,
)


@dataclass(frozen=True)
class TargetSpace:
    """Map target: flat R^k or the cone of SPD N x N matrices."""

    kind: str
    rank: int

    def __post_init__(self):
        if self.kind not in ("euclidean", "spd"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.rank < 1:
            raise ValueError("target rank must be >= 1")

    @property
    def value_shape(self) -> tuple:
        if self.kind == "euclidean":
            return (self.rank,)
        return (self.rank, self.rank)


def euclidean(k: int) -> TargetSpace:
    return TargetSpace("euclidean", k)


def spd(N: int) -> TargetSpace:
    return TargetSpace("spd", N)


@dataclass
class MapField(GridField):
    """A map from the grid into a target space, stored by value components."""

    target: TargetSpace = None

    def _component_shape(self):
        return self.target.value_shape

    def _validate(self):
        if self.target.kind == "spd":
            sym_err = np.max(np.abs(self.data - np.swapaxes(self.data, -1, -2)))
            if sym_err > 1e-10 * max(1.0, float(np.max(np.abs(self.data)))):
                raise ValueError(f"SPD map values not symmetric: {sym_err:.3e}")
            eigs = np.linalg.eigvalsh(self.data)
            if not np.all(eigs > 0):
                bad = np.argwhere(~np.all(eigs > 0, axis=-1))[0]
                raise NotSPDError(
                    f"map value not positive-definite at grid point {tuple(bad)}",
                    point=tuple(bad),
                )

    def is_constant(self) -> bool:
        flat = self.data.reshape(self.grid.npoints, -1)
        return bool(np.all(flat == flat[0]))


def constant_map(grid: Grid, target: TargetSpace, value) -> MapField:
    value = np.asarray(value, dtype=float)
    data = np.broadcast_to(value, grid.shape + target.value_shape).copy()
    return MapField(grid, data, target=target)


def tension_field(phi: MapField, m: MetricState) -> np.ndarray:
    """Harmonic-map Laplacian; a section array shaped like phi's values.

    Euclidean targets: componentwise scalar Laplacian.  SPD targets: the
    closed form Delta G - g^{ab} (D_a G) G^-1 (D_b G).
    """
    if phi.grid != m.grid:
        raise GridMismatchError("map and metric live on different grids")
    lap = laplacian_scalar_data(phi.data, m)
    if phi.target.kind == "euclidean":
        return lap
    G = phi.data
    dG = gradient_scalar(G, m.grid)  # (..., a, i, j)
    G_inv = np.linalg.inv(G)
    quad = np.einsum(
        "...ab,...aij,...jk,...bkl->...il", m.g_inv, dG, G_inv, dG, optimize=True
    )
    out = lap - quad
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def pullback_form(phi: MapField, m_or_grid=None) -> SymTensor2Field:
    """phi^* (target metric): a positive-semidefinite symmetric 2-tensor.

    Euclidean: sum_l D_a phi^l D_b phi^l.  SPD: tr(G^-1 D_a G G^-1 D_b G).
    """
    grid = phi.grid
    if phi.target.kind == "euclidean":
        dphi = gradient_scalar(phi.data, grid)  # (..., a, l)
        P = np.einsum("...al,...bl->...ab", dphi, dphi)
    else:
        G = phi.data
        dG = gradient_scalar(G, grid)
        G_inv = np.linalg.inv(G)
        P = np.einsum(
            "...aij,...jk,...bkl,...li->...ab", dG, G_inv, dG, G_inv, optimize=True
        )
    P = 0.5 * (P + np.swapaxes(P, -1, -2))
    return SymTensor2Field(grid, P)


def curvature_coupling_term(phi: MapField, m: MetricState, coupling) -> np.ndarray:
    """2 c(t) * pullback, the matter source in the metric evolution."""
    c = coupling if not callable(coupling) else coupling(0.0)
    return 2.0 * float(c) * pullback_form(phi).data


def _da_squared_source(G, A_data, g_inv, grid):
    """(1/2) g^{ag} g^{bd} G_ik G_jl (dA)^k_ab (dA)^l_gd, lowered-first path."""
    dA = exterior_derivative_oneform(A_data, grid)  # (..., a, b, k)
    lowered = np.einsum("...ik,...abk->...abi", G, dA)
    return 0.5 * np.einsum(
        "...ag,...bd,...abi,...gdj->...ij", g_inv, g_inv, lowered, lowered,
        optimize=True,
    )


def check_modified_hmf_identity(
    G: MapField, A: VecOneFormField, m: MetricState
) -> float:
    """Sup-norm residual between two assemblies of the fiber heat operator.

    Path one evaluates the literal component sums of the fiber evolution
    equation (gradient-quadratic term and curvature source in one big
    contraction each); path two goes through :func:`tension_field` and a
    lowered-index assembly of the source.  The two agree identically in
    exact arithmetic, so the residual measures only re-association
    round-off; it stays tiny for any (g, A, G), SPD or not along the way.
    """
    if G.target.kind != "spd":
        raise ValueError("identity check needs an SPD-target map")
    if G.grid != m.grid or A.grid != m.grid:
        raise GridMismatchError("fields and metric must share a grid")
    grid = m.grid
    Gd = G.data
    G_inv = np.linalg.inv(Gd)
    dG = gradient_scalar(Gd, grid)
    dA = exterior_derivative_oneform(A.data, grid)

    # path 1: literal sums
    lap = laplacian_scalar_data(Gd, m)
    grad_quad = np.einsum(
        "...ab,...kl,...aik,...blj->...ij", m.g_inv, G_inv, dG, dG, optimize=True
    )
    source = 0.5 * np.einsum(
        "...ag,...bd,...ik,...jl,...abk,...gdl->...ij",
        m.g_inv, m.g_inv, Gd, Gd, dA, dA, optimize=True,
    )
    path1 = lap - grad_quad - source

    # path 2: tension field minus the lowered-first source
    path2 = tension_field(G, m) - _da_squared_source(Gd, A.data, m.g_inv, grid)

    return sup_norm(path1 - path2)


def coupling_constant_probe(G: MapField, m: MetricState) -> float:
    """Least-squares c with (metric-equation gradient term) = 2c * pullback.

    The gradient term (1/2) G^{ik} G^{jl} D_a G_ij D_b G_kl equals half the
    pullback of tr(G^-1 X G^-1 Y), so the probe returns 1/4.  (Conventions
    that scale the target metric by 1/2 quote 1/8 instead.)
    """
    Gd = G.data
    dG = gradient_scalar(Gd, m.grid)
    G_inv = np.linalg.inv(Gd)
    grad_term = 0.5 * np.einsum(
        "...ik,...jl,...aij,...bkl->...ab", G_inv, G_inv, dG, dG, optimize=True
    )
    pb = pullback_form(G).data
    num = float(np.sum(grad_term * 2.0 * pb))
    den = float(np.sum((2.0 * pb) ** 2))
    return num / den if den else 0.0
