"""Linearized operators of the four flow systems and their spectra.

Every gauged system linearizes at its declared fixed point into a
block-diagonal, self-adjoint operator built from four ingredients:

* metric block:   Lichnerowicz Laplacian + 2 lam   (all four systems)
* map block:      componentwise scalar Laplacian   (+ 2 lam for warped)
* one-form block: Hodge-de Rham Laplacian + lam    (invariant system)
* fiber block:    componentwise scalar Laplacian   (invariant system)
* 3-form block:   Hodge Laplacian + 2 lam          (connection system)

Operators are available matrix-free (``action`` on component fields) and,
below ``DENSE_LIMIT`` degrees of freedom, as an assembled symmetric
matrix.  Packing uses an orthonormal component basis (off-diagonal
entries weighted by sqrt(2)) so the Euclidean pairing of packed vectors
equals the tensor L^2 pairing up to the constant cell volume; eigenvalues
are therefore those of the operator in the geometric inner product.

The discretizations deliberately mirror the flow right-hand sides: the
metric block composes first-derivative stencils (what the curvature
assembly linearizes to), while scalar-type blocks use the compact
second-derivative stencil (whose discrete kernel is exactly the
constants).  That makes the centred-difference linearization of the
nonlinear right-hand sides agree with these operators to O(eps^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse.linalg as spla

from .errors import GridMismatchError
from .geometry import (
    MetricState,
    SyntheticCurvature,
    flat_metric_state,
    hodge_laplacian_oneform,
    hodge_laplacian_threeform,
    laplacian_scalar_data,
    rough_laplacian_symtensor,
)
from .grid import Grid, ThreeFormField, sup_norm

DENSE_LIMIT = 20_000


# ---------------------------------------------------------------------------
# component bases and packing


def _sym_basis(d, trace_free=False):
    """Orthonormal basis of symmetric d x d matrices (Frobenius pairing)."""
    basis = []
    if trace_free:
        # off-diagonals first, then d-1 traceless diagonal combinations
        for a in range(d):
            for b in range(a + 1, d):
                e = np.zeros((d, d))
                e[a, b] = e[b, a] = 1.0 / np.sqrt(2.0)
                basis.append(e)
        for a in range(1, d):
            e = np.zeros((d, d))
            e[:a, :a] = np.eye(a) / np.sqrt(a * (a + 1))
            e[a, a] = -a / np.sqrt(a * (a + 1))
            basis.append(e)
    else:
        for a in range(d):
            e = np.zeros((d, d))
            e[a, a] = 1.0
            basis.append(e)
        for a in range(d):
            for b in range(a + 1, d):
                e = np.zeros((d, d))
                e[a, b] = e[b, a] = 1.0 / np.sqrt(2.0)
                basis.append(e)
    return np.array(basis)


def _vector_basis(shape):
    basis = np.zeros((int(np.prod(shape)),) + tuple(shape))
    flat = basis.reshape(basis.shape[0], -1)
    np.fill_diagonal(flat, 1.0)
    return basis


@dataclass
class ComponentPacker:
    """Pack fields (grid shape + component shape) to flat vectors and back."""

    grid: Grid
    basis: np.ndarray  # (nbasis,) + component shape

    @property
    def ncomp(self) -> int:
        return self.basis.shape[0]

    @property
    def dof(self) -> int:
        return self.grid.npoints * self.ncomp

    def pack(self, data: np.ndarray) -> np.ndarray:
        comp_axes = tuple(range(self.grid.dim, data.ndim))
        basis_axes = tuple(range(1, self.basis.ndim))
        coeff = np.tensordot(data, self.basis, axes=(comp_axes, basis_axes))
        return coeff.reshape(-1)

    def unpack(self, vec: np.ndarray) -> np.ndarray:
        coeff = vec.reshape(self.grid.shape + (self.ncomp,))
        return np.tensordot(coeff, self.basis, axes=([self.grid.dim], [0]))


# ---------------------------------------------------------------------------
# linear operators


@dataclass
class LinearOperator:
    """A self-adjoint block operator: matrix-free action plus optional matrix."""

    block: str
    grid: Grid
    packer: ComponentPacker
    action: Callable[[np.ndarray], np.ndarray]  # field data -> field data
    lam: float = 0.0
    synth: Optional[SyntheticCurvature] = None
    assembled: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def dof(self) -> int:
        return self.packer.dof

    def apply(self, data: np.ndarray) -> np.ndarray:
        return self.action(data)

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        return self.packer.pack(self.action(self.packer.unpack(vec)))

    def as_scipy(self):
        return spla.LinearOperator(
            (self.dof, self.dof), matvec=self.matvec, dtype=np.float64
        )

    def norm_estimate(self, iters: int = 40, seed: int = 0) -> float:
        if self.assembled is not None:
            return float(np.max(np.abs(np.linalg.eigvalsh(self.assembled))))
        rng = np.random.default_rng(seed)
        v = rng.normal(size=self.dof)
        v /= np.linalg.norm(v)
        est = 0.0
        for _ in range(iters):
            w = self.matvec(v)
            est = np.linalg.norm(w)
            if est == 0:
                return 0.0
            v = w / est
        return float(est)


def assemble_matrix(packer: ComponentPacker, action) -> np.ndarray:
    dof = packer.dof
    mat = np.empty((dof, dof))
    e = np.zeros(dof)
    for j in range(dof):
        e[j] = 1.0
        mat[:, j] = packer.pack(action(packer.unpack(e)))
        e[j] = 0.0
    return mat


def make_block_operator(
    block: str,
    grid: Grid,
    *,
    lam: float = 0.0,
    synth: Optional[SyntheticCurvature] = None,
    shift: Optional[float] = None,
    fiber_rank: int = 1,
    target_dim: int = 1,
    trace_free: bool = False,
    assemble: str = "auto",
    reference: Optional[MetricState] = None,
) -> LinearOperator:
    """Build one linearization block on the flat reference metric.

    ``shift`` is the additive multiple of the identity; the default is the
    block's place in the gauged linearizations (metric: 2 lam, one-form:
    lam, 3-form: 2 lam, map/fiber: 0).  ``synth`` must be consistent with
    ``lam = K (n-1)`` when given in space-form mode.
    """
    if synth is not None and synth.active:
        if synth.n != grid.dim:
            raise ValueError("synthetic curvature dimension must match the grid")
        if abs(lam - synth.lam) > 1e-12:
            raise ValueError(f"lam={lam} inconsistent with K(n-1)={synth.lam}")
    m = reference if reference is not None else flat_metric_state(grid)
    if m.grid != grid:
        raise GridMismatchError("reference metric lives on a different grid")
    d = grid.dim

    if block == "metric":
        shift = 2.0 * lam if shift is None else shift
        packer = ComponentPacker(grid, _sym_basis(d))
        K = synth.K if (synth is not None and synth.active) else 0.0

        def action(h):
            out = rough_laplacian_symtensor(h, m)
            if K != 0.0:
                tr = np.einsum("...ab,...ab->...", m.g_inv, h)
                out = out + K * (tr[..., None, None] * m.g.data - d * h)
            return out + shift * h

    elif block == "map":
        shift = 0.0 if shift is None else shift
        packer = ComponentPacker(grid, _vector_basis((target_dim,)))

        def action(psi):
            return laplacian_scalar_data(psi, m) + shift * psi

    elif block == "oneform":
        shift = lam if shift is None else shift
        packer = ComponentPacker(grid, _vector_basis((d, fiber_rank)))

        def action(omega):
            return hodge_laplacian_oneform(omega, m) + shift * omega

    elif block == "fiber":
        shift = 0.0 if shift is None else shift
        packer = ComponentPacker(grid, _sym_basis(fiber_rank, trace_free=trace_free))

        def action(F):
            return laplacian_scalar_data(F, m) + shift * F

    elif block == "threeform":
        shift = 2.0 * lam if shift is None else shift
        packer = ComponentPacker(grid, np.ones((1,)))

        def action(f):
            lap = hodge_laplacian_threeform(ThreeFormField(grid, f), m).data
            return lap + shift * f

    else:
        raise ValueError(f"unknown block {block!r}")

    op = LinearOperator(
        block=block,
        grid=grid,
        packer=packer,
        action=action,
        lam=lam,
        synth=synth,
        meta={
            "shift": shift,
            "fiber_rank": fiber_rank,
            "target_dim": target_dim,
            "trace_free": trace_free,
        },
    )
    if assemble == "always" or (assemble == "auto" and op.dof <= DENSE_LIMIT):
        op.assembled = assemble_matrix(packer, action)
        scale = max(1.0, float(np.max(np.abs(op.assembled))))
        asym = float(np.max(np.abs(op.assembled - op.assembled.T)))
        if asym > 1e-10 * scale:
            raise AssertionError(f"assembled operator not symmetric: {asym:.2e}")
    return op


def system_block_operators(system, grid, synth, *, fiber_rank=2, target_dim=1,
                           assemble="auto"):
    """The linearization blocks of one system, keyed by state field name."""
    lam = synth.lam if synth is not None else 0.0
    common = dict(lam=lam, synth=synth, assemble=assemble)
    if system == "hrf":
        return {
            "g": make_block_operator("metric", grid, **common),
            "phi": make_block_operator("map", grid, target_dim=target_dim, **common),
        }
    if system == "warped":
        return {
            "g": make_block_operator("metric", grid, **common),
            "phi": make_block_operator("map", grid, target_dim=1,
                                       shift=2.0 * lam, **common),
        }
    if system == "invariant":
        return {
            "g": make_block_operator("metric", grid, **common),
            "A": make_block_operator("oneform", grid, fiber_rank=fiber_rank, **common),
            "G": make_block_operator("fiber", grid, fiber_rank=fiber_rank, **common),
        }
    if system == "connection":
        return {
            "g": make_block_operator("metric", grid, **common),
            "H": make_block_operator("threeform", grid, **common),
        }
    raise ValueError(f"unknown system {system!r}")


# ---------------------------------------------------------------------------
# spectra


@dataclass
class SpectrumReport:
    """Extreme eigenvalues, numerical kernel dimension, stability verdict."""

    block: str
    top_eigenvalues: np.ndarray
    kernel_dim: int
    verdict: str
    tol: float
    gap: float
    meta: dict = field(default_factory=dict)

    @property
    def top(self) -> float:
        return float(self.top_eigenvalues[0])

    def serialize(self) -> str:
        lines = [
            "riccilab-spectrum v1",
            f"block: {self.block}",
        ]
        for key in ("system", "lam", "K", "n", "N", "solver", "dof"):
            if key in self.meta:
                lines.append(f"{key}: {self.meta[key]}")
        lines.append(f"tol: {self.tol:.6e}")
        lines.append(f"kernel_dim: {self.kernel_dim}")
        lines.append(f"gap: {self.gap:.6e}")
        lines.append(f"verdict: {self.verdict}")
        eigs = ", ".join(f"{v:.12e}" for v in self.top_eigenvalues)
        lines.append(f"top_eigenvalues: [{eigs}]")
        return "\n".join(lines) + "\n"


def spectrum(op: LinearOperator, k: int = 10, tol: Optional[float] = None) -> SpectrumReport:
    """Algebraically largest eigenvalues: dense below DENSE_LIMIT, else Lanczos.

    ``kernel_dim`` counts eigenvalues within ``tol`` of zero (default
    1e-8 * operator norm); the reported gap is the distance from the
    kernel cluster to the next eigenvalue below it, so borderline cases
    can be audited.
    """
    if op.assembled is not None:
        eigs = np.linalg.eigvalsh(op.assembled)[::-1]  # descending
        norm = float(np.max(np.abs(eigs))) if eigs.size else 0.0
        solver = "dense"
        top = eigs[: max(k, 1)]
        all_eigs = eigs
    else:
        k_eff = min(max(k, 6), op.dof - 2)
        sci = op.as_scipy()
        vals = spla.eigsh(
            sci, k=k_eff, which="LA", return_eigenvectors=False, tol=1e-10,
            maxiter=20000,
        )
        top = np.sort(vals)[::-1]
        norm = op.norm_estimate()
        solver = "lanczos"
        all_eigs = top
    if tol is None:
        tol = 1e-8 * max(norm, 1.0)
    kernel_dim = int(np.sum(np.abs(all_eigs) <= tol))
    below = all_eigs[all_eigs < -tol]
    gap = float(-below[0]) if below.size else float("nan")
    top_val = float(top[0])
    if top_val > tol:
        verdict = "unstable"
    elif top_val >= -tol:
        verdict = f"weak({kernel_dim})"
    else:
        verdict = "strict"
    meta = dict(op.meta)
    meta.update(
        {
            "lam": op.lam,
            "dof": op.dof,
            "solver": solver,
        }
    )
    if op.synth is not None:
        meta["K"] = op.synth.K
        meta["n"] = op.synth.n
    if op.block in ("oneform", "fiber"):
        meta["N"] = op.meta.get("fiber_rank")
    return SpectrumReport(
        block=op.block,
        top_eigenvalues=np.asarray(top, dtype=float),
        kernel_dim=kernel_dim,
        verdict=verdict,
        tol=float(tol),
        gap=gap,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# numeric linearization of the nonlinear right-hand sides


@dataclass
class LinearizationResult:
    richardson: dict
    per_eps: dict
    base_residual: float


def linearize_numeric(
    rhs: Callable,
    base,
    direction: dict,
    eps_pair=(1e-3, 1e-4),
    allow_nonfixed: bool = False,
) -> LinearizationResult:
    """Centred difference (rhs(base + eps v) - rhs(base - eps v)) / 2 eps.

    Evaluated at both entries of ``eps_pair`` and Richardson-extrapolated
    (the centred difference has a pure eps^2 error series).  The base
    must be a fixed point: a nonzero rhs(base) is flagged as an error
    unless explicitly allowed.
    """
    base_rhs = rhs(base)
    base_residual = max(sup_norm(v) for v in base_rhs.values())
    if base_residual > 1e-10 and not allow_nonfixed:
        raise ValueError(
            f"base state is not a fixed point: sup |rhs| = {base_residual:.3e}"
        )
    per_eps = {}
    for eps in eps_pair:
        plus = base.replace_arrays(
            {k: v + eps * direction[k] for k, v in base.arrays().items()}, base.time
        )
        minus = base.replace_arrays(
            {k: v - eps * direction[k] for k, v in base.arrays().items()}, base.time
        )
        rp, rm = rhs(plus), rhs(minus)
        per_eps[eps] = {k: (rp[k] - rm[k]) / (2.0 * eps) for k in rp}
    e0, e1 = eps_pair
    w = (e0 / e1) ** 2
    richardson = {
        k: (w * per_eps[e1][k] - per_eps[e0][k]) / (w - 1.0) for k in per_eps[e0]
    }
    return LinearizationResult(
        richardson=richardson, per_eps=per_eps, base_residual=base_residual
    )


# ---------------------------------------------------------------------------
# algebraic curvature estimate


def algebraic_identity_check(eigvals, sec, einstein_tol=1e-9) -> float:
    """Residual of the pointwise curvature estimate identity.

    For an Einstein-consistent sectional-curvature matrix (symmetric,
    zero diagonal, equal row sums lam) and eigenvalues lam_i of a
    symmetric tensor,

        sum_ij sec_ij l_i l_j + lam sum_i l_i^2
        = (1/2) sum_ij sec_ij (l_i + l_j)^2.

    Returns |LHS - RHS|; rejects non-Einstein sec (unequal row sums).
    """
    sec = np.asarray(sec, dtype=float)
    lam_i = np.asarray(eigvals, dtype=float)
    n = sec.shape[0]
    if sec.shape != (n, n) or lam_i.shape != (n,):
        raise ValueError("sec must be n x n and eigvals length n")
    if np.max(np.abs(sec - sec.T)) > einstein_tol:
        raise ValueError("sec must be symmetric")
    if np.max(np.abs(np.diag(sec))) > einstein_tol:
        raise ValueError("sec must have zero diagonal")
    rows = sec.sum(axis=1)
    lam = rows.mean()
    if np.max(np.abs(rows - lam)) > einstein_tol * max(1.0, abs(lam)):
        raise ValueError("sec is not Einstein-consistent: unequal row sums")
    lhs = float(lam_i @ sec @ lam_i + lam * np.sum(lam_i**2))
    pair = lam_i[:, None] + lam_i[None, :]
    rhs = 0.5 * float(np.sum(sec * pair**2))
    return abs(lhs - rhs)


def random_einstein_sec(n, rng, base_K=-1.0, amplitude=0.5):
    """Random symmetric zero-diagonal matrix with equal row sums (Einstein)."""
    e = rng.normal(size=(n, n)) * amplitude
    e = 0.5 * (e + e.T)
    np.fill_diagonal(e, 0.0)
    sec = e + base_K * (np.ones((n, n)) - np.eye(n))
    rows = sec.sum(axis=1)
    target = rows.mean()
    a = (target - rows) / (n - 2)
    corr = a[:, None] + a[None, :]
    np.fill_diagonal(corr, 0.0)
    return sec + corr


def quadratic_form_bound(op: LinearOperator, samples: int, rng) -> float:
    """Max Rayleigh quotient <L v, v> / <v, v> over random packed vectors."""
    worst = -np.inf
    for _ in range(samples):
        v = rng.normal(size=op.dof)
        q = float(v @ op.matvec(v) / (v @ v))
        worst = max(worst, q)
    return worst
