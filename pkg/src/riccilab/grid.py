"""Periodic structured grids in 1-3 dimensions and the fields living on them.

The grid is a flat torus: every axis is periodic with a fixed coordinate
period, and all discrete calculus is built from fourth-order centred
stencils with wraparound (see :mod:`riccilab.backend`).  Fields store
their values in grid-axes-first layout, ``data.shape = grid.shape +
component_shape``, with C (row-major) ordering.

All operations here are pure: they never mutate their inputs and return
fresh arrays.  Reductions use numpy's pairwise summation, which is
deterministic for a fixed build; cross-build reproducibility of sums is
only guaranteed to ~1e-13 relative (reordering tolerance).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import backend
from .errors import GridMismatchError

MIN_POINTS = 8  # 4th-order stencils need room; also keeps modes resolvable


@dataclass(frozen=True)
class Grid:
    """A periodic structured grid (flat torus) in 1, 2 or 3 dimensions."""

    points: tuple
    periods: tuple

    def __post_init__(self):
        pts = tuple(int(p) for p in self.points)
        per = tuple(float(p) for p in self.periods)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "periods", per)
        if not 1 <= len(pts) <= 3:
            raise ValueError(f"grid dimension must be 1..3, got {len(pts)}")
        if len(per) != len(pts):
            raise ValueError("points and periods must have equal length")
        if any(p < MIN_POINTS for p in pts):
            raise ValueError(f"every axis needs at least {MIN_POINTS} points")
        if any(p <= 0 for p in per):
            raise ValueError("periods must be positive")

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple:
        return self.points

    @property
    def spacing(self) -> tuple:
        # exact by construction: period / points
        return tuple(L / n for L, n in zip(self.periods, self.points))

    @property
    def npoints(self) -> int:
        return int(np.prod(self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_coords(self, axis: int) -> np.ndarray:
        n = self.points[axis]
        return np.arange(n) * self.spacing[axis]

    def meshes(self):
        """Coordinate arrays of shape ``grid.shape``, one per axis."""
        axes = [self.axis_coords(a) for a in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij")


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"fields live on different grids: {a.grid} vs {b.grid}")


@dataclass
class GridField:
    """Base class: values on a grid with a fixed trailing component shape."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        expected = self.grid.shape + self._component_shape()
        if self.data.shape != expected:
            raise ValueError(
                f"{type(self).__name__}: data shape {self.data.shape} != expected {expected}"
            )
        self._validate()

    # subclasses override
    def _component_shape(self) -> tuple:
        return ()

    def _validate(self):
        pass

    def copy(self):
        return replace(self, data=self.data.copy())

    def _wrap(self, data):
        return replace(self, data=data)

    def __add__(self, other):
        _check_same_grid(self, other)
        return self._wrap(self.data + other.data)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return self._wrap(self.data - other.data)

    def __mul__(self, scalar):
        return self._wrap(self.data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.data)


@dataclass
class ScalarField(GridField):
    pass


@dataclass
class VectorField(GridField):
    """Contravariant vector field X^alpha."""

    def _component_shape(self):
        return (self.grid.dim,)


@dataclass
class OneFormField(GridField):
    """Covariant one-form omega_alpha."""

    def _component_shape(self):
        return (self.grid.dim,)


@dataclass
class SymTensor2Field(GridField):
    """Symmetric (0,2)-tensor field h_{alpha beta}."""

    def _component_shape(self):
        d = self.grid.dim
        return (d, d)

    def _validate(self):
        asym = np.max(np.abs(self.data - np.swapaxes(self.data, -1, -2)))
        scale = max(1.0, float(np.max(np.abs(self.data))))
        if asym > 1e-10 * scale:
            raise ValueError(f"tensor not symmetric: max asymmetry {asym:.3e}")


@dataclass
class VecOneFormField(GridField):
    """R^N-valued one-form A^i_alpha, stored as (..., dim, N)."""

    fiber_rank: int = 1

    def _component_shape(self):
        return (self.grid.dim, self.fiber_rank)


@dataclass
class FiberMetricField(GridField):
    """Symmetric N x N matrix per point (fiber inner product or its variation)."""

    fiber_rank: int = 1

    def _component_shape(self):
        return (self.fiber_rank, self.fiber_rank)

    def _validate(self):
        asym = np.max(np.abs(self.data - np.swapaxes(self.data, -1, -2)))
        scale = max(1.0, float(np.max(np.abs(self.data))))
        if asym > 1e-10 * scale:
            raise ValueError(f"fiber matrix not symmetric: max asymmetry {asym:.3e}")


@dataclass
class ThreeFormField(GridField):
    """Top-degree 3-form on a 3D grid, stored by its single component H_{123}.

    The full antisymmetric tensor is H_{abc} = value * eps_{abc}; on a
    3-manifold every top form is automatically closed.
    """

    def __post_init__(self):
        if self.grid.dim != 3:
            raise ValueError("ThreeFormField requires a 3-dimensional grid")
        super().__post_init__()


def partial_derivative(f: GridField, axis: int, order: int = 1) -> GridField:
    """Componentwise periodic derivative along a grid axis.

    ``order=1`` is the fourth-order first-derivative stencil, ``order=2``
    the compact fourth-order second-derivative stencil (not the square of
    the first: the two agree to O(h^4) on smooth fields).
    """
    if not 0 <= axis < f.grid.dim:
        raise IndexError(f"axis {axis} out of range for dim {f.grid.dim}")
    out = backend.diff_axis(f.data, axis, f.grid.spacing[axis], order)
    return f._wrap(out)


def integrate(f: ScalarField, volume_density: ScalarField | None = None) -> float:
    """Riemann sum of f (optionally against a volume density) over the torus."""
    if volume_density is not None:
        _check_same_grid(f, volume_density)
        total = np.sum(f.data * volume_density.data)
    else:
        total = np.sum(f.data)
    return float(total) * f.grid.cell_volume


def average(f: ScalarField, volume_density: ScalarField | None = None) -> float:
    """Volume-weighted mean of f."""
    vol = integrate(ScalarField(f.grid, np.ones(f.grid.shape)), volume_density)
    return integrate(f, volume_density) / vol


def sup_norm(f) -> float:
    """Max absolute component value; accepts a field or a bare array."""
    data = f.data if hasattr(f, "data") else f
    return float(np.max(np.abs(data)))


# ---------------------------------------------------------------------------
# serialization (layout documented in docs/FORMATS.md)

_FIELD_KINDS = {
    "scalar": (ScalarField, False),
    "vector": (VectorField, False),
    "oneform": (OneFormField, False),
    "symtensor2": (SymTensor2Field, False),
    "vec_oneform": (VecOneFormField, True),
    "fibermetric": (FiberMetricField, True),
    "threeform": (ThreeFormField, False),
}


def _kind_of(f: GridField) -> str:
    for name, (cls, _) in _FIELD_KINDS.items():
        if type(f) is cls:
            return name
    raise TypeError(f"unknown field type {type(f).__name__}")


def save_field(f: GridField, path):
    """Write a field: one JSON header line, then raw little-endian float64, C order."""
    header = {
        "format": "riccilab-field",
        "version": 1,
        "kind": _kind_of(f),
        "dim": f.grid.dim,
        "points": list(f.grid.points),
        "periods": list(f.grid.periods),
        "component_shape": list(f.data.shape[f.grid.dim:]),
    }
    if hasattr(f, "fiber_rank"):
        header["fiber_rank"] = f.fiber_rank
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(f.data, dtype="<f8").tobytes())


def load_field(path) -> GridField:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("format") != "riccilab-field" or header.get("version") != 1:
            raise ValueError(f"{path}: not a riccilab field file")
        raw = fh.read()
    grid = Grid(tuple(header["points"]), tuple(header["periods"]))
    shape = grid.shape + tuple(header["component_shape"])
    data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    cls, has_rank = _FIELD_KINDS[header["kind"]]
    if has_rank:
        return cls(grid, data, fiber_rank=int(header["fiber_rank"]))
    return cls(grid, data)
