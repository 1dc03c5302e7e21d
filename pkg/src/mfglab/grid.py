"""Prism geometry, tensor-product grids, and discrete calculus.

The spatial domain is an open prism

    Omega = (a, b) x (-B_2, B_2) x ... x (-B_n, B_n),    0 < a < b,

and all space-time objects live on the closed cylinder ``Omega x [0, T]``.
The first coordinate is distinguished throughout: the weight functions used
by the weighted energy estimates depend on ``x_1`` only, and the causal
kernels integrate along ``x_1``.  Grids are uniform tensor products; the
number of time levels is kept odd so that the central time ``t0 = T/2`` is
always a grid node.

Conventions used by every module downstream:

* field arrays carry spatial axes first and the time axis last,
  ``values.shape == (*nx, nt)``;
* derivatives are second-order central differences in the interior and
  second-order one-sided stencils on the boundary, exact for per-axis
  quadratics;
* integrals are tensor-product trapezoidal sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

__all__ = [
    "Prism",
    "Face",
    "Grid",
    "Field",
    "BoundaryTrace",
    "make_grid",
    "sample_field",
    "sample_spatial",
    "constant_in_time",
    "first_derivative",
    "second_derivative",
    "diff",
    "gradient",
    "grad_component",
    "laplacian",
    "mixed_xixj",
    "divergence",
    "dt",
    "dtt",
    "integrate",
    "integrate_spatial",
    "integrate_trace",
    "time_integral_from_t0",
    "trace",
    "snapshot",
    "snap_epsilon",
]


@dataclass(frozen=True)
class Prism:
    """Spatial box ``(a, b) x prod_i (-B_i, B_i)`` together with the horizon T.

    Args:
        a: lower bound of the first coordinate, strictly positive.
        b: upper bound of the first coordinate, ``b > a``.
        half_widths: half-widths ``(B_2, ..., B_n)`` of the remaining axes;
            empty for a one-dimensional domain.
        T: final time, strictly positive.

    Raises:
        ValueError: if ``a <= 0``, ``b <= a``, any half-width is
            non-positive, or ``T <= 0``.
    """

    a: float
    b: float
    half_widths: tuple[float, ...] = ()
    T: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "half_widths", tuple(float(w) for w in self.half_widths))
        if not self.a > 0.0:
            raise ValueError(f"prism requires a > 0, got a={self.a}")
        if not self.b > self.a:
            raise ValueError(f"prism requires b > a, got a={self.a}, b={self.b}")
        for i, w in enumerate(self.half_widths):
            if not w > 0.0:
                raise ValueError(f"half_widths[{i}] must be positive, got {w}")
        if not self.T > 0.0:
            raise ValueError(f"prism requires T > 0, got T={self.T}")

    @property
    def dim(self) -> int:
        """Spatial dimension ``n``."""
        return 1 + len(self.half_widths)

    def axis_bounds(self, axis: int) -> tuple[float, float]:
        """Return the ``(lo, hi)`` bounds of a spatial axis (0-based)."""
        if axis == 0:
            return (float(self.a), float(self.b))
        return (-self.half_widths[axis - 1], self.half_widths[axis - 1])

    @property
    def cross_section_measure(self) -> float:
        """Measure of the cross-section ``prod_i (-B_i, B_i)``.

        For ``n = 1`` the cross-section is the empty product and carries
        measure one, so that cross-section integrals degenerate to the
        identity.
        """
        out = 1.0
        for w in self.half_widths:
            out *= 2.0 * w
        return out


@dataclass(frozen=True, order=True)
class Face:
    """One lateral face of the prism: a spatial axis and a side.

    ``Face(0, +1)`` is the face ``{x_1 = b}``, ``Face(0, -1)`` is
    ``{x_1 = a}``, and ``Face(i, s)`` for ``i >= 1`` is ``{x_{i+1} = s B_{i+1}}``.
    The string form follows the 1-based axis labels, e.g. ``"x1+"``.
    """

    axis: int
    side: int

    def __post_init__(self) -> None:
        if self.side not in (-1, 1):
            raise ValueError(f"face side must be +1 or -1, got {self.side}")
        if self.axis < 0:
            raise ValueError(f"face axis must be non-negative, got {self.axis}")

    @property
    def label(self) -> str:
        return f"x{self.axis + 1}{'+' if self.side > 0 else '-'}"

    @classmethod
    def parse(cls, label: str) -> "Face":
        text = label.strip()
        if len(text) < 3 or text[0] != "x" or text[-1] not in "+-":
            raise ValueError(f"cannot parse face label {label!r}")
        axis = int(text[1:-1]) - 1
        side = 1 if text[-1] == "+" else -1
        return cls(axis, side)

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid on ``closure(Omega) x [0, T]``.

    Spacings are derived exactly from the point counts,
    ``h_i = (hi - lo) / (nx_i - 1)`` and ``tau = T / (nt - 1)``, so the
    boundary nodes land exactly on the prism faces and ``t = T`` is the last
    time level.  ``nt`` must be odd so the central level ``t0 = T/2`` is a
    node.

    Attributes:
        prism: the underlying geometry.
        nx: points per spatial axis.
        nt: number of time levels.
    """

    prism: Prism
    nx: tuple[int, ...]
    nt: int
    # derived, filled in __post_init__
    h: tuple[float, ...] = dataclass_field(init=False)
    tau: float = dataclass_field(init=False)

    _MIN_POINTS = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "nx", tuple(int(m) for m in self.nx))
        if len(self.nx) != self.prism.dim:
            raise ValueError(
                f"grid needs {self.prism.dim} spatial counts, got {len(self.nx)}"
            )
        for i, m in enumerate(self.nx):
            if m < self._MIN_POINTS:
                raise ValueError(f"nx[{i}] must be >= {self._MIN_POINTS}, got {m}")
        if self.nt < self._MIN_POINTS:
            raise ValueError(f"nt must be >= {self._MIN_POINTS}, got {self.nt}")
        if self.nt % 2 == 0:
            raise ValueError(
                f"nt must be odd so that t0 = T/2 is on-grid, got nt={self.nt}"
            )
        spacings = []
        for i, m in enumerate(self.nx):
            lo, hi = self.prism.axis_bounds(i)
            spacings.append((hi - lo) / (m - 1))
        object.__setattr__(self, "h", tuple(spacings))
        object.__setattr__(self, "tau", self.prism.T / (self.nt - 1))

    @property
    def dim(self) -> int:
        return self.prism.dim

    @property
    def shape_space(self) -> tuple[int, ...]:
        return self.nx

    @property
    def shape(self) -> tuple[int, ...]:
        return (*self.nx, self.nt)

    @property
    def index_t0(self) -> int:
        """Index of the central time level ``t0 = T/2``."""
        return (self.nt - 1) // 2

    def axis_coords(self, axis: int) -> np.ndarray:
        lo, hi = self.prism.axis_bounds(axis)
        return np.linspace(lo, hi, self.nx[axis])

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.prism.T, self.nt)

    def space_meshgrid(self) -> tuple[np.ndarray, ...]:
        axes = [self.axis_coords(i) for i in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def spacetime_meshgrid(self) -> tuple[np.ndarray, ...]:
        axes = [self.axis_coords(i) for i in range(self.dim)]
        return tuple(np.meshgrid(*axes, self.times, indexing="ij"))

    def index_of_time(self, t: float, tol: float | None = None) -> int:
        """Index of the grid time level equal to ``t``.

        Raises:
            ValueError: if ``t`` is off-grid (not within ``tol`` of a level).
        """
        if tol is None:
            tol = 1e-9 * max(self.prism.T, 1.0)
        j = int(round(t / self.tau))
        if j < 0 or j >= self.nt or abs(j * self.tau - t) > tol:
            raise ValueError(f"time {t} is off-grid (tau={self.tau})")
        return j

    def faces(self) -> Iterator[Face]:
        for axis in range(self.dim):
            yield Face(axis, -1)
            yield Face(axis, +1)

    def face_shape(self, face: Face) -> tuple[int, ...]:
        return tuple(m for i, m in enumerate(self.nx) if i != face.axis)

    def face_coordinate(self, face: Face) -> float:
        lo, hi = self.prism.axis_bounds(face.axis)
        return hi if face.side > 0 else lo

    def trapezoid_weights(self, axis: int) -> np.ndarray:
        """Trapezoidal quadrature weights along a spatial axis."""
        return _trapezoid_weights(self.nx[axis], self.h[axis])

    def time_weights(self, lo: int = 0, hi: int | None = None) -> np.ndarray:
        """Trapezoidal weights over the time levels ``lo..hi`` inclusive.

        Weights for levels outside the window are zero, so the returned
        vector always has length ``nt`` and can be contracted against the
        full time axis.
        """
        if hi is None:
            hi = self.nt - 1
        if hi - lo < 1:
            raise ValueError(f"degenerate time window [{lo}, {hi}]")
        w = np.zeros(self.nt)
        w[lo : hi + 1] = _trapezoid_weights(hi - lo + 1, self.tau)
        return w


def make_grid(prism: Prism, nx: Sequence[int] | int, nt: int) -> Grid:
    """Build a grid; scalar ``nx`` is broadcast over all spatial axes."""
    if isinstance(nx, int):
        nx = (nx,) * prism.dim
    return Grid(prism, tuple(nx), nt)


def snap_epsilon(grid: Grid, eps: float) -> tuple[int, float]:
    """Snap ``eps`` to the nearest time level and return ``(index, value)``.

    The time window of the truncated cylinder is ``[eps, T - eps]`` with
    ``0 < eps < T/2``; the snapped index must leave a non-degenerate window
    around ``t0``.
    """
    if not 0.0 < eps < 0.5 * grid.prism.T:
        raise ValueError(f"epsilon must lie in (0, T/2), got {eps}")
    j = int(round(eps / grid.tau))
    j = min(max(j, 1), grid.index_t0 - 1)
    return j, j * grid.tau


class Field:
    """Scalar samples on the full space-time grid.

    Values are stored as a read-only array of shape ``(*nx, nt)``; the class
    is a thin immutable wrapper so that solver outputs cannot be mutated in
    place.  Snapshots (purely spatial data such as coefficients or central
    cuts) are passed around as plain arrays of shape ``nx`` and broadcast to
    fields with :func:`constant_in_time` where a field is required.
    """

    __slots__ = ("grid", "_values")

    def __init__(self, grid: Grid, values: np.ndarray, *, _copy: bool = True):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(
                f"field shape {values.shape} does not match grid shape {grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        if _copy:
            values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "_values", values)

    def __setattr__(self, name, value):  # pragma: no cover - defensive
        raise AttributeError("Field is immutable")

    @property
    def values(self) -> np.ndarray:
        return self._values

    def at_index(self, j: int) -> np.ndarray:
        """Spatial slice at time level ``j`` (a writable copy)."""
        return np.array(self._values[..., j])

    def __add__(self, other: "Field") -> "Field":
        self._check_same_grid(other)
        return Field(self.grid, self._values + other._values, _copy=False)

    def __sub__(self, other: "Field") -> "Field":
        self._check_same_grid(other)
        return Field(self.grid, self._values - other._values, _copy=False)

    def __mul__(self, factor) -> "Field":
        if isinstance(factor, Field):
            self._check_same_grid(factor)
            return Field(self.grid, self._values * factor._values, _copy=False)
        return Field(self.grid, self._values * np.asarray(factor), _copy=False)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self._values, _copy=False)

    def _check_same_grid(self, other: "Field") -> None:
        if other.grid is not self.grid and other.grid != self.grid:
            raise ValueError("fields live on different grids")


@dataclass(frozen=True)
class BoundaryTrace:
    """Samples of a field (or of its outward normal derivative) on one face.

    ``values`` has the face's tangential axes first and time last; for a
    one-dimensional domain a face is a single point and ``values`` has shape
    ``(nt,)``.
    """

    grid: Grid
    face: Face
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        expected = (*self.grid.face_shape(self.face), self.grid.nt)
        if values.shape != expected:
            raise ValueError(
                f"trace shape {values.shape} does not match face shape {expected}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("trace values must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def tangential_axes(self) -> tuple[int, ...]:
        """Spatial axes of the parent grid that are tangential to the face."""
        return tuple(i for i in range(self.grid.dim) if i != self.face.axis)


# ---------------------------------------------------------------------------
# sampling


def sample_field(grid: Grid, fn: Callable[..., np.ndarray]) -> Field:
    """Sample ``fn(x_1, ..., x_n, t)`` on the space-time grid."""
    coords = grid.spacetime_meshgrid()
    values = np.broadcast_to(np.asarray(fn(*coords), dtype=float), grid.shape)
    return Field(grid, values)


def sample_spatial(grid: Grid, fn: Callable[..., np.ndarray]) -> np.ndarray:
    """Sample ``fn(x_1, ..., x_n)`` on the spatial grid."""
    coords = grid.space_meshgrid()
    return np.array(np.broadcast_to(np.asarray(fn(*coords), dtype=float), grid.shape_space))


def constant_in_time(grid: Grid, spatial_values: np.ndarray) -> Field:
    """Broadcast a spatial array to a field that is constant along time."""
    spatial_values = np.asarray(spatial_values, dtype=float)
    if spatial_values.shape != grid.shape_space:
        raise ValueError(
            f"spatial shape {spatial_values.shape} does not match {grid.shape_space}"
        )
    return Field(grid, np.repeat(spatial_values[..., None], grid.nt, axis=-1))


# ---------------------------------------------------------------------------
# finite differences


def first_derivative(values: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    """Second-order first derivative along one axis of a raw array.

    Central differences in the interior, one-sided three-point stencils at
    the two edge planes; exact for quadratics along the axis.
    """
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v, dtype=float)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * spacing)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * spacing)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * spacing)
    return np.moveaxis(out, 0, axis)


def second_derivative(values: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    """Second-order pure second derivative along one axis of a raw array."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v, dtype=float)
    h2 = spacing * spacing
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h2
    return np.moveaxis(out, 0, axis)


def grad_component(field: Field, axis: int) -> Field:
    """Spatial derivative ``d/dx_{axis+1}`` of a field."""
    g = field.grid
    return Field(g, first_derivative(field.values, axis, g.h[axis]), _copy=False)


def gradient(field: Field) -> tuple[Field, ...]:
    return tuple(grad_component(field, i) for i in range(field.grid.dim))


def laplacian(field: Field) -> Field:
    g = field.grid
    out = second_derivative(field.values, 0, g.h[0])
    for i in range(1, g.dim):
        out = out + second_derivative(field.values, i, g.h[i])
    return Field(g, out, _copy=False)


def mixed_xixj(field: Field, i: int, j: int) -> Field:
    """Second derivative ``d^2/dx_i dx_j`` (pure second derivative if i == j)."""
    g = field.grid
    if i == j:
        return Field(g, second_derivative(field.values, i, g.h[i]), _copy=False)
    once = first_derivative(field.values, i, g.h[i])
    return Field(g, first_derivative(once, j, g.h[j]), _copy=False)


def divergence(components: Sequence[Field]) -> Field:
    g = components[0].grid
    if len(components) != g.dim:
        raise ValueError(
            f"divergence needs {g.dim} components, got {len(components)}"
        )
    out = first_derivative(components[0].values, 0, g.h[0])
    for i in range(1, g.dim):
        out = out + first_derivative(components[i].values, i, g.h[i])
    return Field(g, out, _copy=False)


def dt(field: Field) -> Field:
    g = field.grid
    return Field(g, first_derivative(field.values, g.dim, g.tau), _copy=False)


def dtt(field: Field) -> Field:
    g = field.grid
    return Field(g, second_derivative(field.values, g.dim, g.tau), _copy=False)


def diff(field: Field, kind: str, axis: int | None = None, axis2: int | None = None):
    """Dispatch by kind: grad_i, laplacian, divergence, dt, dtt, mixed_xixj."""
    if kind == "grad_i":
        if axis is None:
            raise ValueError("grad_i needs an axis")
        return grad_component(field, axis)
    if kind == "laplacian":
        return laplacian(field)
    if kind == "dt":
        return dt(field)
    if kind == "dtt":
        return dtt(field)
    if kind == "mixed_xixj":
        if axis is None or axis2 is None:
            raise ValueError("mixed_xixj needs two axes")
        return mixed_xixj(field, axis, axis2)
    raise ValueError(f"unknown diff kind {kind!r}")


# ---------------------------------------------------------------------------
# quadrature


def _trapezoid_weights(npts: int, spacing: float) -> np.ndarray:
    w = np.full(npts, spacing)
    w[0] = 0.5 * spacing
    w[-1] = 0.5 * spacing
    return w


def _contract(values: np.ndarray, weight_vectors: Sequence[np.ndarray]) -> float:
    out = np.asarray(values, dtype=float)
    for w in weight_vectors:
        out = np.tensordot(out, w, axes=([0], [0]))
    return float(out)


def integrate_spatial(grid: Grid, spatial_values: np.ndarray) -> float:
    """Trapezoidal integral of a spatial array over the prism."""
    spatial_values = np.asarray(spatial_values, dtype=float)
    if spatial_values.shape != grid.shape_space:
        raise ValueError(
            f"spatial shape {spatial_values.shape} does not match {grid.shape_space}"
        )
    weights = [grid.trapezoid_weights(i) for i in range(grid.dim)]
    return _contract(spatial_values, weights)


def integrate_trace(btrace: BoundaryTrace) -> float:
    """Integral of a trace over its face cross time, ``face x (0, T)``.

    For ``n = 1`` the face is a point of measure one, so only the time
    integral remains.
    """
    g = btrace.grid
    weights = [g.trapezoid_weights(i) for i in btrace.tangential_axes]
    weights.append(g.time_weights())
    return _contract(btrace.values, weights)


def integrate(
    field: Field,
    region: str = "QT",
    *,
    t: float | None = None,
    face: Face | None = None,
    eps: float | None = None,
) -> float:
    """Integrate a field over one of the named regions.

    Regions:
        ``"QT"``: the full cylinder.
        ``"QepsT"``: the time-truncated cylinder; requires ``eps``, which is
            snapped to the nearest time level.
        ``"omega"``: a fixed-time spatial slice; requires ``t`` on-grid.
        ``"face"``: one lateral face cross time; requires ``face``.
        ``"ST"``: the whole lateral boundary cross time.
    """
    g = field.grid
    if region == "QT" or region == "QepsT":
        weights = [g.trapezoid_weights(i) for i in range(g.dim)]
        if region == "QepsT":
            if eps is None:
                raise ValueError("QepsT integration requires eps")
            j, _ = snap_epsilon(g, eps)
            weights.append(g.time_weights(j, g.nt - 1 - j))
        else:
            weights.append(g.time_weights())
        return _contract(field.values, weights)
    if region == "omega":
        if t is None:
            raise ValueError("omega integration requires t")
        j = g.index_of_time(t)
        return integrate_spatial(g, field.values[..., j])
    if region == "face":
        if face is None:
            raise ValueError("face integration requires a face")
        return integrate_trace(trace(field, "dirichlet", face))
    if region == "ST":
        return sum(integrate_trace(trace(field, "dirichlet", f)) for f in g.faces())
    raise ValueError(f"unknown region {region!r}")


def time_integral_from_t0(field: Field) -> Field:
    """Cumulative trapezoidal integral from the central time:
    ``(x, t) -> integral_{t0}^{t} field(x, tau) dtau`` (negative for t < t0).
    """
    g = field.grid
    running = cumulative_trapezoid(field.values, dx=g.tau, axis=-1, initial=0.0)
    running = running - running[..., g.index_t0 : g.index_t0 + 1]
    return Field(g, running, _copy=False)


# ---------------------------------------------------------------------------
# traces and snapshots


def _boundary_planes(values: np.ndarray, axis: int):
    v = np.moveaxis(values, axis, 0)
    return v


def trace(field: Field, kind: str, face: Face) -> BoundaryTrace:
    """Restrict a field (``"dirichlet"``) or its outward normal derivative
    (``"neumann"``) to one lateral face.

    The normal derivative uses the one-sided three-point stencil from the
    interior, with the sign of the outward normal, so that e.g. for
    ``u = x_1`` the traces on the two ``x_1`` faces are +1 and -1.
    """
    g = field.grid
    if face.axis >= g.dim:
        raise ValueError(f"face {face.label} does not exist on a {g.dim}-d grid")
    v = _boundary_planes(field.values, face.axis)
    if kind == "dirichlet":
        plane = v[-1] if face.side > 0 else v[0]
    elif kind == "neumann":
        h = g.h[face.axis]
        if face.side > 0:
            plane = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
        else:
            plane = (3.0 * v[0] - 4.0 * v[1] + v[2]) / (2.0 * h)
    else:
        raise ValueError(f"unknown trace kind {kind!r}")
    return BoundaryTrace(g, face, np.array(plane))


def snapshot(field: Field, t: float) -> np.ndarray:
    """Spatial slice of a field at an on-grid time (a writable copy)."""
    j = field.grid.index_of_time(t)
    return field.at_index(j)
