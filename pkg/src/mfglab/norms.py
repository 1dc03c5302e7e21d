"""Discrete Sobolev norms on the cylinder, its spatial slices, and its faces.

All norms are trapezoidal discretizations of the continuous definitions:

* ``L2 / H1 / H2`` on the prism for purely spatial data;
* ``L2``, the parabolic ``H^{2,1}`` (all spatial derivatives up to second
  order plus one time derivative) and the isotropic space-time ``H^2`` on
  the cylinder or on its time-truncated version;
* ``L2 / H^{1,0} / H^{2,1}`` on a lateral face cross time, and their sums
  over the whole lateral boundary.

Face norms come in two readings.  The default (``convention="per_face"``)
evaluates every derivative tangentially on the face in question, so it is
well defined for pure boundary data; this is the reading used for the data
norms of the inverse problem.  The alternative literal reading
(``convention="literal"``) takes each spatial derivative on the face that
shares its axis, which requires volume data; it is kept behind the keyword
for comparison experiments only.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .grid import (
    BoundaryTrace,
    Face,
    Field,
    Grid,
    first_derivative,
    second_derivative,
    snap_epsilon,
    trace,
)

__all__ = [
    "weighted_sum",
    "norm_spatial",
    "norm",
    "trace_norm",
    "lateral_norm",
]


def weighted_sum(
    grid: Grid,
    values: np.ndarray,
    time_window: tuple[int, int] | None = None,
) -> float:
    """Tensor-product trapezoidal sum of a space-time array.

    ``time_window=(lo, hi)`` restricts the time quadrature to the inclusive
    index range (used for the time-truncated cylinder).
    """
    out = np.asarray(values, dtype=float)
    for axis in range(grid.dim):
        out = np.tensordot(out, grid.trapezoid_weights(axis), axes=([0], [0]))
    if time_window is None:
        wt = grid.time_weights()
    else:
        wt = grid.time_weights(*time_window)
    return float(np.dot(out, wt))


def _time_window(grid: Grid, eps: float | None) -> tuple[int, int] | None:
    if eps is None:
        return None
    j, _ = snap_epsilon(grid, eps)
    return (j, grid.nt - 1 - j)


# ---------------------------------------------------------------------------
# spatial norms


def norm_spatial(grid: Grid, values: np.ndarray, kind: str = "L2") -> float:
    """``L2``, ``H1`` or ``H2`` norm of a spatial array over the prism."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape_space:
        raise ValueError(
            f"spatial shape {values.shape} does not match {grid.shape_space}"
        )
    total = _spatial_sq(grid, values)
    if kind == "L2":
        return float(np.sqrt(total))
    firsts = [first_derivative(values, i, grid.h[i]) for i in range(grid.dim)]
    total += sum(_spatial_sq(grid, g) for g in firsts)
    if kind == "H1":
        return float(np.sqrt(total))
    if kind != "H2":
        raise ValueError(f"unknown spatial norm kind {kind!r}")
    for i in range(grid.dim):
        for j in range(i, grid.dim):
            if i == j:
                d2 = second_derivative(values, i, grid.h[i])
            else:
                d2 = first_derivative(firsts[i], j, grid.h[j])
            total += _spatial_sq(grid, d2)
    return float(np.sqrt(total))


def _spatial_sq(grid: Grid, values: np.ndarray) -> float:
    out = np.asarray(values, dtype=float) ** 2
    for axis in range(grid.dim):
        out = np.tensordot(out, grid.trapezoid_weights(axis), axes=([0], [0]))
    return float(out)


# ---------------------------------------------------------------------------
# cylinder norms


def norm(field: Field, kind: str = "L2", *, eps: float | None = None) -> float:
    """Norm of a field over the cylinder (or its eps-truncation).

    Kinds:
        ``"L2"``: plain weighted L2.
        ``"H21"``: parabolic norm; value, spatial gradient, all unordered
            second spatial derivatives, and one time derivative.
        ``"H2"``: isotropic space-time H2 treating time as one more
            coordinate.
    """
    g = field.grid
    window = _time_window(g, eps)
    v = field.values
    total = weighted_sum(g, v * v, window)
    if kind == "L2":
        return float(np.sqrt(total))

    firsts = [first_derivative(v, i, g.h[i]) for i in range(g.dim)]
    vt = first_derivative(v, g.dim, g.tau)
    for gcomp in firsts:
        total += weighted_sum(g, gcomp * gcomp, window)
    total += weighted_sum(g, vt * vt, window)
    for i in range(g.dim):
        for j in range(i, g.dim):
            if i == j:
                d2 = second_derivative(v, i, g.h[i])
            else:
                d2 = first_derivative(firsts[i], j, g.h[j])
            total += weighted_sum(g, d2 * d2, window)
    if kind == "H21":
        return float(np.sqrt(total))
    if kind != "H2":
        raise ValueError(f"unknown field norm kind {kind!r}")
    # remaining space-time couplings: x_i t and t t
    for i in range(g.dim):
        dxt = first_derivative(firsts[i], g.dim, g.tau)
        total += weighted_sum(g, dxt * dxt, window)
    vtt = second_derivative(v, g.dim, g.tau)
    total += weighted_sum(g, vtt * vtt, window)
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# face norms


def _trace_sq(btrace: BoundaryTrace, values: np.ndarray) -> float:
    g = btrace.grid
    out = np.asarray(values, dtype=float)
    for axis in btrace.tangential_axes:
        out = np.tensordot(out, g.trapezoid_weights(axis), axes=([0], [0]))
    return float(np.dot(out, g.time_weights()))


def trace_norm(btrace: BoundaryTrace, kind: str = "L2") -> float:
    """``L2``, ``H^{1,0}`` or ``H^{2,1}`` norm of boundary data on its face.

    Derivatives are tangential (and temporal for ``H^{2,1}``), so the norm
    is computable from the trace values alone.  Second tangential
    derivatives run over ordered axis pairs, matching the summation
    convention of the boundary terms in the weighted estimates.
    """
    v = btrace.values
    g = btrace.grid
    total = _trace_sq(btrace, v * v)
    if kind == "L2":
        return float(np.sqrt(total))

    tangential = btrace.tangential_axes
    firsts = {}
    for pos, axis in enumerate(tangential):
        d = first_derivative(v, pos, g.h[axis])
        firsts[axis] = (pos, d)
        total += _trace_sq(btrace, d * d)
    if kind == "H10":
        return float(np.sqrt(total))
    if kind != "H21":
        raise ValueError(f"unknown trace norm kind {kind!r}")

    vt = first_derivative(v, v.ndim - 1, g.tau)
    total += _trace_sq(btrace, vt * vt)
    for axis_a in tangential:
        pos_a, da = firsts[axis_a]
        for axis_b in tangential:
            pos_b, _ = firsts[axis_b]
            if axis_a == axis_b:
                d2 = second_derivative(v, pos_a, g.h[axis_a])
            else:
                d2 = first_derivative(da, pos_b, g.h[axis_b])
            total += _trace_sq(btrace, d2 * d2)
    return float(np.sqrt(total))


def lateral_norm(
    field: Field,
    kind: str = "H21",
    *,
    face: Face | None = None,
    convention: str = "per_face",
) -> float:
    """Face norm of a volume field; ``face=None`` sums over all faces.

    With the default per-face convention this agrees exactly with
    :func:`trace_norm` applied to the field's Dirichlet trace.
    """
    g = field.grid
    faces = [face] if face is not None else list(g.faces())
    total = 0.0
    for f in faces:
        if convention == "per_face":
            total += trace_norm(trace(field, "dirichlet", f), kind) ** 2
        elif convention == "literal":
            total += _literal_face_sq(field, f, kind)
        else:
            raise ValueError(f"unknown convention {convention!r}")
    return float(np.sqrt(total))


def _literal_face_sq(field: Field, target: Face, kind: str) -> float:
    """Literal reading: each spatial derivative is evaluated on the face
    sharing its axis (same side as the target face); value and time terms
    stay on the target face.  Needs volume data; experimental.
    """
    g = field.grid
    v = field.values

    def face_sq(values: np.ndarray, f: Face) -> float:
        bt = trace(Field(g, values, _copy=False), "dirichlet", f)
        return _trace_sq(bt, bt.values * bt.values)

    total = face_sq(v, target)
    firsts = [first_derivative(v, i, g.h[i]) for i in range(g.dim)]
    for j in range(g.dim):
        if j == target.axis:
            continue
        total += face_sq(firsts[j], Face(j, target.side))
    if kind == "H10":
        return total
    if kind != "H21":
        raise ValueError(f"unknown face norm kind {kind!r}")
    total += face_sq(first_derivative(v, g.dim, g.tau), target)
    for j in range(g.dim):
        for s in range(g.dim):
            if j == target.axis and s == target.axis:
                continue
            if j == s:
                d2 = second_derivative(v, j, g.h[j])
            else:
                d2 = first_derivative(firsts[j], s, g.h[s])
            total += face_sq(d2, Face(j, target.side))
    return total
