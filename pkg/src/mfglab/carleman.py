"""Exponential weight, weighted coercivity functional, and integral lemma checks.

The weight is

    phi_lam(x1, t) = exp[2 lam (x1^2 - alpha (t - T/2)^2)],

a function of the first spatial coordinate and time only.  Its maximum over
the closed cylinder sits at the node (b, T/2) with value exp(2 lam b^2); its
minimum over the eps-truncated cylinder sits at (a, eps) and (a, T-eps).

All weighted integrals are evaluated against the rescaled weight
phi / exp(2 lam b^2), whose values lie in (0, 1], so no exponent that is
actually materialized ever exceeds roughly lam * b^2 (the boundary factor
exp(3 lam b^2) becomes exp(lam b^2) after the shared rescaling).  Inequality
checks between terms carrying the same scale are unaffected.  LAMBDA_MAX
caps the usable parameter range: beyond 64 the weight's dynamic range is
too wide for double precision even in rescaled form.

The two-sided functional check reads

    lhs >= C0 * (main - boundary - negligible)

with the components defined in ``carleman_functional``.  C0 is existence
only in the underlying theory; here it is estimated as the infimum of
lhs / bracket over a documented seeded test family and published per grid,
never asserted as a universal constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import (
    Field,
    Grid,
    Prism,
    dt,
    gradient,
    laplacian,
    mixed_xixj,
    snap_epsilon,
    snapshot,
    time_integral_from_t0,
    trace,
)
from .kernels import HeavisideCausal, Kernel, SeparableDelta, apply_kernel
from .norms import norm_spatial, trace_norm, weighted_sum

__all__ = [
    "LAMBDA_MAX",
    "CarlemanParams",
    "CarlemanReport",
    "LemmaReport",
    "weight_phi",
    "weight_log_values",
    "scaled_weight_values",
    "weight_extrema",
    "carleman_functional",
    "carleman_functional_restricted",
    "carleman_sweep",
    "estimate_c0",
    "random_family",
    "verify_lemma",
]

LAMBDA_MAX = 64.0
_OVERFLOW_EXPONENT = 700.0
FAMILY_SEED = 0x5EED


@dataclass(frozen=True)
class CarlemanParams:
    """Large parameter and time-focusing coefficient of the weight."""

    lam: float
    alpha: float

    def __post_init__(self) -> None:
        if not self.lam >= 1.0:
            raise ValueError(f"lambda must be >= 1, got {self.lam}")
        if not self.lam <= LAMBDA_MAX:
            raise ValueError(f"lambda {self.lam} exceeds LAMBDA_MAX={LAMBDA_MAX}")
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def negligible_decays(self, prism: Prism) -> bool:
        """True when alpha T^2/4 > b^2, so the end-time term decays in lambda."""
        return self.alpha * prism.T**2 / 4.0 - prism.b**2 > 0.0


@dataclass(frozen=True)
class CarlemanReport:
    """Per-lambda terms of the functional check, in shared rescaled units.

    ``lhs``, ``main``, ``boundary`` and ``negligible`` are all divided by
    exp(log_scale) for the row's lambda; ``main``/``boundary``/``negligible``
    are the C0-free brackets (multiply by C0 to get the inequality's right
    side).  ``negligible_log`` is the natural log of the unscaled negligible
    term, kept separately because the scaled value underflows by design.
    """

    lambdas: tuple[float, ...]
    log_scales: tuple[float, ...]
    lhs: tuple[float, ...]
    main: tuple[float, ...]
    boundary: tuple[float, ...]
    negligible: tuple[float, ...]
    negligible_log: tuple[float, ...]
    c0: float | None
    lambda0: float | None
    passed: tuple[bool, ...]
    decay_flag: bool
    sign: int
    restricted: bool

    def __post_init__(self) -> None:
        for name in ("lhs", "main", "boundary", "negligible"):
            vals = getattr(self, name)
            if any(v < 0.0 for v in vals):
                raise ValueError(f"{name} integral must be nonnegative")

    def all_passed(self) -> bool:
        return all(self.passed)


def weight_log_values(params: CarlemanParams, grid: Grid) -> np.ndarray:
    """log phi on the space-time grid (exact, no rescaling)."""
    mesh = grid.spacetime_meshgrid()
    x1 = mesh[0]
    t = mesh[-1]
    return 2.0 * params.lam * (x1**2 - params.alpha * (t - grid.prism.T / 2.0) ** 2)


def weight_phi(params: CarlemanParams, grid: Grid) -> tuple[Field, float]:
    """The weight as a positive field, plus the log of its removed scale.

    When 2 lam b^2 stays below the overflow guard the field holds the
    literal weight values and the returned scale is 0.  Otherwise the field
    holds phi / exp(2 lam b^2) and the scale 2 lam b^2 is reported.
    """
    logw = weight_log_values(params, grid)
    peak = 2.0 * params.lam * grid.prism.b**2
    log_scale = peak if peak > _OVERFLOW_EXPONENT else 0.0
    return Field(grid, np.exp(logw - log_scale), _copy=False), log_scale


def scaled_weight_values(lam: float, alpha: float, grid: Grid) -> np.ndarray:
    """phi / exp(2 lam b^2): values in (0, 1], safe for any lambda <= LAMBDA_MAX."""
    params = CarlemanParams(lam, alpha)
    logw = weight_log_values(params, grid)
    return np.exp(logw - 2.0 * lam * grid.prism.b**2)


def weight_extrema(params: CarlemanParams, grid: Grid, eps: float | None = None):
    """Computed and closed-form extrema of the weight.

    Returns a dict with the grid max over the full cylinder, the grid min
    over the eps-truncated cylinder (when eps is given), and the closed-form
    values they should equal.
    """
    field, log_scale = weight_phi(params, grid)
    vals = field.values
    prism = grid.prism
    out = {
        "max": float(np.max(vals) * math.exp(log_scale)),
        "max_exact": math.exp(2.0 * params.lam * prism.b**2),
        "argmax_index": tuple(int(i) for i in np.unravel_index(np.argmax(vals), vals.shape)),
    }
    if eps is not None:
        k, eps_snapped = snap_epsilon(grid, eps)
        window = vals[..., k : grid.nt - k]
        out["eps"] = eps_snapped
        out["min"] = float(np.min(window) * math.exp(log_scale))
        out["min_exact"] = math.exp(
            2.0
            * params.lam
            * (prism.a**2 - params.alpha * (prism.T / 2.0 - eps_snapped) ** 2)
        )
    return out


def _ordered_second_sum(u: Field) -> np.ndarray:
    """sum over all ordered pairs (i, j) of u_{x_i x_j}^2."""
    g = u.grid
    total = np.zeros(u.values.shape)
    for i in range(g.dim):
        for j in range(g.dim):
            d = mixed_xixj(u, i, j).values
            total += d * d
    return total


def _boundary_norms_sq(u: Field, faces) -> float:
    """|du/dn|_{H10}^2 + |u|_{H21}^2 summed over the given faces."""
    total = 0.0
    for f in faces:
        neu = trace(u, "neumann", f)
        dir_ = trace(u, "dirichlet", f)
        total += trace_norm(neu, "H10") ** 2 + trace_norm(dir_, "H21") ** 2
    return total


def _end_norms_sq(u: Field) -> float:
    g = u.grid
    n0 = norm_spatial(g, snapshot(u, 0.0), "H1")
    nT = norm_spatial(g, snapshot(u, g.prism.T), "H1")
    return n0**2 + nT**2


def _functional_row(
    u: Field,
    sign: int,
    lam: float,
    alpha: float,
    *,
    restricted: bool,
) -> dict:
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    g = u.grid
    prism = g.prism
    phi_s = scaled_weight_values(lam, alpha, g)
    log_scale = 2.0 * lam * prism.b**2

    ut = dt(u).values
    lap = laplacian(u).values
    op = ut + sign * lap
    lhs = weighted_sum(g, op * op * phi_s)

    grad_sq = np.zeros(u.values.shape)
    for comp in gradient(u):
        grad_sq += comp.values * comp.values
    main = (1.0 / lam) * weighted_sum(g, (ut * ut + _ordered_second_sum(u)) * phi_s)
    main += weighted_sum(g, (lam * grad_sq + lam**3 * u.values * u.values) * phi_s)

    faces = [f for f in g.faces() if f.axis == 0 and f.side == +1] if restricted else list(g.faces())
    bnd_norms = _boundary_norms_sq(u, faces)
    # exp(3 lam b^2) becomes exp(lam b^2) after the shared rescaling
    boundary = bnd_norms * math.exp(lam * prism.b**2)

    end_norms = _end_norms_sq(u)
    gap = alpha * prism.T**2 / 4.0 - prism.b**2
    negligible = end_norms * math.exp(min(-2.0 * lam * gap - log_scale, _OVERFLOW_EXPONENT))
    negligible_log = (
        math.log(end_norms) - 2.0 * lam * gap if end_norms > 0.0 else -math.inf
    )
    return {
        "lam": lam,
        "log_scale": log_scale,
        "lhs": float(lhs),
        "main": float(main),
        "boundary": float(boundary),
        "negligible": float(negligible),
        "negligible_log": float(negligible_log),
    }


def _passes(row: dict, c0: float) -> bool:
    bracket = row["main"] - row["boundary"] - row["negligible"]
    rhs = c0 * bracket
    slack = 1e-12 * max(abs(row["lhs"]), abs(rhs), 1.0e-300)
    return row["lhs"] - rhs >= -slack


def _check_restricted_precondition(u: Field, tol: float = 1e-10) -> None:
    for f in u.grid.faces():
        if f.axis == 0 and f.side == +1:
            continue
        worst = float(np.max(np.abs(trace(u, "dirichlet", f).values)))
        if worst > tol:
            raise ValueError(
                f"restricted functional requires u = 0 off the outflow face; "
                f"max |u| = {worst:.3e} on face {f.label}"
            )


def _build_report(
    rows: list[dict],
    c0: float | None,
    lambda0: float | None,
    *,
    decay_flag: bool,
    sign: int,
    restricted: bool,
) -> CarlemanReport:
    rows = sorted(rows, key=lambda r: r["lam"])
    passed = tuple(_passes(r, c0) if c0 is not None else True for r in rows)
    return CarlemanReport(
        lambdas=tuple(r["lam"] for r in rows),
        log_scales=tuple(r["log_scale"] for r in rows),
        lhs=tuple(r["lhs"] for r in rows),
        main=tuple(r["main"] for r in rows),
        boundary=tuple(r["boundary"] for r in rows),
        negligible=tuple(r["negligible"] for r in rows),
        negligible_log=tuple(r["negligible_log"] for r in rows),
        c0=c0,
        lambda0=lambda0,
        passed=passed,
        decay_flag=decay_flag,
        sign=sign,
        restricted=restricted,
    )


def carleman_functional(
    u: Field,
    sign: int,
    params: CarlemanParams,
    c0_candidate: float,
    *,
    restricted: bool = False,
) -> CarlemanReport:
    """Single-lambda evaluation of the two-sided functional check.

    Components, all against the shared rescaled weight:

      lhs        = integral (u_t + sign * Lap u)^2 phi
      main       = (1/lam) integral (u_t^2 + sum u_{x_i x_j}^2) phi
                   + integral (lam |grad u|^2 + lam^3 u^2) phi
      boundary   = (|du/dn|_{H10(lateral)}^2 + |u|_{H21(lateral)}^2) exp(3 lam b^2)
      negligible = (|u(.,0)|_{H1}^2 + |u(.,T)|_{H1}^2) exp(-2 lam (alpha T^2/4 - b^2))

    and the pass flag asserts lhs >= c0 (main - boundary - negligible).
    """
    if restricted:
        _check_restricted_precondition(u)
    row = _functional_row(u, sign, params.lam, params.alpha, restricted=restricted)
    return _build_report(
        [row],
        c0_candidate,
        params.lam,
        decay_flag=params.negligible_decays(u.grid.prism),
        sign=sign,
        restricted=restricted,
    )


def carleman_functional_restricted(
    u: Field, params: CarlemanParams, c0_candidate: float, *, sign: int = 1
) -> CarlemanReport:
    """Variant whose boundary component reads only the outflow face x1 = b.

    Requires u to vanish (to 1e-10) on every other lateral face.
    """
    return carleman_functional(u, sign, params, c0_candidate, restricted=True)


def carleman_sweep(
    u: Field,
    sign: int,
    alpha: float,
    lambdas: Sequence[float],
    c0_candidate: float,
    *,
    restricted: bool = False,
) -> CarlemanReport:
    """The functional over a lambda grid, merged in ascending lambda order."""
    if restricted:
        _check_restricted_precondition(u)
    rows = [_functional_row(u, sign, lam, alpha, restricted=restricted) for lam in lambdas]
    params0 = CarlemanParams(min(lambdas), alpha)
    return _build_report(
        rows,
        c0_candidate,
        min(lambdas),
        decay_flag=params0.negligible_decays(u.grid.prism),
        sign=sign,
        restricted=restricted,
    )


def estimate_c0(
    members: Sequence[Field],
    alpha: float,
    lambdas: Sequence[float],
    *,
    signs: Sequence[int] = (1, -1),
    restricted: bool = False,
) -> tuple[float | None, float, list[CarlemanReport]]:
    """Infimum of lhs/bracket over the family, both operators, all lambdas.

    Cells whose bracket is nonpositive impose no constraint (any positive
    C0 passes there).  Returns (c0, lambda0, reports); c0 is None when no
    cell constrains it.  lambda0 is the smallest swept lambda at which the
    reported c0 makes every member pass from there on; with a true infimum
    that is the smallest lambda in the sweep.
    """
    lambdas = sorted(float(x) for x in lambdas)
    all_rows: list[list[dict]] = []
    reports: list[CarlemanReport] = []
    for u in members:
        for sign in signs:
            rows = [
                _functional_row(u, sign, lam, alpha, restricted=restricted)
                for lam in lambdas
            ]
            all_rows.append(rows)
            reports.append(
                _build_report(
                    rows,
                    None,
                    None,
                    decay_flag=CarlemanParams(lambdas[0], alpha).negligible_decays(
                        u.grid.prism
                    ),
                    sign=sign,
                    restricted=restricted,
                )
            )
    caps = []
    for rows in all_rows:
        for row in rows:
            bracket = row["main"] - row["boundary"] - row["negligible"]
            if bracket > 0.0:
                caps.append(row["lhs"] / bracket)
    c0 = min(caps) if caps else None
    lambda0 = lambdas[0]
    return c0, lambda0, reports


def random_family(
    grid: Grid,
    count: int = 20,
    seed: int = FAMILY_SEED,
    *,
    flatten_space: bool = True,
) -> list[Field]:
    """Seeded family of smooth products of low-order trig and polynomial factors.

    Each member is a product over axes (and time) of
    c0 + c1 s + c2 sin(pi s) + c3 cos(pi s) with coefficients uniform in
    [-1, 1], where s is the normalized coordinate.  With ``flatten_space``
    every spatial axis is multiplied by sin^2(pi s), which zeroes the
    lateral Dirichlet and Neumann data so the functional's boundary
    component cannot swamp the volume bracket.  Time is never flattened,
    keeping the end-time term alive.
    """
    rng = np.random.default_rng(seed)
    mesh = grid.spacetime_meshgrid()
    prism = grid.prism
    members = []
    for _ in range(count):
        values = np.ones(grid.shape)
        for axis in range(grid.dim):
            lo, hi = prism.axis_bounds(axis)
            s = (mesh[axis] - lo) / (hi - lo)
            c = rng.uniform(-1.0, 1.0, 4)
            factor = c[0] + c[1] * s + c[2] * np.sin(np.pi * s) + c[3] * np.cos(np.pi * s)
            if flatten_space:
                factor = factor * np.sin(np.pi * s) ** 2
            values = values * factor
        s = mesh[-1] / prism.T
        c = rng.uniform(-1.0, 1.0, 4)
        values = values * (
            c[0] + c[1] * s + c[2] * np.sin(np.pi * s) + c[3] * np.cos(np.pi * s)
        )
        members.append(Field(grid, values, _copy=False))
    return members


@dataclass(frozen=True)
class LemmaReport:
    """Outcome of one integral-lemma sweep for one test function."""

    which: str
    lambdas: tuple[float, ...]
    ratios: tuple[float, ...]
    c_bound: float
    spread: float | None
    slope: float | None
    passed: bool | None
    degenerate: bool


_KERNEL_LEMMAS = {"spatial": SeparableDelta, "causal": HeavisideCausal}


def verify_lemma(
    which: str,
    h: Field,
    *,
    kernel: Kernel | None = None,
    alpha: float,
    lambdas: Sequence[float] = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0),
    spread_cap: float = 10.0,
    slope_window: tuple[float, float] = (-1.15, -0.85),
) -> LemmaReport:
    """Numerical check of one of the three weighted integral lemmas.

    "spatial" and "causal" bound the weighted energy of the kernel integral
    of h by the weighted energy of h; the check computes ratio(lam) and
    asserts both boundedness (reported as the empirical constant) and
    flatness across the sweep (max/min <= spread_cap).  "time-integral"
    bounds the energy of the running time integral from T/2 by (1/lam)
    times the energy of h; the check reports the lam-normalized ratio and
    asserts the log-log slope of the raw ratio against lambda lies in
    ``slope_window``.

    An identically-zero h is degenerate: ratios are zero and no assertion is
    made (passed is None).
    """
    g = h.grid
    lambdas = sorted(float(x) for x in lambdas)
    for lam in lambdas:
        if not 1.0 <= lam <= LAMBDA_MAX:
            raise ValueError(f"lambda grid must lie in [1, {LAMBDA_MAX}], got {lam}")
    if which in _KERNEL_LEMMAS:
        if kernel is None:
            raise ValueError(f"the {which} bound needs a kernel")
        if not isinstance(kernel, _KERNEL_LEMMAS[which]):
            raise ValueError(
                f"the {which} bound is stated for {_KERNEL_LEMMAS[which].__name__} kernels, "
                f"got {type(kernel).__name__}"
            )
        target = apply_kernel(kernel, h).values
    elif which == "time-integral":
        target = time_integral_from_t0(h).values
    else:
        raise ValueError(f"unknown bound {which!r}")

    raw = []
    degenerate = False
    for lam in lambdas:
        phi_s = scaled_weight_values(lam, alpha, g)
        num = weighted_sum(g, target * target * phi_s)
        den = weighted_sum(g, h.values * h.values * phi_s)
        if den <= 0.0:
            degenerate = True
            raw.append(0.0)
        else:
            raw.append(float(num / den))

    if which == "time-integral":
        ratios = tuple(r * lam for r, lam in zip(raw, lambdas))
        c_bound = max(ratios)
        if degenerate or any(r <= 0.0 for r in raw):
            return LemmaReport(which, tuple(lambdas), ratios, c_bound, None, None, None, True)
        slope = float(
            np.polyfit(np.log(np.asarray(lambdas)), np.log(np.asarray(raw)), 1)[0]
        )
        passed = slope_window[0] <= slope <= slope_window[1]
        return LemmaReport(which, tuple(lambdas), ratios, c_bound, None, slope, passed, False)

    ratios = tuple(raw)
    c_bound = max(ratios)
    if degenerate or min(ratios) <= 0.0:
        return LemmaReport(which, tuple(lambdas), ratios, c_bound, None, None, None, True)
    spread = max(ratios) / min(ratios)
    return LemmaReport(
        which, tuple(lambdas), ratios, c_bound, spread, None, spread <= spread_cap, False
    )
