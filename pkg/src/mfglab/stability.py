"""Difference machinery behind the Hoelder stability estimate.

Given two solution triples sharing the interaction data (kernel and f), the
analysis studies the differences (u~, m~, k~) and their first and second
time derivatives v, q, w, r.  Evaluating the differenced value equation at
the central time and using the non-degeneracy of grad u_1 there yields a
pointwise reconstruction of k~ from v and snapshot data; substituting that
reconstruction back into the time-differentiated systems produces coupled
integro-differential equations in (v, q, w, r) alone, whose residuals this
module evaluates discretely.  A genuine solution pair drives every residual
to zero at the discretization rate; that is the checkable content of the
derivation, with no existence-only constants involved.

The parameter calculus maps (rho, epsilon) to the weight steepness alpha,
the exponent bookkeeping constants beta and d, and the noise threshold
delta_0, all in exact rational arithmetic so the algebraic identities
behind the final estimate can be asserted to machine precision.

The derived equations are implemented in the algebraically closed form this
module re-derives from the base system (substituting the reconstruction and
the time-reconstruction of u~ into the differentiated equations), which is
the form whose residual genuinely vanishes on solution pairs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .grid import (
    Field,
    Grid,
    dt as field_dt,
    dtt as field_dtt,
    first_derivative,
    gradient,
    laplacian,
    integrate_spatial,
    time_integral_from_t0,
)
from .kernels import Kernel, GaussianProduct, apply_kernel, apply_kernel_spatial, apply_G
from .mfg import MFGTriple, PicardNonConvergence, ProblemSpec, solve_mfg_picard
from .cip import extract, measure_delta
from .norms import norm, norm_spatial, weighted_sum

__all__ = [
    "NondegeneracyError",
    "DifferencePack",
    "StabilityParams",
    "InequalityReport",
    "SweepReport",
    "DERIVED_EQUATIONS",
    "INEQUALITIES",
    "form_difference",
    "compute_F",
    "reconstruct_k_tilde",
    "reconstruction_spread",
    "residual_derived_system",
    "check_inequality",
    "select_parameters",
    "holder_sweep",
    "assemble_final_estimate",
]

# the six consequences of differencing the system and differentiating in
# time, in the closed substituted form (see module docstring)
DERIVED_EQUATIONS = (
    "value-diff",
    "density-diff",
    "value-dt",
    "density-dt",
    "value-dtt",
    "density-dtt",
)

INEQUALITIES = ("v", "q", "w", "r")


class NondegeneracyError(ValueError):
    """The central-time gradient of the reference value function is too flat."""


# ---------------------------------------------------------------------------
# difference pack


@dataclass(frozen=True)
class DifferencePack:
    """Differences of two solution triples and their time derivatives.

    v, q are first and w, r second discrete time derivatives of u~ and m~;
    u0~, m0~ are the central-time snapshots of the differences.
    """

    u_tilde: Field
    m_tilde: Field
    k_tilde: np.ndarray
    v: Field
    q: Field
    w: Field
    r: Field
    u0_tilde: np.ndarray
    m0_tilde: np.ndarray
    norms: dict = dataclass_field(default_factory=dict, compare=False)

    @property
    def grid(self) -> Grid:
        return self.u_tilde.grid

    def v_norm_sq(self, kind: str, eps: float | None = None) -> float:
        """Sum of squared component norms of the stacked (v, q, w, r)."""
        total = 0.0
        for comp in (self.v, self.q, self.w, self.r):
            total += norm(comp, kind, eps=eps) ** 2
        return total

    def reconstruction_identity_residual(self) -> float:
        """Max defect of u~ = u0~ + cumulative integral of v (quadrature check)."""
        rebuilt = time_integral_from_t0(self.v).values + self.u0_tilde[..., None]
        return float(np.max(np.abs(rebuilt - self.u_tilde.values)))


def form_difference(
    t1: MFGTriple, t2: MFGTriple, *, eps: float | None = None
) -> DifferencePack:
    """Difference pack of two triples (caller guarantees shared kernel and f).

    Records the squared norms of the stacked derivative vector over the full
    cylinder and, when ``eps`` is given, over the eps-trimmed cylinder.
    """
    if t1.grid != t2.grid:
        raise ValueError("triples live on different grids")
    g = t1.grid
    u_tilde = t1.u - t2.u
    m_tilde = t1.m - t2.m
    pack = DifferencePack(
        u_tilde=u_tilde,
        m_tilde=m_tilde,
        k_tilde=t1.k - t2.k,
        v=field_dt(u_tilde),
        q=field_dt(m_tilde),
        w=field_dtt(u_tilde),
        r=field_dtt(m_tilde),
        u0_tilde=u_tilde.values[..., g.index_t0].copy(),
        m0_tilde=m_tilde.values[..., g.index_t0].copy(),
    )
    pack.norms["V_H2_QT_sq"] = pack.v_norm_sq("H2")
    if eps is not None:
        pack.norms["V_H21_QepsT_sq"] = pack.v_norm_sq("H21", eps=eps)
        pack.norms["eps"] = eps
    return pack


# ---------------------------------------------------------------------------
# reconstruction of the coefficient difference


def _central_gradient(grid: Grid, arr: np.ndarray) -> list[np.ndarray]:
    return [first_derivative(arr, axis, grid.h[axis]) for axis in range(grid.dim)]


def _inverse_grad_sq(grid: Grid, u01: np.ndarray, c: float) -> np.ndarray:
    """1 / |grad u_1(., T/2)|^2 with the flatness guard."""
    total = np.zeros(grid.shape_space)
    for comp in _central_gradient(grid, u01):
        total += comp * comp
    worst = float(np.min(total))
    if worst < 2.0 * c:
        j = np.unravel_index(np.argmin(total), total.shape)
        raise NondegeneracyError(
            f"|grad u_1|^2 at the central time dips to {worst:.3e} < 2c = "
            f"{2.0 * c:.3e} at index {tuple(int(i) for i in j)}"
        )
    return 1.0 / total


def compute_F(
    pack: DifferencePack,
    u01: np.ndarray,
    u02: np.ndarray,
    k2: np.ndarray,
    kernel: Kernel,
    f: Field,
    *,
    c: float = 1e-8,
    f_time: str = "central",
) -> np.ndarray:
    """Snapshot part of the coefficient reconstruction.

    F = 2 P [Lap u0~ + (K m0~) + f(., T/2) m0~] - P k2 grad u0~ . grad(u01 + u02),
    P = |grad u01|^{-2}.  ``f_time`` selects which time level of f multiplies
    m0~: "central" (the time the equation is evaluated at, default) or
    "initial" (kept selectable because the two choices are a live
    discrepancy; they coincide for time-constant f).
    """
    g = pack.grid
    if f_time not in ("central", "initial"):
        raise ValueError("f_time must be 'central' or 'initial'")
    p = _inverse_grad_sq(g, u01, c)
    km0 = apply_kernel_spatial(kernel, g, pack.m0_tilde)
    f_slice = f.values[..., g.index_t0 if f_time == "central" else 0]
    lap0 = _nodal_laplacian(g, pack.u0_tilde)
    cross = np.zeros(g.shape_space)
    for d0, ds in zip(
        _central_gradient(g, pack.u0_tilde), _central_gradient(g, u01 + u02)
    ):
        cross += d0 * ds
    return 2.0 * p * (lap0 + km0 + f_slice * pack.m0_tilde) - p * k2 * cross


def _nodal_laplacian(grid: Grid, arr: np.ndarray) -> np.ndarray:
    from .grid import second_derivative

    out = np.zeros(arr.shape)
    for axis in range(grid.dim):
        out += second_derivative(arr, axis, grid.h[axis])
    return out


def reconstruct_k_tilde(
    pack: DifferencePack,
    u01: np.ndarray,
    F: np.ndarray,
    mode: str = "snapshot",
    *,
    times: Sequence[float] | None = None,
    c: float = 1e-8,
) -> np.ndarray:
    """Coefficient difference from the central-time identity.

    snapshot: k~ = 2 P v(., T/2) + F.  shifted: replaces v(., T/2) by
    v(., t) - int_{T/2}^t w dtau, evaluated at each requested time and
    averaged; the pointwise identity makes the result t-independent up to
    discretization, which ``reconstruction_spread`` quantifies.
    """
    g = pack.grid
    p = _inverse_grad_sq(g, u01, c)
    if mode == "snapshot":
        return 2.0 * p * pack.v.values[..., g.index_t0] + F
    if mode != "shifted":
        raise ValueError("mode must be 'snapshot' or 'shifted'")
    if times is None:
        T = g.prism.T
        times = (T / 4.0, T / 2.0, 3.0 * T / 4.0)
    iw = time_integral_from_t0(pack.w).values
    acc = np.zeros(g.shape_space)
    for t in times:
        j = g.index_of_time(t)
        acc += 2.0 * p * (pack.v.values[..., j] - iw[..., j]) + F
    return acc / len(times)


def reconstruction_spread(
    pack: DifferencePack,
    u01: np.ndarray,
    F: np.ndarray,
    times: Sequence[float],
    *,
    c: float = 1e-8,
) -> float:
    """Largest pairwise L2 distance between shifted reconstructions."""
    g = pack.grid
    p = _inverse_grad_sq(g, u01, c)
    iw = time_integral_from_t0(pack.w).values
    fields = []
    for t in times:
        j = g.index_of_time(t)
        fields.append(2.0 * p * (pack.v.values[..., j] - iw[..., j]) + F)
    worst = 0.0
    for i in range(len(fields)):
        for j in range(i + 1, len(fields)):
            worst = max(worst, norm_spatial(g, fields[i] - fields[j], "L2"))
    return worst


# ---------------------------------------------------------------------------
# derived-system residuals


def _nodal_div(grid: Grid, comps: Sequence[np.ndarray]) -> np.ndarray:
    out = np.zeros(comps[0].shape)
    for axis, comp in enumerate(comps):
        out += first_derivative(comp, axis, grid.h[axis])
    return out


def _interior_mask(grid: Grid, time_ring: int = 2, eps: float | None = None) -> np.ndarray:
    mask = np.ones(grid.shape, dtype=bool)
    for axis in range(grid.dim):
        sl = [slice(None)] * (grid.dim + 1)
        sl[axis] = 0
        mask[tuple(sl)] = False
        sl[axis] = -1
        mask[tuple(sl)] = False
    if eps is not None:
        time_ring = max(time_ring, int(math.ceil(eps / grid.tau - 1e-12)))
    mask[..., :time_ring] = False
    mask[..., grid.nt - time_ring :] = False
    return mask


def _masked_norms(
    grid: Grid, res: np.ndarray, time_ring: int = 2, eps: float | None = None
) -> tuple[float, float]:
    mask = _interior_mask(grid, time_ring, eps)
    masked = np.where(mask, res, 0.0)
    l2 = math.sqrt(weighted_sum(grid, masked * masked))
    return l2, float(np.max(np.abs(masked)))


def residual_derived_system(
    pack: DifferencePack,
    t1: MFGTriple,
    t2: MFGTriple,
    kernel: Kernel,
    f: Field,
    which: str,
    *,
    c: float = 1e-8,
    eps: float | None = None,
) -> tuple[float, float]:
    """Discrete residual norms (L2, max) of one derived equation.

    All spatial operators are central nodal stencils; integral terms use
    the kernel quadrature and the cumulative central-time integral.  Norms
    exclude the spatial boundary ring and two time levels at each end,
    where one-sided stencils of second derivatives live.  With ``eps``
    given, the norms are restricted to the eps-trimmed time window: the
    forward solvers carry small layers near t = 0 and t = T (initial and
    terminal compatibility is only approximate for a perturbed
    coefficient), and twice t-differentiating amplifies them; the trimmed
    window is also where all downstream norms of the estimate live.
    """
    if which not in DERIVED_EQUATIONS:
        raise ValueError(f"unknown equation {which!r}; expected one of {DERIVED_EQUATIONS}")
    g = pack.grid
    k2 = t2.k
    fv = f.values

    if which == "value-diff":
        grads_ut = [comp.values for comp in gradient(pack.u_tilde)]
        grads_u1 = [comp.values for comp in gradient(t1.u)]
        grads_u2 = [comp.values for comp in gradient(t2.u)]
        cross = np.zeros(g.shape)
        grad1_sq = np.zeros(g.shape)
        for du, d1, d2 in zip(grads_ut, grads_u1, grads_u2):
            cross += du * (d1 + d2)
            grad1_sq += d1 * d1
        res = (
            pack.v.values
            + laplacian(pack.u_tilde).values
            + apply_kernel(kernel, pack.m_tilde).values
            + fv * pack.m_tilde.values
            - 0.5 * k2[..., None] * cross
            - 0.5 * pack.k_tilde[..., None] * grad1_sq
        )
        return _masked_norms(g, res, eps=eps)

    if which == "density-diff":
        grads_u1 = [comp.values for comp in gradient(t1.u)]
        grads_ut = [comp.values for comp in gradient(pack.u_tilde)]
        kb = k2[..., None]
        div1 = _nodal_div(g, [kb * pack.m_tilde.values * d1 for d1 in grads_u1])
        div2 = _nodal_div(g, [kb * t2.m.values * du for du in grads_ut])
        div3 = _nodal_div(
            g, [pack.k_tilde[..., None] * t1.m.values * d1 for d1 in grads_u1]
        )
        res = pack.q.values - laplacian(pack.m_tilde).values - div1 - div2 - div3
        return _masked_norms(g, res, eps=eps)

    # the four substituted equations share this preparation
    u01 = t1.u.values[..., g.index_t0]
    u02 = t2.u.values[..., g.index_t0]
    p = _inverse_grad_sq(g, u01, c)
    F = compute_F(pack, u01, u02, k2, kernel, f, c=c)
    ft = field_dt(f).values
    ftt = field_dtt(f).values
    grads_u1 = [comp.values for comp in gradient(t1.u)]
    grads_u2 = [comp.values for comp in gradient(t2.u)]
    s_comps = [d1 + d2 for d1, d2 in zip(grads_u1, grads_u2)]
    s_t = [first_derivative(s, g.dim, g.tau) for s in s_comps]
    grads_u1t = [first_derivative(d1, g.dim, g.tau) for d1 in grads_u1]
    iq = time_integral_from_t0(pack.q).values
    iv_grad = [
        time_integral_from_t0(comp).values for comp in gradient(pack.v)
    ]
    iw = time_integral_from_t0(pack.w).values
    v_shift = pack.v.values - iw
    grads_u0t = _central_gradient(g, pack.u0_tilde)
    kb = k2[..., None]
    pb = p[..., None]
    fb = F[..., None]
    m0b = pack.m0_tilde[..., None]

    if which == "value-dt":
        d1_mix = np.zeros(g.shape)
        for a, b in zip(grads_u1, grads_u1t):
            d1_mix += a * b
        grads_v = [comp.values for comp in gradient(pack.v)]
        dot_v_s = sum(gv * s for gv, s in zip(grads_v, s_comps))
        dot_iv_st = sum(ivc * st for ivc, st in zip(iv_grad, s_t))
        dot_u0_st = sum(d0[..., None] * st for d0, st in zip(grads_u0t, s_t))
        res = (
            field_dt(pack.v).values
            + laplacian(pack.v).values
            + apply_kernel(kernel, pack.q).values
            + fv * pack.q.values
            + ft * iq
            - 0.5 * kb * dot_v_s
            - 0.5 * kb * dot_iv_st
            - 2.0 * pb * d1_mix * v_shift
            - (fb * d1_mix - ft * m0b + 0.5 * kb * dot_u0_st)
        )
        return _masked_norms(g, res, eps=eps)

    if which == "value-dtt":
        s_tt = [first_derivative(st, g.dim, g.tau) for st in s_t]
        grads_u1tt = [first_derivative(d, g.dim, g.tau) for d in grads_u1t]
        d2_mix = np.zeros(g.shape)
        for a, b, bt in zip(grads_u1, grads_u1tt, grads_u1t):
            d2_mix += bt * bt + a * b
        grads_w = [comp.values for comp in gradient(pack.w)]
        grads_v = [comp.values for comp in gradient(pack.v)]
        dot_w_s = sum(gw * s for gw, s in zip(grads_w, s_comps))
        dot_v_st = sum(gv * st for gv, st in zip(grads_v, s_t))
        dot_iv_stt = sum(ivc * stt for ivc, stt in zip(iv_grad, s_tt))
        dot_u0_stt = sum(d0[..., None] * stt for d0, stt in zip(grads_u0t, s_tt))
        res = (
            field_dt(pack.w).values
            + laplacian(pack.w).values
            + apply_kernel(kernel, pack.r).values
            + 2.0 * ft * pack.q.values
            + fv * pack.r.values
            + ftt * iq
            - 0.5 * kb * dot_w_s
            - kb * dot_v_st
            - 0.5 * kb * dot_iv_stt
            - 2.0 * pb * d2_mix * v_shift
            - (fb * d2_mix - ftt * m0b + 0.5 * kb * dot_u0_stt)
        )
        return _masked_norms(g, res, eps=eps)

    m2t = field_dt(t2.m).values
    flux1 = [t1.m.values * d1 for d1 in grads_u1]
    flux1_t = [first_derivative(fx, g.dim, g.tau) for fx in flux1]

    if which == "density-dt":
        grads_v = [comp.values for comp in gradient(pack.v)]
        res = (
            field_dt(pack.q).values
            - laplacian(pack.q).values
            - _nodal_div(g, [kb * pack.q.values * d1 for d1 in grads_u1])
            - _nodal_div(g, [kb * iq * d1t for d1t in grads_u1t])
            - _nodal_div(g, [kb * t2.m.values * gv for gv in grads_v])
            - _nodal_div(g, [kb * m2t * ivc for ivc in iv_grad])
            - _nodal_div(g, [2.0 * pb * v_shift * fx for fx in flux1_t])
            - _nodal_div(g, [fb * fx for fx in flux1_t])
            - _nodal_div(g, [kb * m0b * d1t for d1t in grads_u1t])
            - _nodal_div(g, [kb * m2t * d0[..., None] for d0 in grads_u0t])
        )
        return _masked_norms(g, res, eps=eps)

    if which == "density-dtt":
        m2tt = field_dtt(t2.m).values
        grads_u1tt = [first_derivative(d, g.dim, g.tau) for d in grads_u1t]
        flux1_tt = [first_derivative(fx, g.dim, g.tau) for fx in flux1_t]
        grads_v = [comp.values for comp in gradient(pack.v)]
        grads_w = [comp.values for comp in gradient(pack.w)]
        res = (
            field_dt(pack.r).values
            - laplacian(pack.r).values
            - _nodal_div(g, [kb * pack.r.values * d1 for d1 in grads_u1])
            - 2.0 * _nodal_div(g, [kb * pack.q.values * d1t for d1t in grads_u1t])
            - _nodal_div(g, [kb * iq * d1tt for d1tt in grads_u1tt])
            - _nodal_div(g, [kb * t2.m.values * gw for gw in grads_w])
            - 2.0 * _nodal_div(g, [kb * m2t * gv for gv in grads_v])
            - _nodal_div(g, [kb * m2tt * ivc for ivc in iv_grad])
            - _nodal_div(g, [2.0 * pb * v_shift * fx for fx in flux1_tt])
            - _nodal_div(g, [fb * fx for fx in flux1_tt])
            - _nodal_div(g, [kb * m0b * d1tt for d1tt in grads_u1tt])
            - _nodal_div(g, [kb * m2tt * d0[..., None] for d0 in grads_u0t])
        )
        return _masked_norms(g, res, time_ring=3, eps=eps)

    raise AssertionError(which)


# ---------------------------------------------------------------------------
# pointwise differential inequalities


@dataclass(frozen=True)
class InequalityReport:
    which: str
    empirical_c: float
    lhs_max: float
    bracket_threshold: float
    small_bracket_measure: float
    node_fraction_used: float


def _abs_time_integral(field_values: np.ndarray, grid: Grid) -> np.ndarray:
    f = Field(grid, np.abs(field_values), _copy=False)
    return np.abs(time_integral_from_t0(f).values)


def _g_term(kernel: Kernel, field: Field) -> np.ndarray:
    """Structural kernel majorant of |field|; bounded kernels fall back to
    the full-domain integral."""
    if isinstance(kernel, GaussianProduct):
        g = field.grid
        out = np.empty(g.shape)
        absv = np.abs(field.values)
        for j in range(g.nt):
            out[..., j] = integrate_spatial(g, absv[..., j])
        return out
    return apply_G(kernel, field).values


def check_inequality(
    pack: DifferencePack,
    kernel: Kernel,
    which: str,
    c_candidate: float = 0.0,
    delta_budget: float = 0.0,
    *,
    eps: float | None = None,
) -> InequalityReport:
    """Empirical constant of one pointwise differential inequality.

    LHS is |d_t +- Lap| of the selected derivative field; the bracket is
    the sum of the lower-order majorant terms of that inequality (unit
    coefficients).  The reported constant is the max over nodes with
    bracket above threshold of (LHS - c_candidate * delta_bar) / bracket,
    where delta_bar is the uniform function with L2 mass ``delta_budget``.
    """
    if which not in INEQUALITIES:
        raise ValueError(f"unknown inequality {which!r}; expected one of {INEQUALITIES}")
    g = pack.grid
    v, q, w, r = pack.v, pack.q, pack.w, pack.r

    def grad_abs(f: Field) -> np.ndarray:
        total = np.zeros(g.shape)
        for comp in gradient(f):
            total += comp.values**2
        return np.sqrt(total)

    if which == "v":
        lhs = np.abs(field_dt(v).values + laplacian(v).values)
        bracket = (
            grad_abs(v)
            + np.abs(v.values)
            + _abs_time_integral(grad_abs(v), g)
            + _abs_time_integral(w.values, g)
            + _abs_time_integral(q.values, g)
            + _g_term(kernel, q)
            + np.abs(q.values)
        )
    elif which == "q":
        gv = grad_abs(v)
        lapv = np.abs(laplacian(v).values)
        bracket = (
            grad_abs(q)
            + np.abs(q.values)
            + _abs_time_integral(grad_abs(q) + np.abs(q.values), g)
            + lapv
            + gv
            + _abs_time_integral(lapv + gv, g)
            + _abs_time_integral(grad_abs(w) + np.abs(w.values), g)
        )
        lhs = np.abs(field_dt(q).values - laplacian(q).values)
    elif which == "w":
        lhs = np.abs(field_dt(w).values + laplacian(w).values)
        bracket = (
            grad_abs(w)
            + np.abs(w.values)
            + _abs_time_integral(w.values, g)
            + grad_abs(v)
            + np.abs(v.values)
            + _abs_time_integral(grad_abs(v), g)
            + np.abs(r.values)
            + np.abs(q.values)
            + _abs_time_integral(q.values, g)
            + _g_term(kernel, r)
        )
    else:
        gv = grad_abs(v)
        lapv = np.abs(laplacian(v).values)
        gw = grad_abs(w)
        lhs = np.abs(field_dt(r).values - laplacian(r).values)
        bracket = (
            grad_abs(r)
            + np.abs(r.values)
            + grad_abs(q)
            + np.abs(q.values)
            + lapv
            + gv
            + np.abs(v.values)
            + np.abs(laplacian(w).values)
            + gw
            + np.abs(w.values)
            + _abs_time_integral(lapv + gv + np.abs(v.values), g)
            + _abs_time_integral(gw + np.abs(w.values), g)
        )

    mask = _interior_mask(g, time_ring=2, eps=eps)
    scale = float(np.max(bracket)) if bracket.size else 0.0
    threshold = 1e-10 * max(scale, 1.0)
    measure_total = weighted_sum(g, np.ones(g.shape))
    small = mask & (bracket <= threshold)
    small_measure = weighted_sum(g, small.astype(float))
    usable = mask & (bracket > threshold)
    delta_bar = delta_budget / math.sqrt(measure_total) if delta_budget > 0.0 else 0.0
    if np.any(usable):
        ratios = np.maximum(lhs - c_candidate * delta_bar, 0.0)[usable] / bracket[usable]
        empirical_c = float(np.max(ratios))
        frac = float(np.count_nonzero(usable) / np.count_nonzero(mask))
    else:
        empirical_c = 0.0
        frac = 0.0
    return InequalityReport(
        which=which,
        empirical_c=empirical_c,
        lhs_max=float(np.max(np.where(mask, lhs, 0.0))),
        bracket_threshold=threshold,
        small_bracket_measure=float(small_measure),
        node_fraction_used=frac,
    )


# ---------------------------------------------------------------------------
# parameter calculus


@dataclass(frozen=True)
class StabilityParams:
    """Exact parameter bookkeeping for the final estimate.

    All derived quantities are Fractions computed from the inputs with no
    rounding, so identities like alpha eps (T - eps) - b^2 = beta b^2 hold
    exactly; float views are provided for numerics.
    """

    rho: Fraction
    epsilon: Fraction
    T: Fraction
    a: Fraction
    b: Fraction
    lam1: float
    s: Fraction
    beta: Fraction
    alpha: Fraction
    d: Fraction

    @property
    def delta0(self) -> float:
        return math.exp(-self.lam1 * float(self.d) / float(self.rho))

    def lam(self, delta: float) -> float:
        """Noise-matched weight steepness; decreasing in delta."""
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        return float(self.rho) / float(self.d) * math.log(1.0 / delta)

    def feasibility_margin(self) -> Fraction:
        return self.rho - (1 - self.rho) * self.s


def epsilon_window(rho: Fraction | float, T: Fraction | float) -> tuple[float, float]:
    rho_f, t_f = float(rho), float(T)
    return (t_f / 2.0) * (1.0 - math.sqrt(rho_f)), t_f / 2.0


def select_parameters(
    rho: Fraction | float | str,
    epsilon: Fraction | float | str,
    prism,
    lam1: float = 1.0,
) -> StabilityParams:
    """Map (rho, epsilon) to the weight and exponent constants, exactly.

    The epsilon window (T/2)(1 - sqrt(rho)) < epsilon < T/2 is checked by
    the equivalent rational comparison rho > (1 - 2 eps / T)^2, avoiding
    irrational arithmetic; beta is the smallest value closing the exponent
    comparison, attained with equality.
    """
    rho = Fraction(rho)
    epsilon = Fraction(epsilon)
    T = Fraction(prism.T)
    a = Fraction(prism.a)
    b = Fraction(prism.b)
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    lo, hi = epsilon_window(rho, T)
    half_gap = 1 - 2 * epsilon / T
    feasible = epsilon < T / 2 and (half_gap < 0 or rho > half_gap * half_gap)
    if not feasible:
        raise ValueError(
            f"epsilon = {float(epsilon):.6g} outside the admissible window "
            f"({lo:.6g}, {hi:.6g}) for rho = {float(rho):.6g}"
        )
    s = (T / 2 - epsilon) ** 2 / (epsilon * (T - epsilon))
    margin = rho - (1 - rho) * s
    beta = (1 - rho) * (Fraction(3, 2) + s) / margin
    alpha = (1 + beta) * b * b / (epsilon * (T - epsilon))
    d = (Fraction(3, 2) + (1 + beta) * s) * b * b
    return StabilityParams(
        rho=rho, epsilon=epsilon, T=T, a=a, b=b, lam1=float(lam1),
        s=s, beta=beta, alpha=alpha, d=d,
    )


# ---------------------------------------------------------------------------
# the end-to-end exponent sweep


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[dict, ...]
    excluded: tuple[dict, ...]
    slope: float
    intercept: float
    r_squared: float
    rho: float
    epsilon: float
    completeness: str

    def delta_decades(self) -> float:
        deltas = [row["delta"] for row in self.rows if row["delta"] > 0.0]
        if len(deltas) < 2:
            return 0.0
        return math.log10(max(deltas) / min(deltas))


def _sweep_errors(pack: DifferencePack, grid: Grid, eps: float) -> dict[str, float]:
    return {
        "err_k": norm_spatial(grid, pack.k_tilde, "L2"),
        "err_u_s0": norm(pack.u_tilde, "H21", eps=eps),
        "err_u_s1": norm(pack.v, "H21", eps=eps),
        "err_u_s2": norm(pack.w, "H21", eps=eps),
        "err_m_s0": norm(pack.m_tilde, "H21", eps=eps),
        "err_m_s1": norm(pack.q, "H21", eps=eps),
        "err_m_s2": norm(pack.r, "H21", eps=eps),
    }


def holder_sweep(
    spec: ProblemSpec,
    k1: np.ndarray,
    delta_k: np.ndarray,
    scales: Sequence[float],
    *,
    rho: float = 0.5,
    eps: float = 0.2,
    completeness: str = "full",
    damping: float = 0.5,
    max_iter: int = 60,
    tol: float = 1e-9,
    workers: int = 1,
) -> SweepReport:
    """Measured data-to-solution exponent over a coefficient family.

    For each scale both coefficients are solved with the same forward
    machinery and shared data, so data differences and solution differences
    carry the perturbation signal rather than solver bias.  The fitted
    slope of log(max error) against log(delta) is the empirical exponent;
    the theory asserts it is at least 1 - rho, with steeper (near-Lipschitz)
    behavior compliant.
    """
    g = spec.grid
    base = solve_mfg_picard(spec, k1, damping=damping, max_iter=max_iter, tol=tol)
    d1 = extract(base, completeness)

    def run_scale(scale: float) -> dict:
        k2 = k1 + scale * delta_k
        t2 = solve_mfg_picard(spec, k2, damping=damping, max_iter=max_iter, tol=tol)
        d2 = extract(t2, completeness)
        delta = measure_delta(d1, d2, completeness)
        pack = form_difference(base, t2, eps=eps)
        row = {"scale": scale, "delta": delta}
        row.update(_sweep_errors(pack, g, eps))
        return row

    rows: list[dict] = []
    excluded: list[dict] = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(s, pool.submit(run_scale, s)) for s in scales]
            results = []
            for s, fut in futures:
                try:
                    results.append(fut.result())
                except PicardNonConvergence as e:
                    excluded.append({"scale": s, "reason": str(e)})
            rows = sorted(results, key=lambda r: r["scale"])
    else:
        for s in scales:
            try:
                rows.append(run_scale(s))
            except PicardNonConvergence as e:
                excluded.append({"scale": s, "reason": str(e)})

    err_keys = [k for k in rows[0] if k.startswith("err_")] if rows else []
    pts = [
        (math.log(row["delta"]), math.log(max(row[k] for k in err_keys)))
        for row in rows
        if row["delta"] > 0.0 and max(row[k] for k in err_keys) > 0.0
    ]
    if len(pts) >= 2:
        xs = np.array([p[0] for p in pts])
        ys = np.array([p[1] for p in pts])
        slope, intercept = np.polyfit(xs, ys, 1)
        fit = slope * xs + intercept
        ss_res = float(np.sum((ys - fit) ** 2))
        ss_tot = float(np.sum((ys - np.mean(ys)) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    else:
        slope, intercept, r2 = math.nan, math.nan, math.nan
    return SweepReport(
        rows=tuple(rows),
        excluded=tuple(excluded),
        slope=float(slope),
        intercept=float(intercept),
        r_squared=float(r2),
        rho=float(rho),
        epsilon=float(eps),
        completeness=completeness,
    )


# ---------------------------------------------------------------------------
# final estimate assembly


def assemble_final_estimate(
    pack: DifferencePack,
    params: StabilityParams,
    delta: float,
    *,
    c_constant: float = 1.0,
) -> dict:
    """Both sides of the two-term estimate at lambda = max(lam(delta), lam1).

    RHS terms are combined in log space: the first decays like
    exp(-2 lam beta b^2) times the full-cylinder norm, the second is
    delta^2 exp(2 lam d); at lam = lam(delta) the second equals
    delta^{2(1 - rho)} by construction.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    lhs = pack.v_norm_sq("H21", eps=float(params.epsilon))
    lam = max(params.lam(delta), params.lam1) if delta < 1.0 else params.lam1
    b2 = float(params.b) ** 2
    log_term1 = (
        math.log(c_constant)
        - 2.0 * lam * float(params.beta) * b2
        + math.log(max(pack.v_norm_sq("H2"), 1e-300))
    )
    log_term2 = math.log(c_constant) + 2.0 * math.log(delta) + 2.0 * lam * float(params.d)
    log_rhs = np.logaddexp(log_term1, log_term2)
    log_lhs = math.log(lhs) if lhs > 0.0 else -math.inf
    return {
        "lambda": lam,
        "lhs_sq": lhs,
        "log_lhs_sq": log_lhs,
        "log_rhs_sq": float(log_rhs),
        "log_term_decay": log_term1,
        "log_term_noise": log_term2,
        "holds": log_lhs <= float(log_rhs),
        "margin_log": float(log_rhs) - log_lhs,
    }
