"""Forward solvers: marching schemes, fixed point, manufactured solutions."""

import numpy as np
import pytest

from mfglab.grid import BoundaryTrace, Face, Field, Prism, make_grid, sample_field
from mfglab.kernels import SeparableDelta
from mfglab.mfg import (
    BlowupError,
    M_FLOOR,
    MFGTriple,
    PicardNonConvergence,
    ProblemSpec,
    bump_form,
    constant_boundary,
    dirichlet_data,
    explicit_time_step_bound,
    manufacture_triple,
    quadratic_form,
    residual,
    solve_fokker_planck,
    solve_hjb,
    solve_mfg_picard,
    spec_for_triple,
    steady_density,
)

PRISM = Prism(1.0, 2.0, (), 1.0)


def heat_problem(nx: int, nt: int):
    """Pure-diffusion density problem: no drift, no coupling, constant walls."""
    g = make_grid(PRISM, nx, nt)
    u_const = sample_field(g, lambda x, t: 0.0 + 0 * x + 0 * t)
    m0 = 2.0 + np.sin(np.pi * (g.axis_coords(0) - 1.0))
    spec = ProblemSpec(
        grid=g,
        kernel=SeparableDelta(amplitude=0.0),
        f=Field(g, np.zeros(g.shape)),
        u_terminal=np.zeros(nx),
        m_initial=m0,
        u_boundary=dirichlet_data(u_const),
        m_boundary=constant_boundary(g, 2.0),
    )
    exact = (
        2.0
        + np.sin(np.pi * (g.axis_coords(0) - 1.0))[:, None]
        * np.exp(-np.pi**2 * g.times[None, :])
    )
    return g, spec, u_const, exact


class TestClosedForms:
    def test_bump_form_is_corner_compatible(self):
        # the time profile has a double zero at both ends: both end levels
        # reduce to the steady x^2 background and d_t vanishes there
        g = make_grid(PRISM, 33, 65)
        form = bump_form(PRISM)
        u = form.sample(g)
        x = g.axis_coords(0)
        np.testing.assert_allclose(u.values[..., 0], x * x, atol=1e-14)
        np.testing.assert_allclose(u.values[..., -1], x * x, atol=1e-14)
        mesh = g.spacetime_meshgrid()
        dt_vals = np.broadcast_to(form.d_t(*mesh), g.shape)
        assert np.max(np.abs(dt_vals[..., 0])) < 1e-14
        assert np.max(np.abs(dt_vals[..., -1])) < 1e-14

    def test_bump_peaks_at_central_time(self):
        g = make_grid(PRISM, 33, 65)
        u = bump_form(PRISM, amplitude=0.3).sample(g)
        interior = np.abs(u.values - u.values[0, 0])
        assert interior.max() == pytest.approx(interior[:, g.index_t0].max())

    def test_quadratic_form_derivatives_close(self):
        # closed-form derivatives agree with the stencils applied to the sample
        from mfglab.grid import dt as field_dt, gradient, laplacian

        g = make_grid(PRISM, 33, 65)
        form = quadratic_form(1)
        u = form.sample(g)
        mesh = g.spacetime_meshgrid()
        np.testing.assert_allclose(
            field_dt(u).values, np.broadcast_to(form.d_t(*mesh), g.shape), atol=1e-10
        )
        np.testing.assert_allclose(
            gradient(u)[0].values, np.broadcast_to(form.grad[0](*mesh), g.shape), atol=1e-10
        )
        np.testing.assert_allclose(
            laplacian(u).values, np.broadcast_to(form.lap(*mesh), g.shape), atol=1e-9
        )

    def test_steady_density_positive_and_normalized_shape(self):
        g = make_grid(PRISM, 33, 65)
        m0 = steady_density(g)
        assert m0.shape == g.shape_space
        assert m0.min() > 0.0
        x = g.axis_coords(0)
        np.testing.assert_allclose(m0, np.exp(1.0 - x * x), rtol=1e-12)


class TestFokkerPlanck:
    def test_constant_state_is_exact(self):
        g = make_grid(PRISM, 33, 65)
        u_const = sample_field(g, lambda x, t: 0.0 + 0 * x + 0 * t)
        spec = ProblemSpec(
            grid=g,
            kernel=SeparableDelta(amplitude=0.0),
            f=Field(g, np.zeros(g.shape)),
            u_terminal=np.zeros(33),
            m_initial=np.full(33, 2.0),
            u_boundary=dirichlet_data(u_const),
            m_boundary=constant_boundary(g, 2.0),
        )
        m = solve_fokker_planck(spec, np.ones(33), u_const)
        assert np.max(np.abs(m.values - 2.0)) < 1e-13

    def test_heat_mode_decay(self):
        _, spec, u_const, exact = heat_problem(33, 65)
        m = solve_fokker_planck(spec, np.ones(33), u_const)
        assert np.max(np.abs(m.values - exact)) < 0.03

    def test_first_order_in_time(self):
        # backward Euler: quartering tau cuts the error near fourfold
        errs = []
        for nt in (65, 257):
            _, spec, u_const, exact = heat_problem(33, nt)
            m = solve_fokker_planck(spec, np.ones(33), u_const)
            errs.append(np.max(np.abs(m.values - exact)))
        assert 0.2 < errs[1] / errs[0] < 0.4

    def test_explicit_matches_exact_under_cfl(self):
        _, spec, u_const, exact = heat_problem(33, 4097)
        m = solve_fokker_planck(spec, np.ones(33), u_const, method="explicit")
        assert np.max(np.abs(m.values - exact)) < 2e-4

    def test_explicit_step_guard(self):
        _, spec, u_const, _ = heat_problem(33, 65)
        bound = explicit_time_step_bound(spec, np.ones(33), u_const)
        assert bound < spec.grid.tau
        with pytest.raises(ValueError, match="stability bound"):
            solve_fokker_planck(spec, np.ones(33), u_const, method="explicit")

    def test_k_shape_guard(self):
        _, spec, u_const, _ = heat_problem(33, 65)
        with pytest.raises(ValueError, match="spatial shape"):
            solve_fokker_planck(spec, np.ones(7), u_const)


class TestHJB:
    def test_backward_heat_mode(self):
        g = make_grid(PRISM, 33, 257)
        kern = SeparableDelta(amplitude=0.0)
        zero_tr = dirichlet_data(sample_field(g, lambda x, t: 0.0 + 0 * x + 0 * t))
        spec = ProblemSpec(
            grid=g,
            kernel=kern,
            f=Field(g, np.zeros(g.shape)),
            u_terminal=np.sin(np.pi * (g.axis_coords(0) - 1.0)),
            m_initial=np.ones(33),
            u_boundary=zero_tr,
            m_boundary=constant_boundary(g, 1.0),
        )
        u = solve_hjb(spec, np.zeros(33), sample_field(g, lambda x, t: 1.0 + 0 * x + 0 * t))
        exact = (
            np.sin(np.pi * (g.axis_coords(0) - 1.0))[:, None]
            * np.exp(-np.pi**2 * (1.0 - g.times[None, :]))
        )
        assert np.max(np.abs(u.values - exact)) < 8e-3

    def test_blowup_guard_names_level(self):
        g = make_grid(PRISM, 33, 65)
        kern = SeparableDelta(amplitude=0.4, n1=1)
        triple, f = manufacture_triple(
            g, kern, np.ones(33), bump_form(PRISM), steady_density(g)
        )
        spec = spec_for_triple(triple, kern, f)
        with pytest.raises(BlowupError, match="blew up at time level"):
            solve_mfg_picard(spec, -80.0 * np.ones(33), damping=1.0, max_iter=3)


class TestPicard:
    def test_decoupled_problem_converges_immediately(self):
        # no kernel term and f = 0: u never sees m, one sweep settles both
        g = make_grid(PRISM, 33, 65)
        u_const = sample_field(g, lambda x, t: 0.0 + 0 * x + 0 * t)
        spec = ProblemSpec(
            grid=g,
            kernel=SeparableDelta(amplitude=0.0),
            f=Field(g, np.zeros(g.shape)),
            u_terminal=np.zeros(33),
            m_initial=steady_density(g),
            u_boundary=dirichlet_data(u_const),
            m_boundary=dirichlet_data(
                Field(g, np.repeat(steady_density(g)[..., None], g.nt, axis=-1))
            ),
        )
        triple = solve_mfg_picard(spec, np.ones(33), tol=1e-9)
        assert triple.report["iterations"] == 1

    def test_benchmark_problem_converges(self, make_pair):
        pair = make_pair(33, 65)
        rep = pair["t1"].report
        assert rep["history"][-1] < 1e-10
        assert rep["iterations"] < 40
        # damped fixed point contracts at a steady rate here
        hist = rep["history"]
        ratios = [b / a for a, b in zip(hist, hist[1:]) if a > 1e-14]
        assert max(ratios[3:12]) < 0.6

    def test_deterministic(self, make_pair):
        pair = make_pair(33, 65)
        again = solve_mfg_picard(pair["spec"], pair["k1"], damping=0.5, max_iter=80, tol=1e-10)
        np.testing.assert_array_equal(pair["t1"].u.values, again.u.values)
        np.testing.assert_array_equal(pair["t1"].m.values, again.m.values)

    def test_solution_solves_both_equations(self, make_pair):
        pair = make_pair(33, 65)
        _, l2_hjb, _ = residual(pair["t1"], pair["spec"], "hjb")
        _, l2_fp, _ = residual(pair["t1"], pair["spec"], "fp")
        assert l2_hjb < 0.1 and l2_fp < 0.01

    def test_nonconvergence_carries_history(self):
        g = make_grid(PRISM, 33, 65)
        kern = SeparableDelta(amplitude=12.0, n1=12)
        triple, f = manufacture_triple(
            g, kern, np.ones(33), bump_form(PRISM), steady_density(g)
        )
        spec = spec_for_triple(triple, kern, f)
        with pytest.raises(PicardNonConvergence, match="no convergence after"):
            solve_mfg_picard(spec, np.ones(33), damping=1.0, max_iter=6, tol=1e-12)

    def test_damping_validated(self, make_pair):
        pair = make_pair(33, 65)
        with pytest.raises(ValueError, match="damping"):
            solve_mfg_picard(pair["spec"], pair["k1"], damping=0.0)

    def test_mirror_symmetry(self, make_pair):
        # reflecting every data array about the slab midpoint commutes with
        # the solver to roundoff
        pair = make_pair(33, 65)
        g, spec = pair["grid"], pair["spec"]

        def flip(a):
            return np.asarray(a)[::-1].copy()

        ub = {
            Face(0, -1): BoundaryTrace(g, Face(0, -1), spec.u_boundary[Face(0, 1)].values.copy()),
            Face(0, 1): BoundaryTrace(g, Face(0, 1), spec.u_boundary[Face(0, -1)].values.copy()),
        }
        mb = {
            Face(0, -1): BoundaryTrace(g, Face(0, -1), spec.m_boundary[Face(0, 1)].values.copy()),
            Face(0, 1): BoundaryTrace(g, Face(0, 1), spec.m_boundary[Face(0, -1)].values.copy()),
        }
        mirrored = ProblemSpec(
            grid=g,
            kernel=spec.kernel,
            f=Field(g, spec.f.values[::-1].copy()),
            u_terminal=flip(spec.u_terminal),
            m_initial=flip(spec.m_initial),
            u_boundary=ub,
            m_boundary=mb,
        )
        got = solve_mfg_picard(mirrored, flip(pair["k1"]), damping=0.5, max_iter=80, tol=1e-10)
        assert np.max(np.abs(got.u.values[::-1] - pair["t1"].u.values)) < 1e-12
        assert np.max(np.abs(got.m.values[::-1] - pair["t1"].m.values)) < 1e-12


class TestManufacture:
    def test_residuals_small_on_coarse_grid(self, make_pair):
        pair = make_pair(33, 65)
        g = pair["grid"]
        triple, f = manufacture_triple(
            g, pair["spec"].kernel, pair["k1"], bump_form(PRISM), steady_density(g)
        )
        spec = spec_for_triple(triple, pair["spec"].kernel, f)
        _, l2_hjb, _ = residual(triple, spec, "hjb")
        _, l2_fp, _ = residual(triple, spec, "fp")
        assert l2_hjb < 5e-3 and l2_fp < 1e-2

    def test_rejects_nonpositive_initial_density(self):
        g = make_grid(PRISM, 33, 65)
        with pytest.raises(ValueError, match="positive"):
            manufacture_triple(
                g, SeparableDelta(), np.ones(33), bump_form(PRISM), np.zeros(33)
            )

    def test_density_stays_above_floor(self, make_pair):
        pair = make_pair(33, 65)
        assert pair["t1"].m.values.min() > M_FLOOR

    def test_quadratic_form_2d_is_reproduced_exactly(self):
        # a space-time quadratic lies in the kernel of the truncation error
        g = make_grid(Prism(1.0, 2.0, (0.5,), 1.0), (9, 9), 17)
        x1, x2 = g.space_meshgrid()
        kern = SeparableDelta(amplitude=0.2)
        triple, f = manufacture_triple(
            g, kern, np.ones((9, 9)), quadratic_form(2),
            np.exp(1.0 - x1**2 - 0.5 * x2**2),
        )
        spec = spec_for_triple(triple, kern, f)
        _, l2_hjb, _ = residual(triple, spec, "hjb")
        assert l2_hjb < 1e-12

    def test_2d_picard_smoke(self):
        g = make_grid(Prism(1.0, 2.0, (0.5,), 1.0), (9, 9), 17)
        x1, x2 = g.space_meshgrid()
        kern = SeparableDelta(amplitude=0.2)
        triple, f = manufacture_triple(
            g, kern, np.ones((9, 9)), quadratic_form(2),
            np.exp(1.0 - x1**2 - 0.5 * x2**2),
        )
        spec = spec_for_triple(triple, kern, f)
        got = solve_mfg_picard(spec, np.ones((9, 9)), damping=0.5, max_iter=40, tol=1e-8)
        assert got.report["history"][-1] < 1e-8
        assert np.max(np.abs(got.u.values - triple.u.values)) < 0.05


class TestSpecValidation:
    def test_shape_and_positivity_guards(self):
        g = make_grid(PRISM, 33, 65)
        u_const = sample_field(g, lambda x, t: 0.0 + 0 * x + 0 * t)
        good = dict(
            grid=g,
            kernel=SeparableDelta(),
            f=Field(g, np.zeros(g.shape)),
            u_terminal=np.zeros(33),
            m_initial=np.ones(33),
            u_boundary=dirichlet_data(u_const),
            m_boundary=constant_boundary(g, 1.0),
        )
        ProblemSpec(**good)
        with pytest.raises(ValueError, match="spatial shape"):
            ProblemSpec(**{**good, "u_terminal": np.zeros(7)})
        with pytest.raises(ValueError, match="positive"):
            ProblemSpec(**{**good, "m_initial": np.zeros(33)})
        bad_boundary = {Face(0, -1): good["u_boundary"][Face(0, -1)]}
        with pytest.raises(ValueError, match="missing"):
            ProblemSpec(**{**good, "u_boundary": bad_boundary})

    def test_triple_guards(self, make_pair):
        pair = make_pair(33, 65)
        with pytest.raises(ValueError, match="spatial shape"):
            MFGTriple(pair["t1"].u, pair["t1"].m, np.ones(7))

    def test_residual_rejects_unknown_equation(self, make_pair):
        pair = make_pair(33, 65)
        with pytest.raises(ValueError, match="unknown equation"):
            residual(pair["t1"], pair["spec"], "navier")

    def test_nondegeneracy_constant_positive(self, make_pair):
        assert make_pair(33, 65)["t1"].nondegeneracy_constant() > 0.0
