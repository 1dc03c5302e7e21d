"""Difference packs, coefficient reconstruction, inequality constants,
parameter calculus, and the data-to-solution exponent sweep."""

import math
from fractions import Fraction

import numpy as np
import pytest

from mfglab.mfg import solve_mfg_picard
from mfglab.norms import norm, norm_spatial
from mfglab.stability import (
    DERIVED_EQUATIONS,
    INEQUALITIES,
    NondegeneracyError,
    assemble_final_estimate,
    check_inequality,
    compute_F,
    epsilon_window,
    form_difference,
    holder_sweep,
    reconstruct_k_tilde,
    reconstruction_spread,
    residual_derived_system,
    select_parameters,
)

from conftest import KERNEL, PRISM, build_problem, perturbation


@pytest.fixture(scope="module")
def pair(make_pair):
    return make_pair(33, 65)


@pytest.fixture(scope="module")
def pack(make_pack):
    return make_pack(33, 65)


@pytest.fixture(scope="module")
def recon(pair, pack):
    g = pair["grid"]
    u01 = pair["t1"].u.values[..., g.index_t0]
    u02 = pair["t2"].u.values[..., g.index_t0]
    F = compute_F(pack, u01, u02, pair["k2"], KERNEL, pair["f"])
    return u01, u02, F


class TestDifferencePack:
    def test_fields_are_differences(self, pair, pack):
        np.testing.assert_array_equal(
            pack.u_tilde.values, pair["t1"].u.values - pair["t2"].u.values
        )
        np.testing.assert_array_equal(pack.k_tilde, pair["k1"] - pair["k2"])
        assert pack.grid == pair["grid"]

    def test_snapshots_taken_at_central_time(self, pair, pack):
        g = pair["grid"]
        np.testing.assert_array_equal(
            pack.u0_tilde, pack.u_tilde.values[..., g.index_t0]
        )
        np.testing.assert_array_equal(
            pack.m0_tilde, pack.m_tilde.values[..., g.index_t0]
        )

    def test_recorded_norms(self, pack):
        assert set(pack.norms) == {"V_H2_QT_sq", "V_H21_QepsT_sq", "eps"}
        assert pack.norms["eps"] == 0.2
        assert pack.norms["V_H2_QT_sq"] == pytest.approx(331429.5642542975, rel=1e-8)
        assert pack.norms["V_H21_QepsT_sq"] == pytest.approx(
            4.780119405920742, rel=1e-8
        )

    def test_v_norm_sq_stacks_components(self, pack):
        want = sum(
            norm(comp, "H21", eps=0.2) ** 2
            for comp in (pack.v, pack.q, pack.w, pack.r)
        )
        assert pack.v_norm_sq("H21", eps=0.2) == pytest.approx(want, rel=1e-13)

    def test_integral_identity_holds_at_quadrature_level(self, pack):
        assert pack.reconstruction_identity_residual() == pytest.approx(
            3.4517538507639056e-4, rel=1e-6
        )

    def test_grid_mismatch_rejected(self, pair):
        g, triple, f, spec = build_problem(33, 33)
        other = solve_mfg_picard(spec, np.ones(g.shape_space))
        with pytest.raises(ValueError, match="different grids"):
            form_difference(pair["t1"], other)


class TestReconstruction:
    def test_snapshot_reconstruction_error(self, pair, pack, recon):
        u01, _, F = recon
        krec = reconstruct_k_tilde(pack, u01, F)
        err = norm_spatial(pair["grid"], krec - pack.k_tilde, "L2")
        assert err == pytest.approx(3.8789098360899677e-4, rel=1e-6)

    def test_shifted_mode_matches_snapshot(self, pair, pack, recon):
        # v(., t) - int_{T/2}^t w telescopes back to v(., T/2) exactly on
        # the discrete level, so the two modes agree to rounding
        u01, _, F = recon
        ksnap = reconstruct_k_tilde(pack, u01, F)
        kshift = reconstruct_k_tilde(pack, u01, F, mode="shifted")
        assert norm_spatial(pair["grid"], kshift - ksnap, "L2") < 1e-14

    def test_shifted_reconstructions_are_time_independent(self, pack, recon):
        u01, _, F = recon
        spread = reconstruction_spread(pack, u01, F, times=(0.25, 0.5, 0.75))
        assert spread == 0.0

    def test_unknown_mode_rejected(self, pack, recon):
        u01, _, F = recon
        with pytest.raises(ValueError, match="mode must be 'snapshot' or 'shifted'"):
            reconstruct_k_tilde(pack, u01, F, mode="averaged")

    def test_flat_reference_gradient_rejected(self, pair, pack):
        g = pair["grid"]
        flat = np.ones(g.shape_space)
        with pytest.raises(NondegeneracyError, match="dips to"):
            compute_F(pack, flat, flat, pair["k2"], KERNEL, pair["f"])

    def test_f_time_selector(self, pair, pack, recon):
        u01, u02, F = recon
        with pytest.raises(ValueError, match="f_time must be"):
            compute_F(pack, u01, u02, pair["k2"], KERNEL, pair["f"], f_time="final")
        F_init = compute_F(
            pack, u01, u02, pair["k2"], KERNEL, pair["f"], f_time="initial"
        )
        # the manufactured source is genuinely time-dependent, so the two
        # conventions measurably disagree
        assert float(np.max(np.abs(F - F_init))) == pytest.approx(
            0.015678785571338463, rel=1e-6
        )


class TestDerivedResiduals:
    # trimmed (eps = 0.2) L2 residuals of the six derived equations on the
    # benchmark pair at (33, 65)
    FROZEN = {
        "value-diff": 0.0022548163245165787,
        "density-diff": 0.0009152487245462549,
        "value-dt": 0.02294937339878916,
        "density-dt": 0.005140920085381495,
        "value-dtt": 0.31607429551039157,
        "density-dtt": 0.0317699842059286,
    }

    @pytest.mark.parametrize("which", DERIVED_EQUATIONS)
    def test_trimmed_residuals(self, pair, pack, which):
        l2, worst = residual_derived_system(
            pack, pair["t1"], pair["t2"], KERNEL, pair["f"], which, eps=0.2
        )
        assert l2 == pytest.approx(self.FROZEN[which], rel=1e-6)
        assert worst > l2

    def test_unknown_equation_rejected(self, pair, pack):
        with pytest.raises(ValueError, match="unknown equation 'mass'"):
            residual_derived_system(
                pack, pair["t1"], pair["t2"], KERNEL, pair["f"], "mass"
            )


class TestInequalities:
    FROZEN = {
        "v": 190.74395083051573,
        "q": 6.0384656404330155,
        "w": 74.11625379259577,
        "r": 5.732423782381865,
    }

    @pytest.mark.parametrize("which", INEQUALITIES)
    def test_empirical_constants(self, pack, which):
        rep = check_inequality(pack, KERNEL, which, eps=0.2)
        assert rep.which == which
        assert rep.empirical_c == pytest.approx(self.FROZEN[which], rel=1e-6)
        assert rep.small_bracket_measure == 0.0
        assert rep.node_fraction_used == 1.0
        assert rep.lhs_max > 0.0

    def test_noise_budget_lowers_the_constant(self, pack):
        plain = check_inequality(pack, KERNEL, "v", eps=0.2)
        budgeted = check_inequality(
            pack, KERNEL, "v", c_candidate=1.0, delta_budget=1.0, eps=0.2
        )
        assert budgeted.empirical_c == pytest.approx(0.10634076253763297, rel=1e-6)
        assert budgeted.empirical_c < plain.empirical_c

    def test_unknown_inequality_rejected(self, pack):
        with pytest.raises(ValueError, match="unknown inequality 'z'"):
            check_inequality(pack, KERNEL, "z")


class TestParameterCalculus:
    def test_reference_point_is_exact(self):
        p = select_parameters(Fraction(1, 2), Fraction(1, 5), PRISM)
        assert p.s == Fraction(9, 16)
        assert p.beta == Fraction(33, 7)
        assert p.alpha == Fraction(1000, 7)
        assert p.d == Fraction(132, 7)
        assert p.feasibility_margin() == Fraction(7, 32)
        assert p.delta0 == math.exp(-264 / 7)

    def test_exponent_identity_holds_exactly(self):
        # alpha eps (T - eps) - b^2 = beta b^2 with no rounding
        p = select_parameters(Fraction(1, 2), Fraction(1, 5), PRISM)
        lhs = p.alpha * p.epsilon * (p.T - p.epsilon) - p.b * p.b
        assert lhs == p.beta * p.b * p.b

    def test_noise_matched_steepness(self):
        p = select_parameters(Fraction(1, 2), Fraction(1, 5), PRISM)
        assert p.lam(p.delta0) == pytest.approx(1.0, rel=1e-14)
        assert p.lam(1e-6) > p.lam(1e-3) > p.lam(1e-1) > 0.0
        for bad in (0.0, 1.0, 2.0, -0.5):
            with pytest.raises(ValueError, match="delta must lie in"):
                p.lam(bad)

    def test_epsilon_window(self):
        lo, hi = epsilon_window(0.5, 1.0)
        assert lo == pytest.approx(0.1464466094067262, abs=0.0)
        assert hi == 0.5

    def test_epsilon_outside_window_rejected(self):
        with pytest.raises(ValueError, match="outside the admissible window"):
            select_parameters(Fraction(1, 2), Fraction(1, 10), PRISM)
        with pytest.raises(ValueError, match="outside the admissible window"):
            select_parameters(Fraction(1, 2), Fraction(1, 2), PRISM)

    def test_window_boundary_is_strict(self):
        # rho = (1 - 2 eps / T)^2 exactly: the rational comparison has no
        # rounding slack, so the boundary point itself is infeasible
        with pytest.raises(ValueError, match="outside the admissible window"):
            select_parameters(Fraction(9, 25), Fraction(1, 5), PRISM)
        nudged = select_parameters(
            Fraction(9, 25) + Fraction(1, 10**9), Fraction(1, 5), PRISM
        )
        assert nudged.feasibility_margin() > 0

    def test_rho_range_checked(self):
        for rho in (Fraction(0), Fraction(1), Fraction(3, 2)):
            with pytest.raises(ValueError, match="rho must lie in"):
                select_parameters(rho, Fraction(1, 5), PRISM)


@pytest.fixture(scope="module")
def sweep_setup():
    g, triple, f, spec = build_problem(33, 65)
    return g, spec, np.ones(g.shape_space), perturbation(g)


@pytest.fixture(scope="module")
def params():
    return select_parameters(Fraction(1, 2), Fraction(1, 5), PRISM)


class TestSweep:
    SCALES = (0.0, 0.02, 0.05, 0.1)

    def test_small_sweep_fit(self, sweep_setup):
        g, spec, k1, dk = sweep_setup
        rep = holder_sweep(spec, k1, dk, self.SCALES)
        assert rep.slope == pytest.approx(1.0137131966416255, rel=1e-9)
        assert rep.r_squared == pytest.approx(0.9999906332771438, rel=1e-9)
        assert rep.delta_decades() == pytest.approx(0.689242497379236, rel=1e-9)
        assert rep.excluded == ()
        assert rep.completeness == "full"

    def test_zero_scale_row_kept_but_not_fitted(self, sweep_setup):
        g, spec, k1, dk = sweep_setup
        rep = holder_sweep(spec, k1, dk, self.SCALES)
        zero = rep.rows[0]
        assert zero["scale"] == 0.0
        assert zero["delta"] == 0.0
        assert zero["err_k"] == 0.0
        assert math.isfinite(rep.slope)

    def test_sweep_is_deterministic_and_thread_invariant(self, sweep_setup):
        g, spec, k1, dk = sweep_setup
        a = holder_sweep(spec, k1, dk, self.SCALES)
        b = holder_sweep(spec, k1, dk, self.SCALES)
        c = holder_sweep(spec, k1, dk, self.SCALES, workers=3)
        assert a == b
        assert a == c

    def test_nonconvergent_scale_is_excluded_with_reason(self, sweep_setup):
        # the base coefficient converges in 20 damped iterations, the large
        # scale needs 22, so a cap of 21 splits them
        g, spec, k1, dk = sweep_setup
        rep = holder_sweep(spec, k1, dk, (0.02, 4.0), max_iter=21)
        assert [row["scale"] for row in rep.rows] == [0.02]
        assert len(rep.excluded) == 1
        assert rep.excluded[0]["scale"] == 4.0
        assert "no convergence" in rep.excluded[0]["reason"]

    def test_single_point_has_no_slope(self, sweep_setup):
        g, spec, k1, dk = sweep_setup
        rep = holder_sweep(spec, k1, dk, (0.02,))
        assert math.isnan(rep.slope)
        assert rep.delta_decades() == 0.0


class TestFinalEstimate:
    def test_two_sided_estimate_holds_on_benchmark(self, pack, params):
        est = assemble_final_estimate(pack, params, 1e-3)
        assert est["holds"] is True
        assert est["lambda"] == 1.0
        assert est["margin_log"] == pytest.approx(22.334309629811933, rel=1e-8)
        # at this noise level the delta term dominates the decay term
        assert est["log_rhs_sq"] == pytest.approx(est["log_term_noise"], rel=1e-12)
        assert est["log_term_decay"] < est["log_term_noise"]

    def test_lambda_floors_at_lam1(self, pack, params):
        # lam(delta) only exceeds lam1 = 1 below delta0 ~ 4.2e-17
        assert assemble_final_estimate(pack, params, 1e-2)["lambda"] == 1.0
        assert assemble_final_estimate(pack, params, 1.5)["lambda"] == 1.0
        assert assemble_final_estimate(pack, params, 1e-18)["lambda"] > 1.0

    def test_delta_must_be_positive(self, pack, params):
        with pytest.raises(ValueError, match="delta must be positive"):
            assemble_final_estimate(pack, params, 0.0)
