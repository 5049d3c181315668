"""Damped-Newton solver for the exponential curvature equation."""

import json

import numpy as np
import pytest

from mazt import (
    KAPPA,
    BadReference,
    BetaSolution,
    NoConvergence,
    NonKahler,
    NotClassifiable,
    SeshadriViolation,
    SolveOptions,
    TorusGrid,
    ValidationError,
    check_comparison,
    integrate,
    laplacian,
    laplacian_bound_report,
    make_background,
    make_divisor,
    make_volume,
    solve_beta,
    solve_beta_divisor,
)
from mazt.ma_solver import telemetry_jsonl

from oracles import ORACLE_KAPPA, beta_solve_oracle_1d, oscillatory_profile


@pytest.fixture(scope="module")
def grid64():
    return TorusGrid(64)


@pytest.fixture(scope="module")
def osc_theta(grid64):
    return make_background(grid64, "1 + 2*cos(2*pi*x)")


@pytest.fixture(scope="module")
def g64(grid64):
    return make_volume(grid64, 1.0)


@pytest.fixture(scope="module")
def sol64(osc_theta, g64):
    return solve_beta(osc_theta, g64, 64.0)


class TestSolveBeta:
    def test_constant_data_is_exact(self, grid64, g64):
        theta = make_background(grid64, 2.0)
        sol = solve_beta(theta, g64, 16.0)
        assert sol.iters == 0
        assert np.abs(sol.u - np.log(2.0) / 16.0).max() < 1e-14
        assert sol.residual_sup == 0.0

    def test_residual_meets_tolerance(self, sol64, osc_theta, g64):
        assert sol64.residual_sup <= 1e-9
        # recompute the equation residual from scratch
        lhs = osc_theta.f_theta + KAPPA * laplacian(sol64.grid, sol64.u)
        rhs = np.exp(64.0 * sol64.u) * g64.g
        assert np.abs(lhs - rhs).max() <= 1.1e-9

    def test_mass_identity(self, sol64, osc_theta, g64):
        # integrating the equation: the exponential mass equals the volume
        mass = integrate(sol64.grid, np.exp(64.0 * sol64.u) * g64.g)
        assert mass == pytest.approx(osc_theta.volume, abs=1e-8)

    def test_solution_is_y_independent(self, sol64):
        assert (sol64.u.max(axis=1) - sol64.u.min(axis=1)).max() < 1e-9

    def test_matches_1d_oracle_same_resolution(self, sol64):
        x = np.arange(64) / 64.0
        u_oracle, res = beta_solve_oracle_1d(
            oscillatory_profile(x), np.ones(64), 64.0, ORACLE_KAPPA
        )
        assert res <= 1e-9
        gap = np.abs(sol64.u[:, 0] - u_oracle).max()
        assert gap < 1e-7, f"package vs 1-D oracle at matched resolution: {gap:.3e}"

    def test_warm_start_cuts_iterations(self, osc_theta, g64):
        cold = solve_beta(osc_theta, g64, 128.0)
        base = solve_beta(osc_theta, g64, 64.0)
        warm = solve_beta(osc_theta, g64, 128.0, u0=base.u)
        assert warm.iters < cold.iters
        assert np.abs(warm.u - cold.u).max() < 1e-7

    def test_deterministic(self, osc_theta, g64):
        a = solve_beta(osc_theta, g64, 32.0)
        b = solve_beta(osc_theta, g64, 32.0)
        assert np.array_equal(a.u, b.u)

    def test_validation_errors(self, grid64, osc_theta, g64):
        with pytest.raises(ValidationError, match="beta"):
            solve_beta(osc_theta, g64, 0.0)
        with pytest.raises(NonKahler):
            solve_beta(make_background(grid64, -1.0, require_kahler=False), g64, 8.0)
        other = make_volume(TorusGrid(32), 1.0)
        with pytest.raises(ValidationError, match="grid"):
            solve_beta(osc_theta, other, 8.0)

    def test_options_validated(self):
        with pytest.raises(ValidationError):
            SolveOptions(newton_tol=0.0)
        with pytest.raises(ValidationError):
            SolveOptions(max_iters=0)

    def test_no_convergence_carries_history(self, osc_theta, g64):
        with pytest.raises(NoConvergence) as info:
            solve_beta(osc_theta, g64, 64.0, opts=SolveOptions(max_iters=1))
        assert len(info.value.history) >= 1
        assert all(r > 0.0 for r in info.value.history)

    def test_telemetry_jsonl(self, sol64):
        lines = telemetry_jsonl(sol64).splitlines()
        assert len(lines) == sol64.iters + 1
        records = [json.loads(line) for line in lines]
        assert records[0]["iteration"] == 0
        assert records[-1]["residual_sup"] == pytest.approx(sol64.residual_sup)
        assert all({"iteration", "residual_sup", "step", "cg_iters"} <= set(r) for r in records)


@pytest.fixture(scope="module")
def disc():
    grid = TorusGrid(64)
    omega = make_background(grid, 1.0)
    divisor = make_divisor(grid, [(32, 32, 1.0)])
    g = make_volume(grid, 1.0)
    return omega, divisor, g


class TestSolveBetaDivisor:
    def test_zero_weight_reduces_exactly(self, disc):
        omega, divisor, g = disc
        plain = solve_beta(omega, g, 32.0)
        degenerate = solve_beta_divisor(omega, divisor, 0.0, 32.0, g)
        assert np.array_equal(plain.u, degenerate.u)

    def test_twisted_mass_identity(self, disc):
        omega, divisor, g = disc
        lam = 0.5
        sol = solve_beta_divisor(omega, divisor, lam, 64.0, g)
        assert sol.residual_sup <= 1e-9
        weight = np.exp(64.0 * sol.u + lam * 64.0 * divisor.green_potential) * g.g
        assert integrate(sol.grid, weight) == pytest.approx(
            omega.volume - lam * divisor.total_mass, abs=1e-8
        )

    def test_potential_dips_at_divisor(self, disc):
        omega, divisor, g = disc
        sol = solve_beta_divisor(omega, divisor, 0.5, 64.0, g)
        phi = sol.u + 0.5 * divisor.green_potential
        assert np.unravel_index(phi.argmin(), phi.shape) == (32, 32)

    def test_validation(self, disc):
        omega, divisor, g = disc
        with pytest.raises(ValidationError, match="lam"):
            solve_beta_divisor(omega, divisor, -0.1, 8.0, g)
        with pytest.raises(SeshadriViolation):
            solve_beta_divisor(omega, divisor, 1.0, 8.0, g)
        with pytest.raises(ValidationError, match="beta"):
            solve_beta_divisor(omega, divisor, 0.5, 0.0, g)


class TestComparison:
    def test_shifted_solutions_compare(self, sol64, osc_theta, g64):
        u = sol64.u
        v = u - 0.01  # residual gains a positive exponential margin
        verdict = check_comparison(osc_theta, g64, 64.0, u, v, class_tol=1e-6)
        assert verdict.holds
        assert verdict.violation_count == 0
        assert verdict.worst_gap == pytest.approx(-0.01, abs=1e-12)
        assert verdict.v_residual_min >= -1e-6
        assert verdict.u_residual_max <= 1e-6

    def test_mixed_signs_not_classifiable(self, sol64, osc_theta, g64):
        u = sol64.u
        with pytest.raises(NotClassifiable):
            check_comparison(osc_theta, g64, 64.0, u, u + 0.01, class_tol=1e-6)


class TestLaplacianBound:
    def test_bound_holds_against_flat_reference(self, sol64, osc_theta):
        ref = make_background(sol64.grid, 1.0)
        report = laplacian_bound_report(osc_theta, sol64, ref)
        assert report.holds and report.slack >= 0.0
        assert report.b_constant == 0.0
        assert report.prefactor == pytest.approx(1.0 / (1.0 - 1.0 / 64.0))
        assert report.sup_trace_theta == pytest.approx(3.0)
        # zero curvature constant: the bound is the flat constant everywhere
        assert report.bound_sup == pytest.approx(report.bound_min)
        assert report.trace_ratio_max <= report.bound_sup

    def test_bad_references(self, sol64, osc_theta):
        with pytest.raises(BadReference, match="positive"):
            laplacian_bound_report(
                osc_theta, sol64, make_background(sol64.grid, "cos(2*pi*x)", require_kahler=False)
            )
        with pytest.raises(BadReference, match="volume"):
            laplacian_bound_report(osc_theta, sol64, make_background(sol64.grid, 2.0))

    def test_small_beta_rejected(self, sol64, osc_theta, g64):
        low = solve_beta(osc_theta, g64, 0.5)
        with pytest.raises(ValidationError, match="exceed 1"):
            laplacian_bound_report(osc_theta, low, make_background(sol64.grid, 1.0))
