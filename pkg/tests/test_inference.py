"""Tests for self-normalized statistics, decisions, and intervals."""

import numpy as np
import pytest

from relslope.errors import ContractError
from relslope.funcspace import Curve, Grid, empirical_covariance, norm_l2_sq
from relslope.eigensys import gram_l2, solve_eigen_scalar, solve_eigen_functional
from relslope.estimator import (
    FractionScheme,
    SequentialFit,
    build_design_scalar,
    fit_functional,
    fit_scalar,
    evaluate_estimate,
    ridge_path_scalar,
)
from relslope.inference import (
    TestStatistics,
    confidence_intervals,
    decide,
    largest_rejected_delta,
    stats_functional,
    stats_location,
    stats_one_sample_scalar,
    stats_two_sample,
)
from relslope.pivotal import PivotalConfig, QuantileTable
from relslope.simharness import DgpSpec, gen_sample


@pytest.fixture(scope="module")
def fitted():
    x, y = gen_sample(DgpSpec(slope="S2", predictor="fma1", n=120, seed=88))
    sys = solve_eigen_scalar(empirical_covariance(x), r=8)
    scheme = FractionScheme(120, 0.5, 12)
    fit = fit_scalar(x, y, sys, scheme)
    return x, y, sys, fit


def table_with(values: dict) -> QuantileTable:
    return QuantileTable(
        config=PivotalConfig(nu0=0.5, Q=12, n_paths=1000, n_steps=512, seed=0),
        quantiles=values,
    )


class TestStatisticsConstruction:
    def test_identical_coefficients_give_zero_v(self, fitted):
        _, _, sys, fit = fitted
        coeffs = np.tile(fit.coeffs[-1], (fit.scheme.Q, 1))
        flat = SequentialFit(coeffs, fit.lam, fit.scheme, fit.gram)
        stats = stats_one_sample_scalar(flat)
        assert stats.V == 0.0
        b = fit.coeffs[-1]
        assert stats.T == pytest.approx(b @ fit.gram @ b)

    def test_zero_final_coefficients(self, fitted):
        _, _, _, fit = fitted
        coeffs = fit.coeffs.copy()
        coeffs[-1] = 0.0
        stats = stats_one_sample_scalar(SequentialFit(coeffs, fit.lam, fit.scheme, fit.gram))
        assert stats.T == 0.0

    def test_t_matches_quadrature_and_v_matches_recomputation(self, fitted):
        _, _, sys, fit = fitted
        stats = stats_one_sample_scalar(fit)
        curve = evaluate_estimate(fit, sys, fit.scheme.Q)
        assert abs(stats.T - norm_l2_sq(curve)) < 1e-6
        # from-scratch recomputation of the self-normalizer
        nu = fit.scheme.fractions
        d = stats.norms_sq
        v_sq = 0.0
        for q in range(fit.scheme.Q):
            v_sq += nu[q] ** 4 * (d[q] - d[-1]) ** 2
        v_sq *= (1.0 - fit.scheme.nu0) / fit.scheme.Q
        assert abs(stats.V - np.sqrt(v_sq)) < 1e-12

    def test_final_fraction_contributes_zero(self, fitted):
        _, _, _, fit = fitted
        stats = stats_one_sample_scalar(fit)
        assert stats.norms_sq[-1] == stats.T

    def test_sign_invariance(self, fitted):
        _, _, _, fit = fitted
        stats = stats_one_sample_scalar(fit)
        flipped = SequentialFit(-fit.coeffs, fit.lam, fit.scheme, fit.gram)
        stats_f = stats_one_sample_scalar(flipped)
        assert stats_f.T == pytest.approx(stats.T, rel=1e-15)
        assert stats_f.V == pytest.approx(stats.V, rel=1e-15)

    def test_wrong_length_rejected(self):
        with pytest.raises(ContractError):
            TestStatistics.from_norms(np.ones(5), FractionScheme(100, 0.5, 10))


class TestLocation:
    def test_at_own_estimate(self, fitted):
        _, _, sys, fit = fitted
        beta_star = evaluate_estimate(fit, sys, fit.scheme.Q)
        stats = stats_location(fit, sys, beta_star)
        assert stats.T == pytest.approx(0.0, abs=1e-12)

    def test_zero_target_reduces_to_one_sample(self, fitted):
        _, _, sys, fit = fitted
        zero = Curve(sys.grid, np.zeros(sys.grid.n_points))
        a = stats_location(fit, sys, zero)
        b = stats_one_sample_scalar(fit)
        assert a.T == pytest.approx(b.T, abs=1e-6)
        assert a.V == pytest.approx(b.V, abs=1e-6)

    def test_matches_refined_quadrature(self, fitted):
        # oracle: distance norms recomputed with the spline interpolation
        # of the estimate on a 10x finer grid against a smooth target
        from relslope.eigensys import _spline_design

        _, _, sys, fit = fitted
        target = Curve.from_function(lambda s: np.exp(-s), sys.grid)
        stats = stats_location(fit, sys, target)

        fine = Grid(1001)
        b0f, _, _ = _spline_design(1001, 40)
        b0c, _, _ = _spline_design(101, 40)
        coeffs = np.linalg.lstsq(b0c, sys.value_matrix(), rcond=None)[0]
        phi_fine = b0f @ coeffs
        wf = fine.trapezoid_weights
        d_fine = np.empty(fit.scheme.Q)
        for q in range(fit.scheme.Q):
            est = phi_fine @ fit.coeffs[q]
            diff = est - np.exp(-fine.points)
            d_fine[q] = float(diff @ (wf * diff))
        assert np.max(np.abs(stats.norms_sq - d_fine)) < 1e-3

    def test_grid_mismatch(self, fitted):
        _, _, sys, fit = fitted
        with pytest.raises(ContractError):
            stats_location(fit, sys, Curve(Grid(51), np.zeros(51)))


class TestTwoSample:
    def test_identical_fits_give_zero(self, fitted):
        _, _, sys, fit = fitted
        stats = stats_two_sample(fit, fit, sys, sys)
        assert stats.T == 0.0
        assert stats.V == 0.0

    def test_zero_second_sample_reduces_to_one_sample(self, fitted):
        _, _, sys, fit = fitted
        zero_fit = SequentialFit(np.zeros_like(fit.coeffs), fit.lam, fit.scheme, fit.gram)
        a = stats_two_sample(fit, zero_fit, sys, sys)
        b = stats_one_sample_scalar(fit)
        assert a.T == pytest.approx(b.T, abs=1e-6)
        assert a.V == pytest.approx(b.V, abs=1e-6)

    def test_matches_direct_recomputation(self, fitted):
        x, y, sys, fit = fitted
        x2, y2 = gen_sample(DgpSpec(slope="S2", predictor="iid", n=150, seed=99))
        sys2 = solve_eigen_scalar(empirical_covariance(x2), r=8)
        fit2 = fit_scalar(x2, y2, sys2, FractionScheme(150, 0.5, 12))
        stats = stats_two_sample(fit, fit2, sys, sys2)

        w = sys.grid.trapezoid_weights
        d = np.empty(12)
        for q in range(12):
            diff = sys.value_matrix() @ fit.coeffs[q] - sys2.value_matrix() @ fit2.coeffs[q]
            d[q] = float(diff @ (w * diff))
        expected = TestStatistics.from_norms(d, fit.scheme)
        assert stats.T == pytest.approx(expected.T, rel=1e-12)
        assert stats.V == pytest.approx(expected.V, rel=1e-12)

    def test_scheme_mismatch_rejected(self, fitted):
        _, _, sys, fit = fitted
        other_scheme = FractionScheme(120, 0.25, 12)
        design = build_design_scalar(*gen_sample(DgpSpec("S2", "iid", n=120, seed=1)), sys)
        other = ridge_path_scalar(design, 1e-3, other_scheme, fit.gram)
        with pytest.raises(ContractError, match="scheme"):
            stats_two_sample(fit, other, sys, sys)


class TestFunctionalStats:
    def test_single_block_matches_scalar(self):
        x, y = gen_sample(DgpSpec(slope="F2", predictor="iid", n=60, seed=3))
        tsys = solve_eigen_functional(empirical_covariance(x), r=4)
        scheme = FractionScheme(60, 0.5, 6)
        fit = fit_functional(x, y, tsys, scheme, lam=1e-3)
        stats_full = stats_functional(fit)
        only = np.zeros_like(fit.coeffs)
        only[:, 2] = fit.coeffs[:, 2]
        from relslope.estimator import SequentialFitFunctional

        fit_only = SequentialFitFunctional(only, fit.lam, scheme, fit.grams)
        stats_only = stats_functional(fit_only)
        scalar_sub = SequentialFit(fit.coeffs[:, 2], fit.lam, scheme, fit.grams[2])
        stats_scalar = stats_one_sample_scalar(scalar_sub)
        assert stats_only.T == pytest.approx(stats_scalar.T, rel=1e-12)
        assert stats_only.V == pytest.approx(stats_scalar.V, rel=1e-12)
        assert stats_full.T >= stats_only.T

    def test_all_zero(self):
        x, y = gen_sample(DgpSpec(slope="F2", predictor="iid", n=60, seed=3))
        tsys = solve_eigen_functional(empirical_covariance(x), r=3)
        scheme = FractionScheme(60, 0.5, 6)
        fit = fit_functional(x, y, tsys, scheme, lam=1e-3)
        from relslope.estimator import SequentialFitFunctional

        zero = SequentialFitFunctional(np.zeros_like(fit.coeffs), fit.lam, scheme, fit.grams)
        stats = stats_functional(zero)
        assert stats.T == 0.0 and stats.V == 0.0

    def test_t_matches_2d_quadrature(self):
        from relslope.funcspace import norm_l2_sq_2d
        from relslope.estimator import evaluate_estimate_functional

        x, y = gen_sample(DgpSpec(slope="F2", predictor="iid", n=60, seed=3))
        tsys = solve_eigen_functional(empirical_covariance(x), r=4)
        scheme = FractionScheme(60, 0.5, 6)
        fit = fit_functional(x, y, tsys, scheme, lam=1e-4)
        stats = stats_functional(fit)
        surface = evaluate_estimate_functional(fit, tsys, scheme.Q)
        assert abs(stats.T - norm_l2_sq_2d(surface)) < 1e-5


class TestDecide:
    def test_reference_arithmetic(self):
        # T = 1.0, V = 0.1, Delta = 0.5, q95 = 11.55: 1.0 <= 1.655
        stats = TestStatistics(
            T=1.0, V=0.1, norms_sq=np.zeros(12), scheme=FractionScheme(100, 0.5, 12)
        )
        table = table_with({0.95: 11.55})
        report = decide(stats, 0.5, 0.05, table)
        assert report.reject is False
        assert report.quantile == 11.55

    def test_degenerate_normalizer(self):
        scheme = FractionScheme(100, 0.5, 12)
        table = table_with({0.95: 11.55})
        pos = TestStatistics(T=0.5, V=0.0, norms_sq=np.zeros(12), scheme=scheme)
        assert decide(pos, 0.0, 0.05, table).reject is True
        zero = TestStatistics(T=0.0, V=0.0, norms_sq=np.zeros(12), scheme=scheme)
        assert decide(zero, 0.0, 0.05, table).reject is False

    def test_monotone_in_delta(self):
        scheme = FractionScheme(100, 0.5, 12)
        table = table_with({0.95: 11.55})
        stats = TestStatistics(T=2.0, V=0.05, norms_sq=np.zeros(12), scheme=scheme)
        rejections = [
            decide(stats, d, 0.05, table).reject for d in np.linspace(0.0, 3.0, 20)
        ]
        assert all(a >= b for a, b in zip(rejections, rejections[1:]))

    def test_missing_level(self):
        stats = TestStatistics(
            T=1.0, V=0.1, norms_sq=np.zeros(12), scheme=FractionScheme(100, 0.5, 12)
        )
        with pytest.raises(ContractError, match="not present"):
            decide(stats, 0.5, 0.10, table_with({0.95: 11.55}))

    def test_report_serializable(self):
        import json

        stats = TestStatistics(
            T=1.0, V=0.1, norms_sq=np.zeros(12), scheme=FractionScheme(100, 0.5, 12)
        )
        table = table_with({0.95: 11.55, 0.975: 14.0})
        report = decide(stats, 0.5, 0.05, table, lambda_used=1e-3, seed=42)
        payload = json.loads(json.dumps(report.to_dict()))
        assert payload["reject"] is False
        assert payload["lambda"] == 1e-3
        assert payload["pivotal"]["Q"] == 12
        assert payload["confidence_intervals"]["two_sided"] is not None


class TestIntervals:
    def test_degenerate_v(self):
        scheme = FractionScheme(100, 0.5, 12)
        stats = TestStatistics(T=0.7, V=0.0, norms_sq=np.zeros(12), scheme=scheme)
        table = table_with({0.95: 11.55, 0.975: 14.0})
        one, two = confidence_intervals(stats, 0.05, table)
        assert one == (0.0, 0.7)
        assert two == (0.7, 0.7)

    def test_two_sided_upper_dominates(self):
        scheme = FractionScheme(100, 0.5, 12)
        stats = TestStatistics(T=0.7, V=0.2, norms_sq=np.zeros(12), scheme=scheme)
        table = table_with({0.95: 11.55, 0.975: 14.0})
        one, two = confidence_intervals(stats, 0.05, table)
        assert two[1] >= one[1]
        assert one[0] == 0.0
        assert two[0] >= 0.0

    def test_missing_half_level(self):
        scheme = FractionScheme(100, 0.5, 12)
        stats = TestStatistics(T=0.7, V=0.2, norms_sq=np.zeros(12), scheme=scheme)
        with pytest.raises(ContractError):
            confidence_intervals(stats, 0.05, table_with({0.95: 11.55}))


class TestLargestRejectedDelta:
    def test_zero_statistic(self):
        scheme = FractionScheme(100, 0.5, 12)
        stats = TestStatistics(T=0.0, V=0.3, norms_sq=np.zeros(12), scheme=scheme)
        assert largest_rejected_delta(stats, 0.05, table_with({0.95: 11.55})) == 0.0

    def test_threshold_characterization(self):
        scheme = FractionScheme(100, 0.5, 12)
        stats = TestStatistics(T=3.0, V=0.1, norms_sq=np.zeros(12), scheme=scheme)
        table = table_with({0.95: 11.55})
        d_star = largest_rejected_delta(stats, 0.05, table)
        eps = 1e-9
        assert decide(stats, d_star - eps, 0.05, table).reject is True
        assert decide(stats, d_star + eps, 0.05, table).reject is False

    def test_grid_search_oracle(self):
        scheme = FractionScheme(100, 0.5, 12)
        stats = TestStatistics(T=2.345, V=0.111, norms_sq=np.zeros(12), scheme=scheme)
        table = table_with({0.95: 11.55})
        d_star = largest_rejected_delta(stats, 0.05, table)
        grid = np.arange(0.0, 4.0, 1e-6)
        rejected = grid[grid < stats.T - 11.55 * stats.V]
        oracle = rejected.max() if rejected.size else 0.0
        assert abs(d_star - oracle) < 2e-6
