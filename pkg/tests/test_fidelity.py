"""Fidelity tests: transport distances against brute-force enumeration and
metric identities, Sinkhorn convergence behavior, the Gaussian benchmark,
predictability scores, and the comparison report."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wgansim.fidelity import (
    LP_BUDGET_ENTRIES,
    compare_report,
    cv_r2,
    exact_wasserstein,
    fit_mvn,
    predictability_profile,
    sample_mvn,
    sinkhorn,
)
from wgansim.tabular import ColumnSchema, Dataset

from oracles import brute_wasserstein


def _clouds(seed, n, m, d=2, shift=0.0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)), rng.normal(size=(m, d)) + shift


class TestExactWasserstein:
    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    def test_matches_brute_force(self, n):
        A, B = _clouds(n, n, n)
        assert exact_wasserstein(A, B) == pytest.approx(brute_wasserstein(A, B), abs=1e-12)

    def test_unequal_sizes_match_duplication_reduction(self):
        # with m = 2n the LP equals the assignment on duplicated A points
        A, B = _clouds(1, 3, 6)
        assert exact_wasserstein(A, B) == pytest.approx(
            brute_wasserstein(np.repeat(A, 2, axis=0), B), abs=1e-10
        )

    def test_self_distance_zero(self):
        A, _ = _clouds(2, 6, 6)
        assert exact_wasserstein(A, A) == 0.0

    def test_symmetry(self):
        A, B = _clouds(3, 5, 7)
        assert exact_wasserstein(A, B) == pytest.approx(exact_wasserstein(B, A), abs=1e-12)

    def test_pure_shift_distance(self):
        A, _ = _clouds(4, 8, 8)
        v = np.array([0.6, -0.8])  # unit norm
        assert exact_wasserstein(A, A + v) == pytest.approx(1.0, abs=1e-12)

    def test_scaling_homogeneity(self):
        A, B = _clouds(5, 4, 9)
        assert exact_wasserstein(3.0 * A, 3.0 * B) == pytest.approx(
            3.0 * exact_wasserstein(A, B), rel=1e-10
        )

    def test_plan_marginals_and_cost(self):
        A, B = _clouds(6, 5, 8)
        cost, plan = exact_wasserstein(A, B, return_plan=True)
        assert plan.method == "lp"
        np.testing.assert_allclose(plan.coupling.sum(axis=1), 1.0 / 5, atol=1e-9)
        np.testing.assert_allclose(plan.coupling.sum(axis=0), 1.0 / 8, atol=1e-9)
        assert np.all(plan.coupling >= -1e-15)
        assert cost == pytest.approx(plan.cost)

    def test_assignment_plan(self):
        A, B = _clouds(7, 4, 4)
        _, plan = exact_wasserstein(A, B, return_plan=True)
        assert plan.method == "assignment"
        np.testing.assert_allclose(plan.coupling.sum(axis=1), 0.25)

    def test_budget_error_mentions_sinkhorn(self):
        A = np.zeros((3000, 1))
        B = np.zeros((2000, 1))
        with pytest.raises(ValueError, match="sinkhorn"):
            exact_wasserstein(A, B)
        assert 3000 * 2000 > LP_BUDGET_ENTRIES

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            exact_wasserstein(np.zeros((3, 2)), np.zeros((3, 3)))

    def test_empty_cloud(self):
        with pytest.raises(ValueError, match="non-empty"):
            exact_wasserstein(np.zeros((0, 2)), np.zeros((3, 2)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_triangle_inequality(self, seed):
        rng = np.random.default_rng(seed)
        A, B, C = (rng.normal(size=(4, 2)) for _ in range(3))
        ab = exact_wasserstein(A, B)
        bc = exact_wasserstein(B, C)
        ac = exact_wasserstein(A, C)
        assert ac <= ab + bc + 1e-10


class TestSinkhorn:
    def test_upper_bounds_exact(self):
        A, B = _clouds(11, 6, 6, shift=1.0)
        exact = exact_wasserstein(A, B)
        res = sinkhorn(A, B, epsilon=0.3)
        assert res.converged
        assert res.cost >= exact - 1e-9

    def test_monotone_in_epsilon(self):
        A, B = _clouds(12, 7, 7, shift=1.0)
        exact = exact_wasserstein(A, B)
        costs = [sinkhorn(A, B, epsilon=e).cost for e in (0.5, 0.2, 0.1, 0.02)]
        for hi, lo in zip(costs, costs[1:]):
            assert hi >= lo - 1e-9
        assert costs[-1] >= exact - 1e-9

    def test_tiny_epsilon_close_to_exact(self):
        A, B = _clouds(13, 5, 5, shift=1.0)
        res = sinkhorn(A, B, epsilon=1e-3)
        assert res.converged and res.used_log_domain
        assert res.marginal_error < 1e-6
        assert res.cost == pytest.approx(exact_wasserstein(A, B), rel=0.01)

    def test_moderate_epsilon_stays_in_standard_domain(self):
        A, B = _clouds(14, 6, 9)
        res = sinkhorn(A, B, epsilon=0.5)
        assert res.converged and not res.used_log_domain
        assert res.marginal_error < 1e-6

    def test_iteration_cap_flagged(self):
        A, B = _clouds(15, 6, 6, shift=2.0)
        res = sinkhorn(A, B, epsilon=0.05, max_iters=2)
        assert not res.converged
        assert res.iterations >= 2

    def test_unequal_sizes(self):
        A, B = _clouds(16, 4, 7, shift=1.0)
        res = sinkhorn(A, B, epsilon=1e-3)
        assert res.cost == pytest.approx(exact_wasserstein(A, B), rel=0.02)

    def test_bad_epsilon(self):
        A, B = _clouds(17, 3, 3)
        with pytest.raises(ValueError, match="positive"):
            sinkhorn(A, B, epsilon=0.0)


class TestMvn:
    def test_two_point_hand_values(self):
        model = fit_mvn(np.array([[-1.0], [1.0]]))
        assert model.mean[0] == 0.0
        assert model.cov[0, 0] == pytest.approx(2.0)
        assert not model.ridged

    def test_singular_covariance_ridged(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=50)
        X = np.column_stack([x, np.ones(50)])  # zero-variance column
        model = fit_mvn(X)
        assert model.ridged
        assert np.all(np.isfinite(model.chol))

    def test_sample_moments(self):
        rng = np.random.default_rng(22)
        X = rng.multivariate_normal([1.0, -2.0], [[2.0, 0.8], [0.8, 1.0]], size=4000)
        model = fit_mvn(X)
        draw = sample_mvn(model, 40000, np.random.default_rng(23))
        np.testing.assert_allclose(draw.mean(axis=0), model.mean, atol=0.05)
        np.testing.assert_allclose(np.cov(draw, rowvar=False), model.cov, atol=0.1)

    def test_sampling_deterministic_by_rng(self):
        model = fit_mvn(np.random.default_rng(24).normal(size=(30, 2)))
        a = sample_mvn(model, 10, np.random.default_rng(5))
        b = sample_mvn(model, 10, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_too_few_rows(self):
        with pytest.raises(ValueError, match="two rows"):
            fit_mvn(np.zeros((1, 3)))


class TestCvR2:
    def test_linear_signal_near_one(self):
        rng = np.random.default_rng(31)
        X = rng.normal(size=(200, 2))
        y = 1.0 + 3.0 * X[:, 0] - X[:, 1] + 0.01 * rng.normal(size=200)
        assert cv_r2(X, y, "lm", seed=0) > 0.99

    def test_pure_noise_near_zero(self):
        rng = np.random.default_rng(32)
        X = rng.normal(size=(300, 2))
        y = rng.normal(size=300)
        assert cv_r2(X, y, "lm", seed=0) < 0.15

    def test_deterministic(self):
        rng = np.random.default_rng(33)
        X = rng.normal(size=(80, 2))
        y = X[:, 0] + rng.normal(size=80)
        assert cv_r2(X, y, "lm", seed=4) == cv_r2(X, y, "lm", seed=4)

    def test_constant_target_errors(self):
        with pytest.raises(ValueError, match="constant"):
            cv_r2(np.random.default_rng(0).normal(size=(40, 2)), np.ones(40), "lm")

    def test_profile_covers_columns(self):
        rng = np.random.default_rng(34)
        x = rng.normal(size=120)
        ds = Dataset(
            [ColumnSchema("a", "continuous"), ColumnSchema("b", "continuous")],
            np.column_stack([x, 2.0 * x + 0.05 * rng.normal(size=120)]),
        )
        prof = predictability_profile(ds, "lm", seed=0)
        assert set(prof) == {"a", "b"}
        assert prof["a"] > 0.9 and prof["b"] > 0.9


class TestCompareReport:
    def _pair(self):
        rng = np.random.default_rng(41)
        schema = [
            ColumnSchema("x", "continuous"),
            ColumnSchema("z", "censored_at_zero"),
        ]
        real = np.column_stack(
            [rng.normal(size=300), np.maximum(rng.normal(size=300), 0.0)]
        )
        synth = np.column_stack(
            [rng.normal(size=400) + 0.1, np.maximum(rng.normal(size=400), 0.0)]
        )
        return Dataset(schema, real), Dataset(schema, synth)

    def test_shared_bins_and_moments(self):
        real, synth = self._pair()
        rep = compare_report(real, synth, bins=20)
        assert [c.name for c in rep.columns] == ["x", "z"]
        for col in rep.columns:
            assert len(col.bin_edges) == 21
            assert len(col.real_density) == 20 and len(col.synth_density) == 20
        x = rep.columns[0]
        assert x.real_mean == pytest.approx(real.column("x").mean())
        assert x.synth_sd == pytest.approx(synth.column("x").std(ddof=1))
        lo, hi = x.bin_edges[0], x.bin_edges[-1]
        allx = np.r_[real.column("x"), synth.column("x")]
        assert lo == pytest.approx(allx.min()) and hi == pytest.approx(allx.max())

    def test_correlation_diff(self):
        real, synth = self._pair()
        rep = compare_report(real, synth)
        assert rep.correlation_max_abs_diff >= 0.0
        assert np.allclose(np.diag(rep.correlation_real), 1.0)

    def test_conditional_split(self):
        real, synth = self._pair()
        rep = compare_report(real, synth, conditionals=(("x", "z"),))
        branches = {(c.given, c.branch) for c in rep.conditionals}
        assert branches == {("z", "zero"), ("z", "positive")}
        zero = next(c for c in rep.conditionals if c.branch == "zero")
        assert zero.n_real == int((real.column("z") == 0).sum())

    def test_schema_mismatch(self):
        real, synth = self._pair()
        other = Dataset([ColumnSchema("q", "continuous")], np.zeros((5, 1)))
        with pytest.raises(ValueError, match="same columns"):
            compare_report(real, other)

    def test_json_safe(self):
        import json

        real, synth = self._pair()
        rep = compare_report(real, synth, conditionals=(("x", "z"),))
        json.dumps(rep.to_dict())
