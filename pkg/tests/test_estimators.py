# tests/test_estimators.py

import numpy as np
import pytest
from numpy.testing import assert_allclose

from confsel.core.errors import EstimationError
from confsel.schemas.config import PsmConfig, TmleConfig
from confsel.services.estimators import (
    design_matrix,
    fit_design,
    fit_logistic,
    propensity_scores,
    psm_ace,
    targeted_fit,
    tmle_ace,
)
from tests.conftest import make_raw


def _difference_in_means(t, y):
    t, y = np.asarray(t), np.asarray(y, dtype=float)
    return y[t == 1].mean() - y[t == 0].mean()


@pytest.fixture
def confounded(rng):
    n = 800
    x1 = rng.integers(0, 2, n)
    x2 = rng.normal(size=n)
    t = (rng.random(n) < 1.0 / (1.0 + np.exp(-(x2 - 0.5 * x1)))).astype(int)
    y = 2.0 * t + x2 + x1 + rng.normal(size=n)
    return make_raw({"X1": x1, "X2": x2, "T": t, "Y": y})


class TestLogistic:
    def test_intercept_only_is_logit_of_mean(self):
        raw = make_raw({"T": [1] * 30 + [0] * 70, "Y": np.zeros(100)})
        model = fit_logistic(raw, "T", [])
        assert model.converged
        assert_allclose(model.coefficients[0], np.log(0.3 / 0.7), rtol=1e-6)

    def test_two_by_two_slope_is_log_odds_ratio(self):
        x = [1] * 40 + [0] * 40
        t = [1] * 30 + [0] * 10 + [1] * 10 + [0] * 30
        model = fit_logistic(make_raw({"X1": x, "T": t, "Y": np.zeros(80)}), "T", ["X1"])
        assert_allclose(model.coefficients, [np.log(1 / 3), np.log(9)], rtol=1e-6)

    def test_constant_response_does_not_converge(self, rng):
        raw = make_raw({"X1": rng.normal(size=100), "T": np.zeros(100, dtype=int), "Y": np.zeros(100)})
        model = fit_logistic(raw, "T", ["X1"])
        assert not model.converged
        design, _ = design_matrix(raw, ["X1"])
        assert np.all(model.predict(design) < 1e-6)

    def test_response_outside_unit_interval(self, rng):
        raw = make_raw({"X1": rng.normal(size=20), "T": [0, 1] * 10, "Y": np.arange(20.0)})
        with pytest.raises(EstimationError):
            fit_logistic(raw, "Y", ["X1"])

    def test_factor_contrasts(self):
        raw = make_raw({"X1": [0, 1, 2, 1], "X2": [0, 1, 1, 0], "T": [0, 1, 0, 1], "Y": np.zeros(4)})
        design, names = design_matrix(raw, ["X1", "X2"])
        assert names == ["(Intercept)", "X1=1", "X1=2", "X2"]
        assert design[:, 1].tolist() == [0.0, 1.0, 0.0, 1.0]
        assert design[:, 2].tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_aliased_column_is_dropped(self, rng):
        x = rng.normal(size=200)
        t = (rng.random(200) < 0.5).astype(int)
        model = fit_logistic(make_raw({"X1": x, "X1b": x.copy(), "T": t, "Y": np.zeros(200)}), "T", ["X1", "X1b"])
        assert model.dropped == ["X1b"]
        assert model.coefficients[2] == 0.0

    def test_too_few_rows(self):
        with pytest.raises(EstimationError):
            fit_design(np.ones((2, 2)), ["a", "b"], np.array([0.0, 1.0]))

    def test_empty_set_propensity_is_treated_share(self):
        raw = make_raw({"X1": np.arange(10.0), "T": [1] * 4 + [0] * 6, "Y": np.zeros(10)})
        assert_allclose(propensity_scores(raw, []), 0.4)


class TestPsm:
    def test_hand_computed_matches(self):
        raw = make_raw({"T": [1, 1, 0, 0], "Y": [5.0, 7.0, 1.0, 2.0]})
        estimate = psm_ace(raw, [], scores=np.array([0.125, 0.5, 0.25, 0.625]))
        assert estimate.beta_hat == 4.5
        assert estimate.n_used == 4

    def test_ties_are_averaged(self):
        raw = make_raw({"T": [1, 0, 0], "Y": [10.0, 1.0, 3.0]})
        scores = np.array([0.5, 0.25, 0.75])
        assert_allclose(psm_ace(raw, [], scores=scores).beta_hat, 8.0)
        lowest = psm_ace(raw, [], PsmConfig(ties="lowest_index"), scores=scores)
        assert_allclose(lowest.beta_hat, 25.0 / 3.0)

    def test_outcome_equal_to_treatment(self, rng):
        t = rng.integers(0, 2, 300)
        raw = make_raw({"X1": rng.normal(size=300), "T": t, "Y": t.astype(float)})
        assert psm_ace(raw, ["X1"]).beta_hat == 1.0

    def test_empty_set_is_difference_in_means(self, confounded):
        estimate = psm_ace(confounded, [])
        t, y = confounded.column("T"), confounded.column("Y")
        assert_allclose(estimate.beta_hat, _difference_in_means(t, y), atol=1e-10)
        assert estimate.se > 0.0 and np.isfinite(estimate.se)
        assert estimate.cardinality == 0

    def test_adjustment_removes_confounding(self, confounded):
        naive = psm_ace(confounded, [])
        adjusted = psm_ace(confounded, ["X1", "X2"])
        assert abs(adjusted.beta_hat - 2.0) < abs(naive.beta_hat - 2.0)
        assert adjusted.ci_low < adjusted.beta_hat < adjusted.ci_high
        assert_allclose(adjusted.ci_high - adjusted.ci_low, 2 * 1.96 * adjusted.se)

    def test_degenerate_arm(self):
        raw = make_raw({"X1": [0.1, 0.2, 0.3], "T": [1, 1, 1], "Y": [1.0, 2.0, 3.0]})
        with pytest.raises(EstimationError, match="degenerate"):
            psm_ace(raw, ["X1"])

    def test_caliper_drops_distant_units(self):
        raw = make_raw({"T": [1, 1, 0, 0], "Y": [5.0, 7.0, 1.0, 2.0]})
        scores = np.array([0.1, 0.5, 0.11, 0.9])
        estimate = psm_ace(raw, [], PsmConfig(caliper=0.1), scores=scores)
        assert estimate.n_used == 2
        assert_allclose(estimate.beta_hat, 4.0)
        assert estimate.warnings

    def test_caliper_without_matches(self):
        raw = make_raw({"T": [1, 1, 0, 0], "Y": [5.0, 7.0, 1.0, 2.0]})
        with pytest.raises(EstimationError, match="caliper"):
            psm_ace(raw, [], PsmConfig(caliper=1e-6), scores=np.array([0.1, 0.5, 0.11, 0.9]))

    def test_wide_caliper_changes_nothing(self, confounded):
        plain = psm_ace(confounded, ["X1", "X2"])
        wide = psm_ace(confounded, ["X1", "X2"], PsmConfig(caliper=100.0))
        assert plain.beta_hat == wide.beta_hat and plain.se == wide.se

    def test_affine_outcome_transform(self, confounded):
        shifted = make_raw({**{c: confounded.column(c) for c in ("X1", "X2", "T")}, "Y": 3.0 * confounded.column("Y") + 1.0})
        assert_allclose(psm_ace(shifted, ["X1", "X2"]).beta_hat, 3.0 * psm_ace(confounded, ["X1", "X2"]).beta_hat)


class TestTmle:
    def test_empty_set_is_difference_in_means(self, confounded):
        estimate = tmle_ace(confounded, [])
        expected = _difference_in_means(confounded.column("T"), confounded.column("Y"))
        assert_allclose(estimate.beta_hat, expected, atol=1e-5)

    def test_binary_outcome_gives_risk_difference(self, rng):
        n = 500
        t = rng.integers(0, 2, n)
        y = (rng.random(n) < np.where(t == 1, 0.7, 0.4)).astype(int)
        estimate = tmle_ace(make_raw({"X1": rng.normal(size=n), "T": t, "Y": y}), [])
        assert_allclose(estimate.beta_hat, _difference_in_means(t, y), atol=1e-6)
        assert -1.0 <= estimate.beta_hat <= 1.0

    def test_fluctuation_solves_score(self, confounded):
        fit = targeted_fit(confounded, ["X1", "X2"])
        assert abs(fit.score) <= 1e-6 * confounded.n
        assert np.all((fit.g >= 0.025) & (fit.g <= 0.975))
        assert_allclose(np.mean(fit.influence), 0.0, atol=1e-6)

    def test_truncation_bounds_propensity(self, confounded):
        fit = targeted_fit(confounded, ["X1", "X2"], TmleConfig(truncation_low=0.2, truncation_high=0.8))
        assert fit.g.min() >= 0.2 and fit.g.max() <= 0.8

    def test_constant_outcome(self, rng):
        raw = make_raw({"X1": rng.normal(size=50), "T": [0, 1] * 25, "Y": np.full(50, 3.0)})
        estimate = tmle_ace(raw, ["X1"])
        assert estimate.beta_hat == 0.0 and estimate.se == 0.0

    def test_adjusted_estimate_is_reasonable(self, confounded):
        estimate = tmle_ace(confounded, ["X1", "X2"])
        assert np.isfinite(estimate.beta_hat) and estimate.se > 0.0
        assert abs(estimate.beta_hat - 2.0) < 1.0
