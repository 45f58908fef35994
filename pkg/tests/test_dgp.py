# tests/test_dgp.py

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from confsel.schemas.config import SimConfig
from confsel.services.dgp import (
    check_success,
    ci_sets,
    simulate,
    splitmix64,
    stream_seed,
    true_ace,
    true_sets,
)


@pytest.fixture(scope="module")
def large_setting1():
    return simulate(SimConfig(setting=1, n=200_000, outcome="linear", seed=5, p_total=10)).frame


@pytest.fixture(scope="module")
def large_setting2():
    return simulate(SimConfig(setting=2, n=200_000, outcome="linear", seed=6, p_total=10)).frame


class TestSeeding:
    def test_splitmix_is_a_bijection_on_small_inputs(self):
        values = {splitmix64(k) for k in range(1000)}
        assert len(values) == 1000

    def test_stream_seeds_differ_per_index(self):
        assert stream_seed(1, 0) != stream_seed(1, 1)
        assert stream_seed(1, 7) == stream_seed(1, 7)
        assert 0 <= stream_seed(2**64 - 1, 3) < 2**64


class TestSimulate:
    def test_identical_config_gives_identical_data(self):
        cfg = SimConfig(setting=2, n=300, outcome="nonlinear", seed=99, p_total=30)
        pd.testing.assert_frame_equal(simulate(cfg).frame, simulate(cfg).frame)

    def test_different_seeds_differ(self):
        a = simulate(SimConfig(n=100, seed=1, p_total=10)).frame
        b = simulate(SimConfig(n=100, seed=2, p_total=10)).frame
        assert not a.equals(b)

    def test_columns_and_kinds(self):
        raw = simulate(SimConfig(setting=2, n=50, seed=3, p_total=24))
        assert raw.covariates == [f"X{k}" for k in range(1, 25)]
        assert {"audit_Y0", "audit_Y1", "audit_U1", "audit_U2", "audit_U3"} <= set(raw.names)
        assert raw.kinds["X1"] == "factor" and raw.kinds["X2"] == "continuous"
        assert raw.kinds["X12"] == "factor" and raw.kinds["X11"] == "continuous"
        assert raw.kinds["T"] == "factor"

    def test_audit_columns_can_be_omitted(self):
        raw = simulate(SimConfig(setting=2, n=50, seed=3, p_total=10, emit_potential_outcomes=False))
        assert not any(name.startswith("audit_") for name in raw.names)

    def test_observed_outcome_is_the_treated_potential_outcome(self):
        frame = simulate(SimConfig(setting=1, n=500, outcome="binary", seed=4, p_total=10)).frame
        expected = np.where(frame["T"] == 1, frame["audit_Y1"], frame["audit_Y0"])
        assert_allclose(frame["Y"], expected)

    def test_treatment_is_balanced(self, large_setting1):
        assert 0.49 <= large_setting1["T"].mean() <= 0.51

    def test_core_correlations(self, large_setting1):
        assert_allclose(np.corrcoef(large_setting1["X1"], large_setting1["X2"])[0, 1], 0.4, atol=0.02)
        assert_allclose(np.corrcoef(large_setting1["X7"], large_setting1["X8"])[0, 1], 0.7, atol=0.02)
        assert_allclose(np.corrcoef(large_setting1["X5"], large_setting1["X6"])[0, 1], 0.4, atol=0.02)

    def test_nuisance_block_is_autocorrelated(self):
        frame = simulate(SimConfig(n=100_000, seed=8, p_total=20)).frame
        assert_allclose(np.corrcoef(frame["X11"], frame["X13"])[0, 1], 0.09, atol=0.02)

    def test_nuisance_is_independent_of_the_core(self):
        n = 100_000
        frame = simulate(SimConfig(n=n, seed=8, p_total=20)).frame
        nuisance = [f"X{k}" for k in range(11, 21)]
        core = [f"X{k}" for k in range(1, 11)] + ["T", "audit_Y0", "audit_Y1"]
        corr = frame[nuisance + core].corr().loc[nuisance, core]
        assert (corr.abs().to_numpy() <= 4 / np.sqrt(n)).all()

    def test_linear_effect_is_two(self, large_setting1):
        diff = large_setting1["audit_Y1"] - large_setting1["audit_Y0"]
        assert abs(diff.mean() - 2.0) < 3 * diff.std() / np.sqrt(len(diff))

    def test_setting2_proxies(self, large_setting2):
        frame = large_setting2
        assert_allclose(np.corrcoef(frame["X4"], frame["audit_U3"])[0, 1], 0.8 / np.sqrt(0.64 + 0.5), atol=0.01)
        assert_allclose(frame["X9"].mean(), 1.0, atol=0.05)
        assert 0.4 <= frame["T"].mean() <= 0.6

    def test_setting2_latent_signatures(self, large_setting2):
        frame = large_setting2
        bound = 4 / np.sqrt(len(frame))
        causes = frame[["X1", "X2", "X3", "X4", "X7"]].to_numpy(dtype=float)
        design = np.column_stack([np.ones(len(frame)), causes])
        t = frame["T"].to_numpy(dtype=float)
        coef, *_ = np.linalg.lstsq(design, t, rcond=None)
        residual = t - design @ coef
        # X9 and T share U1; X4 and Y(0) share U3
        assert abs(np.corrcoef(frame["X9"], residual)[0, 1]) > bound
        assert abs(np.corrcoef(frame["X4"], frame["audit_Y0"])[0, 1]) > bound


class TestTrueAce:
    def test_linear_is_exact(self):
        assert true_ace(1, "linear") == 2.0
        assert true_ace(2, "linear") == 2.0

    def test_small_budget_is_rejected(self):
        with pytest.raises(ValueError):
            true_ace(1, "binary", 1000)

    @pytest.mark.parametrize("outcome", ["binary", "nonlinear"])
    def test_matches_potential_outcome_average(self, outcome):
        truth = true_ace(1, outcome, 400_000)
        frame = simulate(SimConfig(setting=1, n=400_000, outcome=outcome, seed=31, p_total=10)).frame
        diff = frame["audit_Y1"] - frame["audit_Y0"]
        assert abs(diff.mean() - truth) < 4 * diff.std() / np.sqrt(len(diff))

    def test_is_cached(self):
        assert true_ace(2, "binary", 100_000) == true_ace(2, "binary", 100_000)

    def test_binary_effect_is_a_risk_difference(self):
        assert -1.0 < true_ace(1, "binary", 100_000) < 1.0


class TestSuccessChecks:
    def test_setting1_proxy_pair(self):
        assert check_success(1, {"X1", "X2", "X8"}, true_sets(1)["zy"]) == (True, True, True)

    def test_setting1_missing_confounder(self):
        unconf, superset, equal = check_success(1, {"X1", "X7"}, true_sets(1)["qt"])
        assert not unconf and not superset and not equal

    def test_setting2_needs_x4(self):
        assert check_success(2, {"X1", "X2", "X4", "X7"}, true_sets(2)["qt"])[0]
        assert not check_success(2, {"X1", "X2", "X7"}, true_sets(2)["qt"])[0]

    def test_setting2_collider_breaks_unconfoundedness(self):
        everything = {f"X{k}" for k in range(1, 11)}
        unconf, superset, _ = check_success(2, everything, true_sets(2)["xty"])
        assert not unconf and superset

    def test_independence_sets_extend_causal_sets(self):
        for name, value in true_sets(2).items():
            assert value <= ci_sets(2)[name]
        assert ci_sets(1) == true_sets(1)
