import math

import numpy as np
import pytest

from stochcert import expr, mc, model
from stochcert.mc import ACTIVE, EXITED, REACHED, _run_trials, estimate_liveness, estimate_reach_avoid

from conftest import make_contraction, make_walk, ruin_probability, walk_regions


@pytest.fixture(scope="module")
def walk():
    return make_walk(0.5), walk_regions()


class TestDegenerateStarts:
    def test_unsafe_start_liveness_zero(self, walk):
        system, reg = walk
        est = estimate_liveness(system, reg, [-1.0], 10, 100, 0.05, 0)
        assert est.p_hat == 0.0

    def test_unsafe_start_reach_zero(self, walk):
        system, reg = walk
        est = estimate_reach_avoid(system, reg, [12.0], 10, 100, 0.05, 0)
        assert est.p_hat == 0.0

    def test_target_start_reach_one(self, walk):
        system, reg = walk
        est = estimate_reach_avoid(system, reg, [10.5], 10, 100, 0.05, 0)
        assert est.p_hat == 1.0


class TestInvariantContraction:
    def test_liveness_exactly_one(self):
        system, reg, _ = make_contraction()
        est = estimate_liveness(system, reg, [0.8], 50, 2000, 0.05, 1)
        assert est.p_hat == 1.0

    def test_reach_one(self):
        system, reg, _ = make_contraction()
        est = estimate_reach_avoid(system, reg, [0.8], 50, 2000, 0.05, 1)
        assert est.p_hat == 1.0


class TestGambler:
    def test_reach_covers_ruin_value(self, walk):
        system, reg = walk
        est = estimate_reach_avoid(system, reg, [3.0], 10_000, 100_000, 0.05, 42)
        # truncation slack at this horizon is astronomically small
        assert abs(est.p_hat - ruin_probability(3, 10, 0.5)) <= est.half_width + 1e-6

    def test_liveness_near_zero(self, walk):
        system, reg = walk
        est = estimate_liveness(system, reg, [3.0], 10_000, 100_000, 0.05, 42)
        assert est.p_hat < 0.01

    def test_deterministic_per_seed(self, walk):
        system, reg = walk
        a = estimate_reach_avoid(system, reg, [3.0], 500, 5000, 0.05, 7)
        b = estimate_reach_avoid(system, reg, [3.0], 500, 5000, 0.05, 7)
        assert a.p_hat == b.p_hat and a.successes == b.successes

    def test_monotone_in_horizon(self, walk):
        system, reg = walk
        horizons = [5, 10, 25, 50, 100, 400]
        live = [estimate_liveness(system, reg, [3.0], K, 4000, 0.05, 9).p_hat
                for K in horizons]
        reach = [estimate_reach_avoid(system, reg, [3.0], K, 4000, 0.05, 9).p_hat
                 for K in horizons]
        assert all(a >= b for a, b in zip(live, live[1:]))
        assert all(a <= b for a, b in zip(reach, reach[1:]))


class TestTrialConsistency:
    def test_reach_and_liveness_agree_per_trial(self, walk):
        # same counter-based draws drive both runs, so trajectories are
        # identical until absorption: a reached trial cannot have exited
        # earlier, and an exit before any target hit shows up in both
        system, reg = walk
        n = 2000
        reach_status, reach_steps = _run_trials(system, reg, [3.0], 500, n, 11,
                                                absorb_target=True)
        live_status, live_steps = _run_trials(system, reg, [3.0], 500, n, 11,
                                              absorb_target=False)
        assert not (reach_status == ACTIVE).any()
        for i in range(n):
            if reach_status[i] == REACHED:
                # liveness run continues through the target: if it exits, only later
                assert live_status[i] != EXITED or live_steps[i] > reach_steps[i]
            if reach_status[i] == EXITED:
                assert live_status[i] == EXITED
                assert live_steps[i] == reach_steps[i]

    def test_no_trial_both_reached_and_stayed(self, walk):
        system, reg = walk
        status, _ = _run_trials(system, reg, [3.0], 2000, 2000, 13, absorb_target=True)
        assert np.count_nonzero(status == REACHED) + np.count_nonzero(status == EXITED) \
            == 2000


class TestHalfWidth:
    def test_formula(self):
        est = mc.hoeffding_half_width(1000, 0.05)
        assert est == pytest.approx(math.sqrt(math.log(2 / 0.05) / 2000), abs=1e-15)

    def test_stored_half_width_matches(self, walk):
        system, reg = walk
        est = estimate_liveness(system, reg, [3.0], 10, 321, 0.07, 0)
        assert est.half_width == pytest.approx(
            math.sqrt(math.log(2 / 0.07) / (2 * 321)), abs=1e-15)

    def test_parameter_validation(self, walk):
        system, reg = walk
        with pytest.raises(ValueError):
            estimate_liveness(system, reg, [3.0], 0, 10, 0.05, 0)
        with pytest.raises(ValueError):
            estimate_reach_avoid(system, reg, [3.0], 10, 0, 0.05, 0)
        with pytest.raises(ValueError):
            mc.hoeffding_half_width(10, 1.5)


class TestErrorPath:
    def test_evaluation_error_flagged(self):
        dist = model.DisturbanceDist(atoms=[[0.0]], probs=[1.0])
        system = model.SystemModel(1, 1, (expr.parse_expr("1/(x1 - 1)", 1, 1),), dist)
        reg = walk_regions()
        est = estimate_liveness(system, reg, [2.0], 10, 50, 0.05, 0)
        assert est.error is not None
