"""Unit tests for Monte Carlo policy evaluation and the brute-force oracle."""

import math

import numpy as np
import pytest

from multistop import mc
from multistop.core import (
    Deterministic,
    DiscreteDistribution,
    FiniteMarkovModel,
    GbmModel,
    IndependentDelay,
    RefractionSet,
    StoppingProblem,
    StoppingSetRule,
    ThresholdPolicy,
    ThresholdRule,
)
from multistop.dp import SolverError, solve_cascade
from multistop.mc import brute_force_value, evaluate_policy_chain, evaluate_policy_gbm


def one_state_problem(n=2, waiting=None, horizon=None):
    model = FiniteMarkovModel((1.0,), np.array([[1.0]]), 0.9)
    return StoppingProblem(model, (1.0,), n, waiting or Deterministic(1.0), horizon)


def stop_always_policy(n, waiting):
    return ThresholdPolicy(tuple(StoppingSetRule(frozenset({0})) for _ in range(n)),
                           waiting)


# ---------------------------------------------------------------------------
# Chain evaluation
# ---------------------------------------------------------------------------

class TestEvaluatePolicyChain:
    def test_deterministic_delay_pays_discounted_sum(self):
        problem = one_state_problem(n=2, waiting=Deterministic(1.0))
        policy = stop_always_policy(2, Deterministic(1.0))
        report = evaluate_policy_chain(problem, policy, 10, seed=0)
        assert report.payoffs == pytest.approx(np.full(10, 1.0 + 0.9))
        assert report.std_error < 1e-15

    def test_zero_delay_allows_same_step_exercises(self):
        problem = one_state_problem(n=3, waiting=Deterministic(0.0))
        policy = stop_always_policy(3, Deterministic(0.0))
        report = evaluate_policy_chain(problem, policy, 5, seed=0)
        assert report.estimate == pytest.approx(3.0)

    def test_refraction_set_delays_by_reentry(self):
        waiting = RefractionSet(states=frozenset({0}))
        problem = one_state_problem(n=2, waiting=waiting)
        policy = stop_always_policy(2, waiting)
        report = evaluate_policy_chain(problem, policy, 5, seed=0)
        # second right re-opens at the next entry into B, one step later
        assert report.estimate == pytest.approx(1.0 + 0.9)

    def test_independent_delay_law_pays_expected_discount(self):
        law = DiscreteDistribution.from_pairs([(1.0, 0.5), (2.0, 0.5)])
        waiting = IndependentDelay(law)
        problem = one_state_problem(n=2, waiting=waiting)
        policy = stop_always_policy(2, waiting)
        report = evaluate_policy_chain(problem, policy, 4000, seed=1)
        expected = 1.0 + 0.5 * 0.9 + 0.5 * 0.81
        assert report.estimate == pytest.approx(expected, abs=4 * report.std_error + 1e-9)

    def test_same_seed_is_bit_identical(self):
        problem = one_state_problem()
        policy = stop_always_policy(2, Deterministic(1.0))
        a = evaluate_policy_chain(problem, policy, 64, seed=5)
        b = evaluate_policy_chain(problem, policy, 64, seed=5)
        assert np.array_equal(a.payoffs, b.payoffs)

    def test_path_payoffs_do_not_depend_on_batch_size(self):
        # Path i is driven by the substream (seed, i), so a longer run
        # extends the payoff vector without changing its prefix.
        law = DiscreteDistribution.from_pairs([(0.2, 0.5), (0.8, 0.5)])
        model = FiniteMarkovModel.iid_offers(law, 0.9)
        problem = StoppingProblem(model, (0.2, 0.8), 2,
                                  IndependentDelay(DiscreteDistribution.point_mass(1.0)))
        policy = ThresholdPolicy(
            (ThresholdRule("above", 0.5), ThresholdRule("above", 0.5)),
            problem.waiting,
        )
        small = evaluate_policy_chain(problem, policy, 10, seed=9)
        large = evaluate_policy_chain(problem, policy, 40, seed=9)
        assert np.array_equal(large.payoffs[:10], small.payoffs)

    def test_estimate_matches_solver_value(self):
        rng = np.random.default_rng(2)
        mat = rng.random((4, 4)) + 0.1
        mat /= mat.sum(axis=1, keepdims=True)
        model = FiniteMarkovModel((0.1, 0.4, 0.6, 0.9), mat, 0.85)
        problem = StoppingProblem(model, (0.1, 0.4, 0.6, 0.9), 2,
                                  Deterministic(2.0))
        cascade, policy = solve_cascade(problem)
        report = evaluate_policy_chain(problem, policy, 20000, seed=3, initial_state=0)
        assert report.estimate == pytest.approx(
            cascade.values[1][0], abs=4 * report.std_error + 1e-6
        )

    def test_report_serialization_excludes_payoffs(self):
        problem = one_state_problem()
        policy = stop_always_policy(2, Deterministic(1.0))
        report = evaluate_policy_chain(problem, policy, 3, seed=0)
        d = report.to_dict()
        assert "payoffs" not in d
        assert d["n_paths"] == 3
        assert d["seed"] == 0

    def test_policy_size_mismatch_rejected(self):
        problem = one_state_problem(n=2)
        policy = stop_always_policy(1, Deterministic(1.0))
        with pytest.raises(ValueError, match="rules"):
            evaluate_policy_chain(problem, policy, 1, seed=0)

    def test_needs_at_least_one_path(self):
        problem = one_state_problem()
        policy = stop_always_policy(2, Deterministic(1.0))
        with pytest.raises(ValueError):
            evaluate_policy_chain(problem, policy, 0, seed=0)


# ---------------------------------------------------------------------------
# Normal sampler used by the price-path kernel
# ---------------------------------------------------------------------------

class TestNormalSampler:
    def draws(self, n=200_000, seed=987654321):
        state = seed
        out = np.empty(n)
        for j in range(n):
            state, z = mc._znorm_impl(state, mc._ZIG_KN, mc._ZIG_WN, mc._ZIG_FN)
            out[j] = z
        return out

    def test_moments(self):
        z = self.draws()
        n = z.size
        assert abs(z.mean()) < 4.0 / math.sqrt(n)
        assert abs(z.var() - 1.0) < 4.0 * math.sqrt(2.0 / n)
        assert abs((z ** 3).mean()) < 4.0 * math.sqrt(15.0 / n)
        assert abs((z ** 4).mean() - 3.0) < 4.0 * math.sqrt(96.0 / n)

    def test_distribution_against_normal_cdf(self):
        z = np.sort(self.draws())
        n = z.size
        cdf = 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))
        empirical = (np.arange(n) + 0.5) / n
        ks = np.max(np.abs(cdf - empirical))
        # K-S 99.9% critical value ~ 1.95 / sqrt(n)
        assert ks < 1.95 / math.sqrt(n)

    def test_tail_layer_is_exercised(self):
        z = self.draws()
        assert np.max(np.abs(z)) > 3.5  # beyond the ziggurat rectangle region

    def test_uniform_draws_stay_in_unit_interval(self):
        state = 1
        for _ in range(1000):
            state, u = mc._uniform_impl(state)
            assert 0.0 < u <= 1.0


# ---------------------------------------------------------------------------
# GBM evaluation
# ---------------------------------------------------------------------------

class TestEvaluatePolicyGbm:
    def policy(self, levels=(68.5, 52.6), z0=100.0):
        return ThresholdPolicy(
            tuple(ThresholdRule("below", lv) for lv in levels),
            RefractionSet(level=z0),
        )

    def test_deterministic_across_runs(self):
        model = GbmModel(100.0, 0.3, 0.05)
        a = evaluate_policy_gbm(model, 100.0, self.policy(), 50, 0.01, 200.0, seed=4)
        b = evaluate_policy_gbm(model, 100.0, self.policy(), 50, 0.01, 200.0, seed=4)
        assert np.array_equal(a.payoffs, b.payoffs)
        c = evaluate_policy_gbm(model, 100.0, self.policy(), 50, 0.01, 200.0, seed=5)
        assert not np.array_equal(a.payoffs, c.payoffs)

    def test_single_right_matches_closed_form(self):
        from multistop.closedform import solve_put

        sol = solve_put(100.0, 0.3, 0.05, 100.0, 1)
        model = GbmModel(100.0, 0.3, 0.05)
        policy = ThresholdPolicy(
            (ThresholdRule("below", sol.x_star[0]),), RefractionSet(level=100.0)
        )
        report = evaluate_policy_gbm(model, 100.0, policy, 4000, 1e-3, 400.0, seed=11)
        target = sol.value(100.0, 1)
        assert report.estimate == pytest.approx(
            target, abs=3 * report.std_error + 0.01 * target
        )

    def test_truncation_bound_recorded_and_warned(self):
        model = GbmModel(100.0, 0.3, 0.05)
        with pytest.warns(UserWarning, match="truncates"):
            report = evaluate_policy_gbm(model, 100.0, self.policy(), 10, 0.01, 10.0,
                                         seed=0)
        assert report.truncation_bound == pytest.approx(2 * math.exp(-0.5) * 100.0)
        assert report.truncation_horizon == 10.0

    def test_requires_below_rules_and_level_set(self):
        model = GbmModel(100.0, 0.3, 0.05)
        bad_rule = ThresholdPolicy((ThresholdRule("above", 60.0),),
                                   RefractionSet(level=100.0))
        with pytest.raises(ValueError, match="below"):
            evaluate_policy_gbm(model, 100.0, bad_rule, 1, 0.01, 1.0, seed=0)
        bad_wait = ThresholdPolicy((ThresholdRule("below", 60.0),),
                                   Deterministic(1.0))
        with pytest.raises(ValueError, match="level"):
            evaluate_policy_gbm(model, 100.0, bad_wait, 1, 0.01, 1.0, seed=0)

    def test_rejects_slow_discounting(self):
        model = GbmModel(100.0, 0.5, 0.05)
        with pytest.raises(ValueError, match="sigma"):
            evaluate_policy_gbm(model, 100.0, self.policy(), 1, 0.01, 1.0, seed=0)

    def test_input_validation(self):
        model = GbmModel(100.0, 0.3, 0.05)
        with pytest.raises(ValueError):
            evaluate_policy_gbm(model, 100.0, self.policy(), 0, 0.01, 1.0, seed=0)
        with pytest.raises(ValueError):
            evaluate_policy_gbm(model, 100.0, self.policy(), 1, -0.01, 1.0, seed=0)


# ---------------------------------------------------------------------------
# Brute force
# ---------------------------------------------------------------------------

class TestBruteForce:
    def test_requires_finite_horizon(self):
        with pytest.raises(SolverError, match="horizon"):
            brute_force_value(one_state_problem(horizon=None))

    def test_one_state_deterministic_delay(self):
        # Exercise at t=0 and t=1: value 1 + alpha (horizon permitting).
        v = brute_force_value(one_state_problem(n=2, horizon=3))
        assert v == pytest.approx([1.0 + 0.9])

    def test_horizon_zero_allows_single_exercise(self):
        v = brute_force_value(one_state_problem(n=2, horizon=0))
        assert v == pytest.approx([1.0])

    def test_refraction_set_reentry(self):
        waiting = RefractionSet(states=frozenset({0}))
        v = brute_force_value(one_state_problem(n=2, waiting=waiting, horizon=5))
        assert v == pytest.approx([1.0 + 0.9])

    def test_unexercisable_refraction_state_costs_value(self):
        # B = {1} but state 1 pays nothing, so the second right is only
        # usable after a round trip 0 -> 1 -> 0.
        model = FiniteMarkovModel((0.0, 1.0),
                                  np.array([[0.5, 0.5], [0.5, 0.5]]), 0.9)
        problem = StoppingProblem(model, (1.0, 0.0), 2,
                                  RefractionSet(states=frozenset({1})), horizon=50)
        v = brute_force_value(problem)
        single = brute_force_value(StoppingProblem(model, (1.0, 0.0), 1,
                                                   Deterministic(1.0), horizon=50))
        assert np.all(v <= 2 * np.max(single) + 1e-12)
        assert np.all(v >= single - 1e-12)

    def test_matches_cascade_on_small_instance(self):
        law = DiscreteDistribution.from_pairs([(1.0, 0.7), (2.0, 0.3)])
        model = FiniteMarkovModel((0.0, 0.5, 1.0),
                                  np.array([[0.2, 0.5, 0.3],
                                            [0.3, 0.4, 0.3],
                                            [0.25, 0.25, 0.5]]), 0.8)
        problem = StoppingProblem(model, (0.0, 0.5, 1.0), 2,
                                  IndependentDelay(law), horizon=4)
        cascade, _ = solve_cascade(problem)
        assert brute_force_value(problem) == pytest.approx(
            cascade.values[1], abs=1e-12
        )

    def test_size_cap_enforced(self):
        n = 400
        mat = np.full((n, n), 1.0 / n)
        model = FiniteMarkovModel(tuple(np.linspace(0, 1, n)), mat, 0.9)
        problem = StoppingProblem(model, tuple(np.linspace(0, 1, n)), 4,
                                  IndependentDelay(DiscreteDistribution.point_mass(50.0)),
                                  horizon=500)
        with pytest.raises(SolverError, match="cap"):
            brute_force_value(problem)

    def test_delay_must_be_integer(self):
        waiting = IndependentDelay(DiscreteDistribution.point_mass(1.5))
        with pytest.raises(SolverError, match="integer"):
            brute_force_value(one_state_problem(waiting=waiting, horizon=2))
