"""Property-based tests: solver invariants that must hold on random inputs."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multistop.closedform import (
    UniformOfferLaw,
    house_threshold,
    solve_house,
    solve_put,
    threshold_residual,
)
from multistop.core import (
    Deterministic,
    DiscreteDistribution,
    FiniteMarkovModel,
    IndependentDelay,
    RefractionSet,
    StoppingProblem,
    problem_from_json,
    problem_to_json,
)
from multistop.dp import solve_cascade
from multistop.mc import brute_force_value

SETTINGS = settings(max_examples=40, deadline=None)


def random_chain_problem(seed, n_states, n_exercises, waiting_kind, horizon):
    """Deterministically build a problem from a hypothesis-drawn seed."""
    rng = np.random.default_rng(seed)
    mat = rng.random((n_states, n_states)) + 0.05
    mat /= mat.sum(axis=1, keepdims=True)
    model = FiniteMarkovModel(
        states=tuple(np.sort(rng.random(n_states))),
        transition=mat,
        step_discount=float(0.4 + 0.55 * rng.random()),
    )
    if waiting_kind == 0:
        probs = rng.random(2) + 0.1
        probs /= probs.sum()
        waiting = IndependentDelay(
            DiscreteDistribution.from_pairs([(1.0, probs[0]), (2.0, probs[1])])
        )
    elif waiting_kind == 1:
        size = int(rng.integers(1, n_states + 1))
        members = rng.choice(n_states, size=size, replace=False)
        waiting = RefractionSet(states=frozenset(int(i) for i in members))
    else:
        waiting = Deterministic(float(rng.integers(0, 3)))
    return StoppingProblem(
        dynamics=model,
        reward=tuple(rng.random(n_states)),
        n_exercises=n_exercises,
        waiting=waiting,
        horizon=horizon,
    )


chain_cases = st.tuples(
    st.integers(0, 2 ** 31 - 1),   # rng seed
    st.integers(2, 6),             # states
    st.integers(1, 3),             # exercise rights
    st.integers(0, 2),             # waiting model kind
)


class TestCascadeInvariants:
    @SETTINGS
    @given(chain_cases)
    def test_values_monotone_in_rights_and_dominate_rewards(self, case):
        problem = random_chain_problem(*case, horizon=None)
        cascade, _ = solve_cascade(problem)
        h = problem.reward_values()
        assert np.all(cascade.values[0] >= h - 1e-9)
        for k in range(1, problem.n_exercises):
            assert np.all(cascade.values[k] >= cascade.values[k - 1] - 1e-9)
            assert np.all(cascade.values[k] >= cascade.composite_rewards[k - 1] - 1e-9)

    @SETTINGS
    @given(chain_cases)
    def test_exact_on_finite_horizons(self, case):
        problem = random_chain_problem(*case, horizon=4)
        cascade, _ = solve_cascade(problem)
        exact = brute_force_value(problem)
        assert np.max(np.abs(exact - cascade.values[-1])) < 1e-10

    @SETTINGS
    @given(chain_cases)
    def test_fixed_point_residual(self, case):
        problem = random_chain_problem(*case, horizon=None)
        cascade, _ = solve_cascade(problem)
        model = problem.dynamics
        h = problem.reward_values()
        rewards = [h] + list(cascade.composite_rewards)
        for v, r in zip(cascade.values, rewards):
            bellman = np.maximum(r, model.step_discount * (model.transition @ v))
            assert np.max(np.abs(v - bellman)) < 1e-9

    @SETTINGS
    @given(chain_cases)
    def test_policy_invariant_under_reward_scaling(self, case):
        problem = random_chain_problem(*case, horizon=None)
        scaled = StoppingProblem(
            problem.dynamics,
            tuple(6.25 * r for r in problem.reward),
            problem.n_exercises,
            problem.waiting,
        )
        _, policy = solve_cascade(problem)
        _, policy_scaled = solve_cascade(scaled)
        assert [r.states for r in policy.rules] == [r.states for r in policy_scaled.rules]


class TestSerializationProperties:
    @SETTINGS
    @given(chain_cases)
    def test_json_round_trip_is_stable(self, case):
        problem = random_chain_problem(*case, horizon=None)
        text = problem_to_json(problem)
        assert problem_to_json(problem_from_json(text)) == text


class TestHouseProperties:
    @SETTINGS
    @given(st.floats(0.05, 0.99), st.floats(0.0, 3.0))
    def test_threshold_root_residual(self, alpha, d):
        law = UniformOfferLaw(0.0, 1.0)
        t = house_threshold(law, alpha, d)
        # the equation's slope at the root is bounded by (1 + target) / t,
        # so the residual scales accordingly with the bisection tolerance
        target = (1.0 - alpha) / alpha
        assert threshold_residual(law, alpha, d, t) < 5e-10 * (1.0 + target) / t

    @SETTINGS
    @given(st.floats(0.5, 0.99), st.floats(0.05, 0.95), st.integers(1, 5))
    def test_solution_structure(self, alpha, p, n):
        sol = solve_house(UniformOfferLaw(0.0, 1.0), alpha,
                          DiscreteDistribution.truncated_geometric(p), n)
        thresholds = [lvl.threshold for lvl in sol.levels]
        shifts = [lvl.shift for lvl in sol.levels]
        assert all(b >= a - 1e-12 for a, b in zip(thresholds, thresholds[1:]))
        assert all(b >= a - 1e-12 for a, b in zip(shifts, shifts[1:]))
        assert shifts[0] == 0.0
        assert 0.0 < sol.delay_discount < 1.0


class TestPutProperties:
    put_params = st.tuples(
        st.floats(1.0, 200.0),     # strike
        st.floats(0.05, 0.8),      # sigma
        st.floats(1.0, 5.0),       # beta as multiple of sigma^2/2
        st.floats(0.0, 1.5),       # z0 as relative excess over the strike
        st.integers(1, 6),         # rights
    )

    @SETTINGS
    @given(put_params)
    def test_slopes_below_one_and_thresholds_increasing(self, params):
        strike, sigma, beta_mult, z_excess, n = params
        beta = beta_mult * sigma ** 2 / 2.0
        sol = solve_put(strike, sigma, beta, strike * (1.0 + z_excess), n)
        assert all(0.0 < c < 1.0 for c in sol.c)
        for a, b in zip(sol.x_star, sol.x_star[1:]):
            assert b > a
        assert sol.x_star[-1] < strike

    @SETTINGS
    @given(put_params)
    def test_value_dominates_payoff_and_rights_help(self, params):
        strike, sigma, beta_mult, z_excess, n = params
        beta = beta_mult * sigma ** 2 / 2.0
        sol = solve_put(strike, sigma, beta, strike * (1.0 + z_excess), n)
        for x in np.linspace(strike / 20.0, 2.5 * strike, 12):
            values = [sol.value(float(x), k) for k in range(1, n + 1)]
            assert values[0] >= max(strike - x, 0.0) - 1e-9
            for a, b in zip(values, values[1:]):
                assert b >= a - 1e-9


class TestLawProperties:
    @SETTINGS
    @given(st.floats(0.01, 1.0))
    def test_truncated_geometric_normalized(self, p):
        law = DiscreteDistribution.truncated_geometric(p)
        assert abs(law.probabilities.sum() - 1.0) < 1e-12
        assert law.min_value() >= 1.0
        assert law.has_integer_support()

    @SETTINGS
    @given(st.floats(-5.0, 5.0), st.floats(0.1, 10.0), st.integers(2, 500))
    def test_uniform_grid_moments(self, a, width, n):
        law = DiscreteDistribution.uniform_grid(a, a + width, n)
        assert law.mean() == pytest.approx(a + width / 2.0, abs=1e-9)
        assert abs(law.probabilities.sum() - 1.0) < 1e-12
        assert law.min_value() > a and law.max_value() < a + width
