"""Optimal multiple stopping with random refraction times.

Solves n-exercise stopping problems in which a random waiting time separates
consecutive exercises, by cascading them into single stopping problems with
composite rewards.  Ships an exact finite-chain DP solver, closed forms for
the multiple house-selling problem and the perpetual put with a refraction
level, Monte Carlo policy evaluation, and a brute-force oracle certifying
the cascade on small instances.
"""

from .closedform import (
    HouseSolution,
    PutSolution,
    UniformOfferLaw,
    house_threshold,
    solve_house,
    solve_put,
)
from .core import (
    Deterministic,
    DiscreteDistribution,
    FiniteMarkovModel,
    GbmModel,
    IndependentDelay,
    PutReward,
    RefractionSet,
    StoppingProblem,
    StoppingSetRule,
    ThresholdPolicy,
    ThresholdRule,
    ValueCascade,
    problem_from_json,
    problem_to_json,
    sample_delay,
    validate_problem,
)
from .dp import (
    SolveOptions,
    SolverError,
    g_operator_independent_delay,
    g_operator_refraction_set,
    single_stop_value,
    solve_cascade,
)
from .mc import (
    EvalReport,
    brute_force_value,
    evaluate_policy_chain,
    evaluate_policy_gbm,
)
from .oracle import run_oracle_check

__all__ = [
    "Deterministic",
    "DiscreteDistribution",
    "EvalReport",
    "FiniteMarkovModel",
    "GbmModel",
    "HouseSolution",
    "IndependentDelay",
    "PutReward",
    "PutSolution",
    "RefractionSet",
    "SolveOptions",
    "SolverError",
    "StoppingProblem",
    "StoppingSetRule",
    "ThresholdPolicy",
    "ThresholdRule",
    "UniformOfferLaw",
    "ValueCascade",
    "brute_force_value",
    "evaluate_policy_chain",
    "evaluate_policy_gbm",
    "g_operator_independent_delay",
    "g_operator_refraction_set",
    "house_threshold",
    "problem_from_json",
    "problem_to_json",
    "run_oracle_check",
    "sample_delay",
    "single_stop_value",
    "solve_cascade",
    "solve_house",
    "solve_put",
    "validate_problem",
]
