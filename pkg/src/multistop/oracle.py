"""Randomized certification of the cascade reduction against brute force.

Generates tiny finite-horizon instances covering both waiting models and
checks that the cascade solver and the exhaustive oracle agree on the value
at every initial state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Deterministic,
    DiscreteDistribution,
    FiniteMarkovModel,
    IndependentDelay,
    RefractionSet,
    StoppingProblem,
)
from .dp import solve_cascade
from .mc import brute_force_value

DEFAULT_TOL = 1e-10


def random_instance(rng: np.random.Generator) -> StoppingProblem:
    """A random chain instance with <= 5 states, horizon <= 5, n <= 2."""
    n_states = int(rng.integers(2, 6))
    mat = rng.random((n_states, n_states)) + 0.05
    mat /= mat.sum(axis=1, keepdims=True)
    model = FiniteMarkovModel(
        states=tuple(np.sort(rng.random(n_states))),
        transition=mat,
        step_discount=float(0.5 + 0.49 * rng.random()),
    )
    reward = tuple(rng.random(n_states))
    horizon = int(rng.integers(1, 6))
    n_ex = int(rng.integers(1, 3))
    kind = int(rng.integers(0, 3))
    if kind == 0:
        delays = [1, 2, 3][: int(rng.integers(1, 4))]
        probs = rng.random(len(delays)) + 0.1
        probs /= probs.sum()
        waiting = IndependentDelay(
            DiscreteDistribution.from_pairs(list(zip(map(float, delays), probs)))
        )
    elif kind == 1:
        size = int(rng.integers(1, n_states + 1))
        members = rng.choice(n_states, size=size, replace=False)
        waiting = RefractionSet(states=frozenset(int(i) for i in members))
    else:
        waiting = Deterministic(float(rng.integers(0, 3)))
    return StoppingProblem(
        dynamics=model,
        reward=reward,
        n_exercises=n_ex,
        waiting=waiting,
        horizon=horizon,
    )


@dataclass(frozen=True)
class OracleResult:
    n_instances: int
    worst_diff: float
    mismatches: tuple[int, ...]  # indices of instances exceeding the tolerance

    @property
    def passed(self) -> bool:
        return not self.mismatches


def run_oracle_check(
    n_instances: int = 200,
    seed: int = 7,
    tol: float = DEFAULT_TOL,
) -> OracleResult:
    """Compare brute force and cascade on random instances at every state."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    mismatches = []
    for idx in range(n_instances):
        problem = random_instance(rng)
        exact = brute_force_value(problem)
        cascade, _ = solve_cascade(problem)
        diff = float(np.max(np.abs(exact - cascade.values[problem.n_exercises - 1])))
        worst = max(worst, diff)
        if diff > tol:
            mismatches.append(idx)
    return OracleResult(n_instances, worst, tuple(mismatches))
