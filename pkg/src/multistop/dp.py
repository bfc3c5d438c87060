"""Exact dynamic programming for finite-chain multiple stopping problems.

Implements single-stopping value iteration, the waiting-time operator g for
both waiting models, and the n-exercise cascade in which the k-right value is
the single-stopping value of the composite reward h_k = h + g_{k-1}.

Finite-horizon problems are solved with time-indexed tables so that the
result is exact (it matches the brute-force oracle to floating precision);
infinite-horizon problems use contraction iteration to a sup-norm tolerance.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    Deterministic,
    DiscreteDistribution,
    FiniteMarkovModel,
    IndependentDelay,
    RefractionSet,
    StoppingProblem,
    StoppingSetRule,
    ThresholdPolicy,
    ValueCascade,
    WaitingModel,
)

#: Relative tolerance for deciding V(x) = reward(x), i.e. stopping-set
#: membership.  Exact float equality is meaningless after iteration.
STOP_REL_TOL = 1e-9

#: Above this state count the refraction-set linear system is solved by
#: fixed-point iteration instead of a dense solve.
_DIRECT_SOLVE_LIMIT = 2000


class SolverError(RuntimeError):
    """Solver failure (non-convergence, unreachable refraction set, ...)."""

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SolveOptions:
    max_iterations: int = 100_000
    convergence_tol: float = 1e-12
    horizon: Optional[int] = None

    def __post_init__(self) -> None:
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class SingleStopResult:
    values: np.ndarray
    stopping_set: frozenset


def _stopping_set(values: np.ndarray, reward: np.ndarray) -> frozenset:
    scale = np.maximum(1.0, np.abs(values))
    return frozenset(np.nonzero(values - reward <= STOP_REL_TOL * scale)[0].tolist())


def single_stop_value(
    model: FiniteMarkovModel,
    reward: np.ndarray,
    options: SolveOptions = SolveOptions(),
) -> SingleStopResult:
    """Least fixed point of V = max(reward, alpha * P @ V) from V0 = reward.

    Infinite horizon iterates until the sup-norm change drops below the
    tolerance (the iterates are monotone nondecreasing since reward >= 0);
    a finite horizon H performs exactly H backward steps.
    """
    reward = np.asarray(reward, dtype=float)
    alpha, mat = model.step_discount, model.transition
    v = reward.copy()
    if options.horizon is not None:
        for _ in range(options.horizon):
            v = np.maximum(reward, alpha * (mat @ v))
        return SingleStopResult(v, _stopping_set(v, reward))
    for _ in range(options.max_iterations):
        v_next = np.maximum(reward, alpha * (mat @ v))
        residual = float(np.max(np.abs(v_next - v)))
        v = v_next
        if residual < options.convergence_tol:
            return SingleStopResult(v, _stopping_set(v, reward))
    raise SolverError(
        f"value iteration did not converge in {options.max_iterations} sweeps",
        residual=residual,
    )


# ---------------------------------------------------------------------------
# g-operators (infinite horizon)
# ---------------------------------------------------------------------------

def _delay_support(law: DiscreteDistribution) -> list[tuple[int, float]]:
    pairs = []
    for v, p in law.support:
        k = round(v)
        if abs(v - k) > 1e-9:
            raise SolverError(f"delay support must be integer for chain problems, got {v!r}")
        if k <= 0:
            raise SolverError("delay must be positive")
        pairs.append((int(k), p))
    return sorted(pairs)


def g_operator_independent_delay(
    model: FiniteMarkovModel,
    v_prev: np.ndarray,
    law: DiscreteDistribution,
) -> np.ndarray:
    """g(x) = sum_k P(delta=k) alpha^k (P^k v_prev)(x).

    Computed by iterated matrix-vector products; P^k is never formed.
    """
    pairs = _delay_support(law)
    alpha, mat = model.step_discount, model.transition
    g = np.zeros(model.n_states)
    w = np.asarray(v_prev, dtype=float)
    step = 0
    for k, p in pairs:
        while step < k:
            w = alpha * (mat @ w)
            step += 1
        g += p * w
    return g


def _refraction_mask(model: FiniteMarkovModel, b_states) -> np.ndarray:
    mask = np.zeros(model.n_states, dtype=bool)
    mask[list(b_states)] = True
    if not mask.any():
        raise SolverError("refraction set must be nonempty")
    return mask


def _check_reachable(model: FiniteMarkovModel, mask: np.ndarray) -> None:
    # Hitting probability of B strictly after time 0, by monotone iteration
    # from 0: p = P (1_B + 1_{B^c} p).  Must be 1 everywhere (a.s.-finite
    # refraction times).
    mat = model.transition
    b = mask.astype(float)
    p = np.zeros(model.n_states)
    for _ in range(100 * model.n_states + 1000):
        p_next = mat @ (b + np.where(mask, 0.0, p))
        if np.max(np.abs(p_next - p)) < 1e-13:
            p = p_next
            break
        p = p_next
    bad = np.nonzero(p < 1.0 - 1e-9)[0]
    if bad.size:
        raise SolverError(
            "refraction set is not reached almost surely from states "
            f"{bad.tolist()}; refraction times must be finite a.s."
        )


def g_operator_refraction_set(
    model: FiniteMarkovModel,
    v_prev: np.ndarray,
    b_states,
    options: SolveOptions = SolveOptions(),
) -> np.ndarray:
    """g(x) = E_x[alpha^rho v_prev(X_rho)], rho the first entry into B after 0.

    Solves g = alpha * P (1_B v_prev + 1_{B^c} g): a dense linear solve for
    small chains, fixed-point iteration otherwise.
    """
    mask = _refraction_mask(model, b_states)
    _check_reachable(model, mask)
    alpha, mat = model.step_discount, model.transition
    v_prev = np.asarray(v_prev, dtype=float)
    rhs = alpha * (mat @ np.where(mask, v_prev, 0.0))
    if model.n_states <= _DIRECT_SOLVE_LIMIT:
        lhs = np.eye(model.n_states) - alpha * (mat * ~mask[np.newaxis, :])
        return np.linalg.solve(lhs, rhs)
    g = np.zeros(model.n_states)
    for _ in range(options.max_iterations):
        g_next = rhs + alpha * (mat @ np.where(mask, 0.0, g))
        residual = float(np.max(np.abs(g_next - g)))
        g = g_next
        if residual < options.convergence_tol:
            return g
    raise SolverError("refraction-set fixed point did not converge", residual=residual)


def _g_operator(
    model: FiniteMarkovModel,
    v_prev: np.ndarray,
    waiting: WaitingModel,
    options: SolveOptions,
) -> np.ndarray:
    if isinstance(waiting, IndependentDelay):
        return g_operator_independent_delay(model, v_prev, waiting.law)
    if isinstance(waiting, RefractionSet):
        return g_operator_refraction_set(model, v_prev, waiting.states, options)
    # Deterministic delay d: alpha^d (P^d v_prev); d = 0 means the next right
    # is available immediately, so g is v_prev itself.
    d = round(waiting.delta)
    if abs(waiting.delta - d) > 1e-9:
        raise SolverError("deterministic delay must be an integer for chain problems")
    w = np.asarray(v_prev, dtype=float)
    for _ in range(int(d)):
        w = model.step_discount * (model.transition @ w)
    return w


# ---------------------------------------------------------------------------
# Finite-horizon tables
# ---------------------------------------------------------------------------

def _finite_horizon_g(
    model: FiniteMarkovModel,
    v_prev: np.ndarray,
    waiting: WaitingModel,
    horizon: int,
) -> np.ndarray:
    """Time-indexed g[t, x] for t = 0..H; v_prev is (H+1, S) with 0 after H."""
    alpha, mat = model.step_discount, model.transition
    n = model.n_states
    g = np.zeros((horizon + 1, n))
    if isinstance(waiting, RefractionSet):
        mask = _refraction_mask(model, waiting.states)
        for t in range(horizon - 1, -1, -1):
            g[t] = alpha * (mat @ np.where(mask, v_prev[t + 1], g[t + 1]))
        return g
    if isinstance(waiting, IndependentDelay):
        pairs = _delay_support(waiting.law)
    else:
        d = round(waiting.delta)
        if abs(waiting.delta - d) > 1e-9:
            raise SolverError("deterministic delay must be an integer for chain problems")
        pairs = [(int(d), 1.0)]
    for t in range(horizon, -1, -1):
        for d, p in pairs:
            if t + d > horizon:
                continue
            w = v_prev[t + d]
            for _ in range(d):
                w = alpha * (mat @ w)
            g[t] += p * w
    return g


def _finite_horizon_single_stop(
    model: FiniteMarkovModel,
    reward: np.ndarray,
    horizon: int,
) -> np.ndarray:
    """Backward induction for a (possibly time-dependent) reward.

    ``reward`` may be (S,) or (H+1, S); returns V[t, x] for t = 0..H.
    """
    alpha, mat = model.step_discount, model.transition
    reward = np.asarray(reward, dtype=float)
    if reward.ndim == 1:
        reward = np.tile(reward, (horizon + 1, 1))
    v = np.empty_like(reward)
    v[horizon] = reward[horizon]
    for t in range(horizon - 1, -1, -1):
        v[t] = np.maximum(reward[t], alpha * (mat @ v[t + 1]))
    return v


def _solve_cascade_finite(problem: StoppingProblem, horizon: int):
    model: FiniteMarkovModel = problem.dynamics
    h = problem.reward_values()
    n = problem.n_exercises
    values_t = [_finite_horizon_single_stop(model, h, horizon)]
    g_t, hk_t = [], []
    for _ in range(2, n + 1):
        g = _finite_horizon_g(model, values_t[-1], problem.waiting, horizon)
        hk = h[np.newaxis, :] + g
        g_t.append(g)
        hk_t.append(hk)
        values_t.append(_finite_horizon_single_stop(model, hk, horizon))
    return values_t, g_t, hk_t


# ---------------------------------------------------------------------------
# Cascade
# ---------------------------------------------------------------------------

def solve_cascade(
    problem: StoppingProblem,
    options: SolveOptions = SolveOptions(),
) -> tuple[ValueCascade, ThresholdPolicy]:
    """Solve the n-exercise problem by cascading single stopping problems.

    V_1 is the single-stopping value of h; for k = 2..n the composite reward
    is h_k = h + g_{k-1}(V_{k-1}) and V_k its single-stopping value.  Returns
    the cascade (time-0 tables for finite horizons) and the optimal policy
    with rules in exercise order: the first exercise uses the stopping set of
    V_n, the last one that of V_1.  Ties between stopping and continuing
    resolve to "stop".
    """
    if not isinstance(problem.dynamics, FiniteMarkovModel):
        raise SolverError("solve_cascade requires finite Markov dynamics")
    model = problem.dynamics
    h = problem.reward_values()
    n = problem.n_exercises
    horizon = problem.horizon if problem.horizon is not None else options.horizon

    if horizon is not None:
        values_t, g_t, hk_t = _solve_cascade_finite(problem, horizon)
        values = [v[0] for v in values_t]
        g_tables = [g[0] for g in g_t]
        composites = [hk[0] for hk in hk_t]
    else:
        values = [single_stop_value(model, h, options).values]
        g_tables, composites = [], []
        for _ in range(2, n + 1):
            g = _g_operator(model, values[-1], problem.waiting, options)
            hk = h + g
            g_tables.append(g)
            composites.append(hk)
            values.append(single_stop_value(model, hk, options).values)

    cascade = ValueCascade(tuple(values), tuple(g_tables), tuple(composites))
    rewards = [h] + composites
    rules = [
        StoppingSetRule(_stopping_set(values[k - 1], rewards[k - 1]))
        for k in range(n, 0, -1)
    ]
    policy = ThresholdPolicy(tuple(rules), problem.waiting)
    return cascade, policy


def cascade_to_csv(
    model: FiniteMarkovModel,
    cascade: ValueCascade,
    policy: ThresholdPolicy,
) -> str:
    """One row per state: state, V_1..V_n, g_1.., h_2.., stop_1..stop_n."""
    n = cascade.n_exercises
    buf = io.StringIO()
    header = (
        ["state"]
        + [f"V_{k}" for k in range(1, n + 1)]
        + [f"g_{k}" for k in range(1, n)]
        + [f"h_{k}" for k in range(2, n + 1)]
        + [f"stop_{k}" for k in range(1, n + 1)]
    )
    buf.write(",".join(header) + "\n")
    # policy.rules is in exercise order (V_n first); stop_k refers to the
    # k-rights-remaining stopping set.
    stop_sets = [policy.rules[n - k].states for k in range(1, n + 1)]
    for i, state in enumerate(model.states):
        row = [f"{state:.17g}"]
        row += [f"{cascade.values[k][i]:.17g}" for k in range(n)]
        row += [f"{cascade.g_tables[k][i]:.17g}" for k in range(n - 1)]
        row += [f"{cascade.composite_rewards[k][i]:.17g}" for k in range(n - 1)]
        row += ["1" if i in stop_sets[k] else "0" for k in range(n)]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
