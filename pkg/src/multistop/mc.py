"""Monte Carlo policy evaluation and the exhaustive small-instance oracle.

Policy evaluation simulates the chain (or GBM price) path by path; path i
draws from a substream derived from (seed, i), so results are bit-identical
regardless of scheduling or thread count and common random numbers come for
free across policy sweeps.

``brute_force_value`` computes the exact optimum of tiny finite-horizon
instances by backward induction on the augmented state
(time, chain state, rights left, waiting status).  It never forms g-tables
or composite rewards, which keeps it an independent check of the cascade
solver's reduction.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    Deterministic,
    FiniteMarkovModel,
    GbmModel,
    IndependentDelay,
    RefractionSet,
    StoppingProblem,
    ThresholdPolicy,
    ThresholdRule,
)
from .dp import SolverError

#: Hard cap on backward-induction table entries in the brute-force oracle.
BRUTE_FORCE_CAP = 10_000_000

#: Chain paths are truncated once alpha^T * max(h) falls below this times
#: the reward scale.
_TRUNCATION_EPS = 1e-10


@dataclass(frozen=True)
class EvalReport:
    """Monte Carlo estimate of a policy's expected total discounted payoff."""

    estimate: float
    std_error: float
    n_paths: int
    seed: int
    truncation_horizon: float
    truncation_bound: float
    payoffs: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "truncation_horizon": self.truncation_horizon,
            "truncation_bound": self.truncation_bound,
        }


def _make_report(payoffs: np.ndarray, seed: int, horizon: float, bound: float) -> EvalReport:
    n = len(payoffs)
    est = float(np.mean(payoffs))
    se = float(np.std(payoffs, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EvalReport(est, se, n, seed, horizon, bound, payoffs=payoffs)


def _path_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, i]))


# ---------------------------------------------------------------------------
# Finite-chain policy evaluation
# ---------------------------------------------------------------------------

def evaluate_policy_chain(
    problem: StoppingProblem,
    policy: ThresholdPolicy,
    n_paths: int,
    seed: int,
    initial_state: int = 0,
) -> EvalReport:
    """Simulate the policy on chain trajectories started at ``initial_state``.

    Exercise i fires at the first admissible time at which rule i triggers;
    unexercised rights contribute 0.  Every simulated exercise pair is
    asserted to satisfy the waiting constraint.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if policy.n_exercises != problem.n_exercises:
        raise ValueError(
            f"policy has {policy.n_exercises} rules but the problem grants "
            f"{problem.n_exercises} exercises"
        )
    model: FiniteMarkovModel = problem.dynamics
    if not isinstance(model, FiniteMarkovModel):
        raise ValueError("evaluate_policy_chain requires finite Markov dynamics")
    h = problem.reward_values()
    alpha = model.step_discount
    max_h = float(np.max(h))
    n = problem.n_exercises

    t_trunc = int(math.ceil(math.log(_TRUNCATION_EPS) / math.log(alpha))) if max_h > 0 else 0
    if problem.horizon is not None:
        t_trunc = min(t_trunc, problem.horizon)
    bound = n * alpha ** t_trunc * max_h

    waiting = policy.waiting
    model1 = isinstance(waiting, (IndependentDelay, Deterministic))
    if not model1 and waiting.states is None:
        raise ValueError("chain simulation needs a state-subset refraction set")
    b_mask = None
    if not model1:
        b_mask = np.zeros(model.n_states, dtype=bool)
        b_mask[list(waiting.states)] = True

    cum = np.cumsum(model.transition, axis=1)
    disc = alpha ** np.arange(t_trunc + 1)
    states_vals = np.array(model.states)
    rules = policy.rules

    payoffs = np.empty(n_paths)
    for i in range(n_paths):
        rng = _path_rng(seed, i)
        state = initial_state
        pay = 0.0
        ex = 0
        next_allowed = 0
        permitted = True
        last_ex_t = -1
        for t in range(t_trunc + 1):
            if not model1 and not permitted and b_mask[state]:
                # entry into B strictly after the last exercise re-enables it
                permitted = True
            while ex < n:
                admissible = (t >= next_allowed) if model1 else permitted
                if not admissible or not rules[ex].triggers(state, states_vals[state]):
                    break
                assert admissible and (model1 or last_ex_t < t)
                pay += disc[t] * h[state]
                ex += 1
                if ex == n:
                    break
                if model1:
                    delta = (
                        waiting.delta if isinstance(waiting, Deterministic)
                        else waiting.law.sample(rng)
                    )
                    next_allowed = t + int(round(delta))
                else:
                    permitted = False
                    last_ex_t = t
            if ex == n or t == t_trunc:
                break
            state = int(np.searchsorted(cum[state], rng.random(), side="right"))
            state = min(state, model.n_states - 1)
        payoffs[i] = pay
    return _make_report(payoffs, seed, float(t_trunc), bound)


# ---------------------------------------------------------------------------
# GBM policy evaluation
# ---------------------------------------------------------------------------

#: Ziggurat tail cut for the standard normal (Marsaglia & Tsang, 128 layers).
_ZIG_R = 3.442619855899
_ZIG_M1 = 2147483648.0


def _ziggurat_tables():
    """Layer boundaries, widths and densities for the 128-layer ziggurat."""
    kn = np.zeros(128, dtype=np.int64)
    wn = np.zeros(128)
    fn = np.zeros(128)
    dn = tn = _ZIG_R
    vn = 9.91256303526217e-3
    q = vn / math.exp(-0.5 * dn * dn)
    kn[0] = int((dn / q) * _ZIG_M1)
    kn[1] = 0
    wn[0] = q / _ZIG_M1
    wn[127] = dn / _ZIG_M1
    fn[0] = 1.0
    fn[127] = math.exp(-0.5 * dn * dn)
    for i in range(126, 0, -1):
        dn = math.sqrt(-2.0 * math.log(vn / dn + math.exp(-0.5 * dn * dn)))
        kn[i + 1] = int((dn / tn) * _ZIG_M1)
        tn = dn
        fn[i] = math.exp(-0.5 * dn * dn)
        wn[i] = dn / _ZIG_M1
    return kn, wn, fn


_ZIG_KN, _ZIG_WN, _ZIG_FN = _ziggurat_tables()

_U64_MASK = 0xFFFFFFFFFFFFFFFF
_INV_2_53 = 1.0 / 9007199254740992.0


def _rng_next_impl(state):
    """One splitmix64 step: new state and a 64-bit output word."""
    state = (state + 0x9E3779B97F4A7C15) & _U64_MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64_MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64_MASK
    return state, z ^ (z >> 31)


def _uniform_impl(state):
    """A uniform draw in (0, 1] (never 0, so -log is always finite)."""
    state, z = _rng_next(state)
    return state, float((z >> 11) + 1) * _INV_2_53


def _znorm_impl(state, kn, wn, fn):
    """One standard normal draw via the ziggurat method."""
    while True:
        state, z = _rng_next(state)
        hz = np.int64(z & 0xFFFFFFFF)
        if hz >= 2147483648:
            hz -= 4294967296
        iz = hz & 127
        if -kn[iz] < hz < kn[iz]:
            return state, hz * wn[iz]
        if iz == 0:  # tail layer: Marsaglia's exponential rejection
            while True:
                state, u1 = _uniform(state)
                state, u2 = _uniform(state)
                x = -math.log(u1) / _ZIG_R
                y = -math.log(u2)
                if y + y >= x * x:
                    break
            return state, (_ZIG_R + x) if hz > 0 else -(_ZIG_R + x)
        x = hz * wn[iz]
        state, u = _uniform(state)
        if fn[iz] + u * (fn[iz - 1] - fn[iz]) < math.exp(-0.5 * x * x):
            return state, x
        # wedge rejected: fall through and draw a fresh candidate


_rng_next = _rng_next_impl
_uniform = _uniform_impl
_znorm = _znorm_impl


def _gbm_kernel_impl(logx0, drift_dt, sig_sqdt, strike, beta, dt,
                     log_thresholds, log_z0, n_steps, seeds, payoffs,
                     kn, wn, fn):
    n_ex = log_thresholds.shape[0]
    for i in _prange(seeds.shape[0]):
        state = seeds[i]
        logx = logx0
        pay = 0.0
        ex = 0
        permitted = True
        for step in range(n_steps + 1):
            if permitted and logx <= log_thresholds[ex]:
                gain = strike - math.exp(logx)
                if gain > 0.0:
                    pay += math.exp(-beta * step * dt) * gain
                ex += 1
                if ex == n_ex:
                    break
                permitted = False
            if step == n_steps:
                break
            state, z = _znorm(state, kn, wn, fn)
            logx = logx + drift_dt + sig_sqdt * z
            if not permitted and logx >= log_z0:
                permitted = True
        payoffs[i] = pay


try:  # compile lazily importable; pure-Python fallback keeps tests runnable
    import numba

    _prange = numba.prange
    _rng_next = numba.njit(_rng_next_impl, inline="always")
    _uniform = numba.njit(_uniform_impl, inline="always")
    _znorm = numba.njit(_znorm_impl, inline="always")
    _gbm_kernel = numba.njit(_gbm_kernel_impl, parallel=True, cache=True)
except ImportError:  # pragma: no cover
    _prange = range
    _gbm_kernel = _gbm_kernel_impl


def _apply_thread_cap() -> None:
    cap = os.environ.get("MULTISTOP_THREADS")
    if cap is None:
        return
    cap = int(cap)
    if cap <= 0:
        return
    try:
        import numba

        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))
    except ImportError:  # pragma: no cover
        pass


def evaluate_policy_gbm(
    model: GbmModel,
    strike: float,
    policy: ThresholdPolicy,
    n_paths: int,
    dt: float,
    t_max: float,
    seed: int,
    x0: Optional[float] = None,
) -> EvalReport:
    """Simulate the put policy on a fixed grid with exact lognormal steps.

    Thresholds are "exercise when the price is at or below the level" rules;
    refraction waits for the first grid time strictly after an exercise at
    which the price is at or above z0.  The two bias sources are grid
    crossing bias and horizon truncation (bounded by n * exp(-beta*T) * K);
    the latter is recorded in the report.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if model.beta < model.sigma ** 2 / 2.0:
        raise ValueError("beta >= sigma^2/2 required for finite refraction times")
    if not isinstance(policy.waiting, RefractionSet) or policy.waiting.level is None:
        raise ValueError("GBM simulation needs a level-based refraction set")
    levels = []
    for rule in policy.rules:
        if not isinstance(rule, ThresholdRule) or rule.direction != "below":
            raise ValueError("GBM put policies must use 'below' threshold rules")
        levels.append(rule.level)
    x0 = model.x0 if x0 is None else x0
    tail = math.exp(-model.beta * t_max) * strike
    if tail > 1e-4 * strike:
        warnings.warn(
            f"T_max={t_max} truncates mass worth up to {tail:.3g} per right",
            stacklevel=2,
        )

    n_steps = int(round(t_max / dt))
    seeds = np.random.SeedSequence(seed).generate_state(n_paths, dtype=np.uint64)
    payoffs = np.empty(n_paths)
    _apply_thread_cap()
    _gbm_kernel(
        math.log(x0),
        (model.beta - 0.5 * model.sigma ** 2) * dt,
        model.sigma * math.sqrt(dt),
        strike,
        model.beta,
        dt,
        np.log(np.asarray(levels)),
        math.log(policy.waiting.level),
        n_steps,
        seeds,
        payoffs,
        _ZIG_KN,
        _ZIG_WN,
        _ZIG_FN,
    )
    bound = len(levels) * tail
    return _make_report(payoffs, seed, t_max, bound)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

def brute_force_value(problem: StoppingProblem) -> np.ndarray:
    """Exact finite-horizon optimum per initial state, by direct induction.

    Equivalent to enumerating every history-adapted exercise rule subject to
    admissibility, but organized as backward induction on
    (time, state, rights, waiting status).  Model 1 delays enter the state as
    "steps until the next exercise is permitted"; Model 2 carries a
    permission flag that switches on at the first entry into B strictly
    after an exercise.
    """
    if problem.horizon is None:
        raise SolverError("brute force requires a finite horizon")
    model: FiniteMarkovModel = problem.dynamics
    if not isinstance(model, FiniteMarkovModel):
        raise SolverError("brute force requires finite Markov dynamics")
    h = problem.reward_values()
    alpha, mat = model.step_discount, model.transition
    n_states, n, horizon = model.n_states, problem.n_exercises, problem.horizon
    waiting = problem.waiting

    if isinstance(waiting, RefractionSet):
        if waiting.states is None:
            raise SolverError("chain brute force needs a state-subset refraction set")
        mask = np.zeros(n_states, dtype=bool)
        mask[list(waiting.states)] = True
        _check_cap((horizon + 1) * n_states * (n + 1) * 2)
        # w[k, flag, x]; flag 1 = exercise permitted now
        w = np.zeros((n + 1, 2, n_states))
        for _t in range(horizon, -1, -1):
            w_cur = np.zeros_like(w)
            for k in range(1, n + 1):
                w_cur[k, 0] = alpha * (mat @ np.where(mask, w[k, 1], w[k, 0]))
            for k in range(1, n + 1):
                exercise = h + w_cur[k - 1, 0]
                continue_ = alpha * (mat @ w[k, 1])
                w_cur[k, 1] = np.maximum(exercise, continue_)
            w = w_cur
        return w[n, 1]

    if isinstance(waiting, Deterministic):
        d = round(waiting.delta)
        if abs(waiting.delta - d) > 1e-9:
            raise SolverError("deterministic delay must be an integer for chain problems")
        pairs = [(int(d), 1.0)]
    else:
        pairs = []
        for v, p in waiting.law.support:
            k = round(v)
            if abs(v - k) > 1e-9 or k <= 0:
                raise SolverError("delay law must be supported on positive integers")
            pairs.append((int(k), p))
    w_max = min(max(d for d, _ in pairs), horizon + 1)
    _check_cap((horizon + 1) * n_states * (n + 1) * (w_max + 1))

    # w[k, wait, x]; wait = steps until exercising is permitted again
    w = np.zeros((n + 1, w_max + 1, n_states))
    for _t in range(horizon, -1, -1):
        w_cur = np.zeros_like(w)
        for k in range(1, n + 1):
            for wait in range(1, w_max + 1):
                w_cur[k, wait] = alpha * (mat @ w[k, wait - 1])
        for k in range(1, n + 1):
            exercise = h.copy()
            for d, p in pairs:
                d_eff = min(d, w_max)  # beyond the horizon the right is dead anyway
                exercise = exercise + p * w_cur[k - 1, d_eff]
            continue_ = alpha * (mat @ w[k, 0])
            w_cur[k, 0] = np.maximum(exercise, continue_)
        w = w_cur
    return w[n, 0]


def _check_cap(entries: int) -> None:
    if entries > BRUTE_FORCE_CAP:
        raise SolverError(
            f"brute-force size cap exceeded: {entries} > {BRUTE_FORCE_CAP} table entries"
        )
