"""Domain types for multiple stopping problems with random waiting times.

This module contains the problem data model shared by every solver: finite
Markov chains and geometric Brownian motion dynamics, the three waiting-time
variants (independent random delay, refraction set, deterministic delay),
reward representations, executable threshold policies and the value cascade
produced by the dynamic-programming solver.  No solving happens here.

All types are immutable after construction and safe to share across threads.
Random number state is always an explicit ``numpy.random.Generator`` passed
in by the caller, never hidden global state.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

#: Absolute tolerance for probability normalization checks (double-precision
#: row sums of up to ~1e4 entries).
PROB_TOL = 1e-12


class ModelError(ValueError):
    """Raised when a model object is structurally malformed.

    Soft invariant violations (unnormalized laws, invalid parameter ranges)
    are reported by :func:`validate_problem` instead, so that diagnostics can
    be collected rather than raised one at a time.
    """


# ---------------------------------------------------------------------------
# Probability primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteDistribution:
    """A finitely supported distribution given as (value, probability) pairs.

    Construction only enforces structural sanity (finite shapes); whether the
    probabilities are normalized and nonnegative is reported by
    :meth:`violations` so invalid laws can be diagnosed by
    :func:`validate_problem`.
    """

    support: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        cleaned = tuple((float(v), float(p)) for v, p in self.support)
        if not cleaned:
            raise ModelError("distribution support is empty")
        object.__setattr__(self, "support", cleaned)

    # -- accessors ---------------------------------------------------------

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.support])

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.support])

    def expectation(self, f) -> float:
        return float(sum(p * f(v) for v, p in self.support))

    def mean(self) -> float:
        return self.expectation(lambda v: v)

    def discount_factor(self, alpha: float) -> float:
        """E(alpha**X), the expected per-wait discount."""
        return self.expectation(lambda v: alpha ** v)

    def min_value(self) -> float:
        return min(v for v, _ in self.support)

    def max_value(self) -> float:
        return max(v for v, _ in self.support)

    def has_integer_support(self) -> bool:
        return all(abs(v - round(v)) < PROB_TOL for v, _ in self.support)

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        """Draw from the law; reproducible given the generator state."""
        idx = rng.choice(len(self.support), size=size, p=self.probabilities)
        vals = self.values
        return vals[idx] if size is not None else float(vals[idx])

    def violations(self, label: str = "law") -> list[str]:
        out = []
        vals, probs = self.values, self.probabilities
        if not np.all(np.isfinite(vals)):
            out.append(f"{label}: support values must be finite")
        if np.any(probs < -PROB_TOL):
            out.append(f"{label}: probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            out.append(f"{label} not normalized: probabilities sum to {probs.sum()!r}")
        return out

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "DiscreteDistribution":
        return cls(tuple((float(v), float(p)) for v, p in pairs))

    @classmethod
    def point_mass(cls, value: float) -> "DiscreteDistribution":
        return cls(((float(value), 1.0),))

    @classmethod
    def truncated_geometric(cls, p: float, k_max: int = 200) -> "DiscreteDistribution":
        """Geometric law on {1, 2, ...} truncated at ``k_max``.

        The tail mass beyond ``k_max`` is folded into the largest delay so
        the law stays exactly normalized.
        """
        if not 0.0 < p <= 1.0:
            raise ModelError("geometric parameter must lie in (0, 1]")
        pairs = [(float(k), p * (1.0 - p) ** (k - 1)) for k in range(1, k_max)]
        tail = 1.0 - sum(q for _, q in pairs)
        pairs.append((float(k_max), tail))
        return cls(tuple(pairs))

    @classmethod
    def uniform_grid(cls, a: float, b: float, n_points: int) -> "DiscreteDistribution":
        """Midpoint discretization of Uniform(a, b) on ``n_points`` atoms."""
        step = (b - a) / n_points
        pts = a + (np.arange(n_points) + 0.5) * step
        return cls(tuple((float(x), 1.0 / n_points) for x in pts))


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiniteMarkovModel:
    """A finite chain with per-step discount factor alpha in (0, 1)."""

    states: tuple[float, ...]
    transition: np.ndarray
    step_discount: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(float(s) for s in self.states))
        mat = np.asarray(self.transition, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] != len(self.states):
            raise ModelError("transition must be a square states x states matrix")
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "transition", mat)
        object.__setattr__(self, "step_discount", float(self.step_discount))

    @property
    def n_states(self) -> int:
        return len(self.states)

    def violations(self) -> list[str]:
        out = []
        mat = self.transition
        if np.any(mat < -PROB_TOL) or np.any(mat > 1.0 + PROB_TOL):
            out.append("transition entries must lie in [0, 1]")
        row_sums = mat.sum(axis=1)
        bad = np.nonzero(np.abs(row_sums - 1.0) > PROB_TOL)[0]
        if bad.size:
            out.append(f"transition rows {bad.tolist()} do not sum to 1")
        if not 0.0 < self.step_discount < 1.0:
            out.append(f"step_discount must lie in (0, 1), got {self.step_discount!r}")
        return out

    @classmethod
    def iid_offers(cls, law: DiscreteDistribution, step_discount: float) -> "FiniteMarkovModel":
        """Chain whose state is the current offer; every row equals the law."""
        probs = law.probabilities
        mat = np.tile(probs, (len(probs), 1))
        return cls(tuple(law.values), mat, step_discount)


@dataclass(frozen=True)
class GbmModel:
    """Geometric Brownian motion price with discount rate beta per unit time.

    Finiteness of level-hitting refraction times requires beta >= sigma^2/2;
    this is reported by :func:`validate_problem` and enforced by the solvers
    that depend on it.
    """

    x0: float
    sigma: float
    beta: float

    def violations(self) -> list[str]:
        out = []
        if self.x0 <= 0:
            out.append("x0 must be positive")
        if self.sigma <= 0:
            out.append("sigma must be positive")
        if self.beta <= 0:
            out.append("beta must be positive")
        elif self.beta < self.sigma ** 2 / 2.0:
            out.append(
                f"beta < sigma^2/2 ({self.beta!r} < {self.sigma ** 2 / 2.0!r}): "
                "refraction times would be infinite with positive probability"
            )
        return out


Dynamics = Union[FiniteMarkovModel, GbmModel]


# ---------------------------------------------------------------------------
# Waiting models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IndependentDelay:
    """Model 1: i.i.d. waiting times independent of the reward process."""

    law: DiscreteDistribution


@dataclass(frozen=True)
class RefractionSet:
    """Model 2: the next exercise is allowed at the first re-entry into B.

    For finite chains ``states`` is the set of state indices forming B; for
    GBM dynamics ``level`` is the trigger level z0 with B = [z0, infinity).
    """

    states: Optional[frozenset[int]] = None
    level: Optional[float] = None

    def __post_init__(self) -> None:
        if self.states is not None:
            object.__setattr__(self, "states", frozenset(int(i) for i in self.states))
        if (self.states is None) == (self.level is None):
            raise ModelError("RefractionSet needs exactly one of states / level")


@dataclass(frozen=True)
class Deterministic:
    """Classical baseline: a fixed refraction period delta >= 0."""

    delta: float


WaitingModel = Union[IndependentDelay, RefractionSet, Deterministic]


# ---------------------------------------------------------------------------
# Rewards, problems, policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PutReward:
    """Named analytic reward h(x) = (K - x)^+."""

    strike: float

    def __call__(self, x: float) -> float:
        return max(self.strike - x, 0.0)


Reward = Union[tuple, PutReward]


@dataclass(frozen=True)
class StoppingProblem:
    """Everything a solver needs: dynamics, reward, rights, waiting model.

    ``reward`` is a per-state table (tuple aligned with the chain's states)
    for finite chains, or a :class:`PutReward` for GBM dynamics.
    ``horizon`` is an integer for finite-horizon chain problems and ``None``
    for infinite horizon.
    """

    dynamics: Dynamics
    reward: Reward
    n_exercises: int
    waiting: WaitingModel
    horizon: Optional[int] = None

    def __post_init__(self) -> None:
        if not isinstance(self.reward, PutReward):
            object.__setattr__(self, "reward", tuple(float(r) for r in self.reward))

    def reward_values(self) -> np.ndarray:
        if isinstance(self.reward, PutReward):
            raise ModelError("analytic reward has no per-state table")
        return np.array(self.reward)


@dataclass(frozen=True)
class StoppingSetRule:
    """Stop as soon as the chain is in one of these state indices."""

    states: frozenset[int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", frozenset(int(i) for i in self.states))

    def triggers(self, state_index: int, state_value: float) -> bool:
        return state_index in self.states


@dataclass(frozen=True)
class ThresholdRule:
    """Stop when the state value crosses ``level`` in ``direction``."""

    direction: str  # "above" | "below"
    level: float

    def __post_init__(self) -> None:
        if self.direction not in ("above", "below"):
            raise ModelError(f"unknown threshold direction {self.direction!r}")
        if not math.isfinite(self.level):
            raise ModelError("threshold level must be finite")

    def triggers(self, state_index: int, state_value: float) -> bool:
        if self.direction == "above":
            return state_value >= self.level
        return state_value <= self.level


PolicyRule = Union[StoppingSetRule, ThresholdRule]


@dataclass(frozen=True)
class ThresholdPolicy:
    """Executable strategy: one stopping rule per exercise, in exercise order.

    ``rules[0]`` governs the first exercise (all rights remaining),
    ``rules[-1]`` the last one.
    """

    rules: tuple[PolicyRule, ...]
    waiting: WaitingModel

    def __post_init__(self) -> None:
        object.__setattr__(self, "rules", tuple(self.rules))

    @property
    def n_exercises(self) -> int:
        return len(self.rules)


@dataclass(frozen=True)
class ValueCascade:
    """Value tables V_1..V_n with the g-tables and composite rewards h_k.

    ``values[k-1]`` is V_k, ``g_tables[k-2]`` is g_{k-1} (so ``g_tables`` has
    length n-1) and ``composite_rewards[k-2]`` is h_k = h + g_{k-1}.
    """

    values: tuple[np.ndarray, ...]
    g_tables: tuple[np.ndarray, ...]
    composite_rewards: tuple[np.ndarray, ...]

    @property
    def n_exercises(self) -> int:
        return len(self.values)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _validate_waiting(w: WaitingModel, problem: StoppingProblem) -> list[str]:
    out: list[str] = []
    if isinstance(w, IndependentDelay):
        out.extend(w.law.violations("delay law"))
        if w.law.min_value() <= 0:
            out.append("delay law must be supported on strictly positive values")
    elif isinstance(w, Deterministic):
        if w.delta < 0:
            out.append("deterministic delay must be >= 0")
    elif isinstance(w, RefractionSet):
        if isinstance(problem.dynamics, FiniteMarkovModel):
            if w.states is None:
                out.append("refraction set for a finite chain must be a state subset")
            elif not w.states:
                out.append("refraction set must be nonempty")
            elif max(w.states) >= problem.dynamics.n_states or min(w.states) < 0:
                out.append("refraction set contains out-of-range state indices")
        else:
            if w.level is None:
                out.append("refraction set for GBM dynamics must be a level z0")
            elif isinstance(problem.reward, PutReward) and w.level < problem.reward.strike:
                out.append(
                    f"refraction level z0={w.level!r} below strike {problem.reward.strike!r}"
                )
    return out


def validate_problem(problem: StoppingProblem) -> list[str]:
    """Return every violated invariant as a message; empty list means valid.

    Pure: calling twice on the same problem yields identical output.
    """
    out: list[str] = []
    dyn = problem.dynamics
    out.extend(dyn.violations())

    if isinstance(dyn, FiniteMarkovModel):
        if isinstance(problem.reward, PutReward):
            out.append("finite chains need a tabulated per-state reward")
        else:
            rewards = problem.reward_values()
            if len(rewards) != dyn.n_states:
                out.append("reward table length does not match number of states")
            if np.any(rewards < 0):
                out.append("reward must be nonnegative on all states")
            if not np.all(np.isfinite(rewards)):
                out.append("reward must be finite (bounded) on all states")
    else:
        if not isinstance(problem.reward, PutReward):
            out.append("GBM dynamics need a named analytic reward such as put(K)")
        elif problem.reward.strike <= 0:
            out.append("strike must be positive")
        if problem.horizon is not None:
            out.append("finite horizons are not supported for GBM dynamics")

    if problem.n_exercises < 1:
        out.append("n_exercises must be >= 1")
    if problem.horizon is not None:
        if problem.horizon < 0:
            out.append("horizon must be >= 0")
        elif problem.horizon < problem.n_exercises - 1:
            # All n exercises can never fit; legal (missing rights pay 0) but
            # worth surfacing since it is usually a modeling mistake.
            out.append(
                f"horizon {problem.horizon} < n_exercises - 1: "
                "not all rights can be exercised"
            )

    out.extend(_validate_waiting(problem.waiting, problem))
    return out


def sample_delay(w: WaitingModel, rng: np.random.Generator) -> float:
    """Draw one waiting time (Model 1 / deterministic only).

    Refraction-set waiting times are hitting times of the driving process and
    cannot be sampled without a path.
    """
    if isinstance(w, Deterministic):
        return float(w.delta)
    if isinstance(w, IndependentDelay):
        return w.law.sample(rng)
    raise ModelError("delay is path-dependent; use hitting-time sampler")


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

_PUT_RE = re.compile(r"^put\(([^)]+)\)$")


def _law_to_dict(law: DiscreteDistribution) -> dict:
    return {"support": [[v, p] for v, p in law.support]}


def _law_from_dict(d: dict) -> DiscreteDistribution:
    return DiscreteDistribution.from_pairs(d["support"])


def waiting_to_dict(w: WaitingModel) -> dict:
    if isinstance(w, IndependentDelay):
        return {"type": "independent_delay", "law": _law_to_dict(w.law)}
    if isinstance(w, Deterministic):
        return {"type": "deterministic", "delta": w.delta}
    if w.states is not None:
        return {"type": "refraction_set", "states": sorted(w.states)}
    return {"type": "refraction_set", "level": w.level}


def waiting_from_dict(d: dict) -> WaitingModel:
    kind = d["type"]
    if kind == "independent_delay":
        return IndependentDelay(_law_from_dict(d["law"]))
    if kind == "deterministic":
        return Deterministic(float(d["delta"]))
    if kind == "refraction_set":
        if "states" in d:
            return RefractionSet(states=frozenset(d["states"]))
        return RefractionSet(level=float(d["level"]))
    raise ModelError(f"unknown waiting model type {kind!r}")


def problem_to_dict(problem: StoppingProblem) -> dict:
    dyn = problem.dynamics
    if isinstance(dyn, FiniteMarkovModel):
        dyn_d = {
            "type": "finite_markov",
            "states": list(dyn.states),
            "transition": dyn.transition.tolist(),
            "step_discount": dyn.step_discount,
        }
    else:
        dyn_d = {"type": "gbm", "x0": dyn.x0, "sigma": dyn.sigma, "beta": dyn.beta}
    if isinstance(problem.reward, PutReward):
        reward = f"put({problem.reward.strike!r})"
    else:
        reward = list(problem.reward)
    return {
        "dynamics": dyn_d,
        "reward": reward,
        "n_exercises": problem.n_exercises,
        "waiting": waiting_to_dict(problem.waiting),
        "horizon": problem.horizon,
    }


def problem_from_dict(d: dict) -> StoppingProblem:
    dyn_d = d["dynamics"]
    if dyn_d["type"] == "finite_markov":
        dynamics: Dynamics = FiniteMarkovModel(
            tuple(dyn_d["states"]),
            np.asarray(dyn_d["transition"], dtype=float),
            float(dyn_d["step_discount"]),
        )
    elif dyn_d["type"] == "gbm":
        dynamics = GbmModel(float(dyn_d["x0"]), float(dyn_d["sigma"]), float(dyn_d["beta"]))
    else:
        raise ModelError(f"unknown dynamics type {dyn_d['type']!r}")
    reward_d = d["reward"]
    if isinstance(reward_d, str):
        m = _PUT_RE.match(reward_d.strip())
        if not m:
            raise ModelError(f"unknown analytic reward {reward_d!r}")
        reward: Reward = PutReward(float(m.group(1)))
    else:
        reward = tuple(float(r) for r in reward_d)
    horizon = d.get("horizon")
    return StoppingProblem(
        dynamics=dynamics,
        reward=reward,
        n_exercises=int(d["n_exercises"]),
        waiting=waiting_from_dict(d["waiting"]),
        horizon=None if horizon is None else int(horizon),
    )


def problem_to_json(problem: StoppingProblem) -> str:
    """Canonical JSON (sorted keys) so round trips are byte-identical."""
    return json.dumps(problem_to_dict(problem), sort_keys=True, indent=2) + "\n"


def problem_from_json(text: str) -> StoppingProblem:
    return problem_from_dict(json.loads(text))


def policy_to_dict(policy: ThresholdPolicy) -> dict:
    rules = []
    for rule in policy.rules:
        if isinstance(rule, StoppingSetRule):
            rules.append({"type": "stopping_set", "states": sorted(rule.states)})
        else:
            rules.append({"type": "threshold", "direction": rule.direction, "level": rule.level})
    return {"rules": rules, "waiting": waiting_to_dict(policy.waiting)}


def policy_from_dict(d: dict) -> ThresholdPolicy:
    rules: list[PolicyRule] = []
    for rd in d["rules"]:
        if rd["type"] == "stopping_set":
            rules.append(StoppingSetRule(frozenset(rd["states"])))
        elif rd["type"] == "threshold":
            rules.append(ThresholdRule(rd["direction"], float(rd["level"])))
        else:
            raise ModelError(f"unknown rule type {rd['type']!r}")
    return ThresholdPolicy(tuple(rules), waiting_from_dict(d["waiting"]))
