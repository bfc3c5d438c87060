"""Analytic solvers for the two tractable model problems.

* Multiple house selling: i.i.d. offers with discount alpha and i.i.d.
  positive integer waiting times.  Each extra right shifts the offer
  distribution by a constant d_k, so the whole cascade reduces to one
  scalar root-finding problem per level.
* Perpetual put with level-triggered refraction: GBM price, exercise
  thresholds x_1* <= ... <= x_n* and coefficients c_k obtained in closed
  form from the single-exercise value function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

from .core import DiscreteDistribution, ThresholdPolicy, ThresholdRule, RefractionSet

#: Absolute bisection tolerance for house-selling thresholds.
THRESHOLD_TOL = 1e-10


class ClosedFormInputError(ValueError):
    """A precondition on the closed-form inputs is violated."""


class BranchValidityError(RuntimeError):
    """The put induction left the regime where its formulas are valid."""


# ---------------------------------------------------------------------------
# Offer laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UniformOfferLaw:
    """Continuous Uniform(a, b) offers, handled without discretization."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not self.a < self.b:
            raise ClosedFormInputError("uniform law needs a < b")

    def mean(self) -> float:
        return 0.5 * (self.a + self.b)

    def min_value(self) -> float:
        return self.a

    def max_value(self) -> float:
        return self.b

    def expected_excess(self, s: float) -> float:
        """E[(X - s)^+] in closed form."""
        if s >= self.b:
            return 0.0
        if s <= self.a:
            return self.mean() - s
        return (self.b - s) ** 2 / (2.0 * (self.b - self.a))

    def is_degenerate(self) -> bool:
        return False


OfferLaw = Union[DiscreteDistribution, UniformOfferLaw]


def _expected_excess(law: OfferLaw, s: float) -> float:
    if isinstance(law, UniformOfferLaw):
        return law.expected_excess(s)
    return law.expectation(lambda v: max(v - s, 0.0))


def _law_is_degenerate(law: OfferLaw) -> bool:
    if isinstance(law, UniformOfferLaw):
        return False
    return len({v for v, p in law.support if p > 0}) <= 1


# ---------------------------------------------------------------------------
# House selling
# ---------------------------------------------------------------------------

def threshold_residual(law: OfferLaw, alpha: float, d: float, t: float) -> float:
    """|(1-alpha)/alpha - E[((X+d)/t - 1)^+]|, the defining-equation residual."""
    return abs((1.0 - alpha) / alpha - _expected_excess(law, t - d) / t)


def house_threshold(law: OfferLaw, alpha: float, d: float = 0.0) -> float:
    """Unique root t of (1-alpha)/alpha = E[((X+d)/t - 1)^+].

    The right-hand side is decreasing in t, so bracketing bisection is
    unconditionally convergent.  ``d`` is the shift constant encoding the
    value of the remaining rights.
    """
    if not 0.0 < alpha < 1.0:
        raise ClosedFormInputError(f"alpha must lie in (0, 1), got {alpha!r}")
    if d < 0.0:
        raise ClosedFormInputError("shift d must be >= 0")
    if law.min_value() < 0.0:
        raise ClosedFormInputError("offer law must have nonnegative support")
    if _law_is_degenerate(law):
        raise ClosedFormInputError(
            "law must assign positive mass above any candidate threshold"
        )
    target = (1.0 - alpha) / alpha

    def rhs(t: float) -> float:
        return _expected_excess(law, t - d) / t

    hi = law.max_value() + d
    if hi <= 0.0:
        raise ClosedFormInputError("offers are almost surely zero")
    lo = hi / 2.0
    while rhs(lo) < target:
        lo /= 2.0
        if lo < 1e-300:
            raise ClosedFormInputError("threshold equation has no positive root")
    while hi - lo > THRESHOLD_TOL:
        mid = 0.5 * (lo + hi)
        if rhs(mid) >= target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class HouseLevel:
    """Record for the stage with k rights remaining."""

    k: int
    shift: float        # d_{k-1}, added to every offer at this stage
    threshold: float    # stop when X + shift >= threshold
    expected_value: float  # E(V_k(X_1))

    @property
    def accept_level(self) -> float:
        """Raw-offer acceptance level: accept the first offer >= this."""
        return self.threshold - self.shift


@dataclass(frozen=True)
class HouseSolution:
    alpha: float
    offer_law: OfferLaw
    delay_law: DiscreteDistribution
    delay_discount: float                  # m = E(alpha^delta)
    levels: tuple[HouseLevel, ...]         # index k-1 holds the k-rights stage

    @property
    def n_exercises(self) -> int:
        return len(self.levels)

    def shifts(self) -> list[float]:
        """d_0..d_n; d_k = E(V_k(X_1)) * m."""
        return [0.0] + [lvl.expected_value * self.delay_discount for lvl in self.levels]

    def policy(self) -> ThresholdPolicy:
        """Rules in exercise order: the n-rights stage first."""
        rules = tuple(
            ThresholdRule("above", lvl.accept_level) for lvl in reversed(self.levels)
        )
        from .core import IndependentDelay

        return ThresholdPolicy(rules, IndependentDelay(self.delay_law))

    def to_dict(self) -> dict:
        if isinstance(self.offer_law, UniformOfferLaw):
            law_d = {"type": "uniform", "a": self.offer_law.a, "b": self.offer_law.b}
        else:
            law_d = {"type": "discrete", "support": [[v, p] for v, p in self.offer_law.support]}
        return {
            "alpha": self.alpha,
            "offer_law": law_d,
            "delay_law": {"support": [[v, p] for v, p in self.delay_law.support]},
            "delay_discount": self.delay_discount,
            "levels": [
                {
                    "k": lvl.k,
                    "shift": lvl.shift,
                    "threshold": lvl.threshold,
                    "accept_level": lvl.accept_level,
                    "expected_value": lvl.expected_value,
                }
                for lvl in self.levels
            ],
        }

    def table(self) -> str:
        lines = [f"{'k':>3} {'shift d_(k-1)':>16} {'threshold t_k':>16} "
                 f"{'accept offer >=':>16} {'E(V_k(X_1))':>16}"]
        for lvl in self.levels:
            lines.append(
                f"{lvl.k:>3} {lvl.shift:>16.8f} {lvl.threshold:>16.8f} "
                f"{lvl.accept_level:>16.8f} {lvl.expected_value:>16.8f}"
            )
        return "\n".join(lines)


def solve_house(
    offer_law: OfferLaw,
    alpha: float,
    delay_law: DiscreteDistribution,
    n: int,
) -> HouseSolution:
    """Cascade of shifted single-sale problems.

    At the stage with k rights remaining the offers are shifted by
    d_{k-1} = E(V_{k-1}(X_1)) * E(alpha^delta); the stage value function is
    V_k(x) = (x + d_{k-1} - t_k)^+ + t_k and the optimal rule accepts the
    first offer with X + d_{k-1} >= t_k.
    """
    if n < 1:
        raise ClosedFormInputError("n must be >= 1")
    bad = delay_law.violations("delay law")
    if bad:
        raise ClosedFormInputError("; ".join(bad))
    if delay_law.min_value() < 1.0 - 1e-9 or not delay_law.has_integer_support():
        raise ClosedFormInputError("delay law must be supported on {1, 2, ...}")
    m = delay_law.discount_factor(alpha)
    levels = []
    d = 0.0
    for k in range(1, n + 1):
        t_k = house_threshold(offer_law, alpha, d)
        # E(V_k(X_1)) with V_k(x) = (x + d - t_k)^+ + t_k.
        ev_k = _expected_excess(offer_law, t_k - d) + t_k
        levels.append(HouseLevel(k=k, shift=d, threshold=t_k, expected_value=ev_k))
        d = ev_k * m
    return HouseSolution(
        alpha=alpha,
        offer_law=offer_law,
        delay_law=delay_law,
        delay_discount=m,
        levels=tuple(levels),
    )


# ---------------------------------------------------------------------------
# Perpetual put with level-triggered refraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PutSolution:
    strike: float
    sigma: float
    beta: float
    z0: float
    gamma: float
    x_star: tuple[float, ...]   # x_1* .. x_n*
    c: tuple[float, ...]        # c_1 .. c_{n-1}

    @property
    def n_exercises(self) -> int:
        return len(self.x_star)

    def value_single(self, x: float) -> float:
        """V_1: K - x below x_1*, (K - x_1*)(x/x_1*)^gamma above."""
        x1 = self.x_star[0]
        if x <= x1:
            return self.strike - x
        return (self.strike - x1) * (x / x1) ** self.gamma

    def value(self, x: float, k: int | None = None) -> float:
        """V_k(x) = V_1((1 - c_{k-1}) x), with c_0 = 0."""
        if k is None:
            k = self.n_exercises
        if not 1 <= k <= self.n_exercises:
            raise ClosedFormInputError(f"k must lie in 1..{self.n_exercises}")
        shrink = 1.0 - (self.c[k - 2] if k >= 2 else 0.0)
        return self.value_single(shrink * x)

    def g_first(self, x: float) -> float:
        """g_1(x) = c_1 x for x <= z0, V_1(x) above the refraction level."""
        if x <= self.z0:
            return self.c[0] * x
        return self.value_single(x)

    def policy(self) -> ThresholdPolicy:
        """Rules in exercise order: exercise k uses level x_{n-k+1}*."""
        rules = tuple(
            ThresholdRule("below", level) for level in reversed(self.x_star)
        )
        return ThresholdPolicy(rules, RefractionSet(level=self.z0))

    def to_dict(self) -> dict:
        return {
            "strike": self.strike,
            "sigma": self.sigma,
            "beta": self.beta,
            "z0": self.z0,
            "gamma": self.gamma,
            "x_star": list(self.x_star),
            "c": list(self.c),
        }

    def table(self, x0: float | None = None) -> str:
        x0 = self.z0 if x0 is None else x0
        lines = [f"{'k':>3} {'threshold x_k*':>16} {'c_(k-1)':>12} {'V_k(x0)':>14}"]
        for k, xs in enumerate(self.x_star, start=1):
            ck = self.c[k - 2] if k >= 2 else 0.0
            lines.append(f"{k:>3} {xs:>16.6f} {ck:>12.6f} {self.value(x0, k):>14.6f}")
        return "\n".join(lines)


def solve_put(K: float, sigma: float, beta: float, z0: float, n: int) -> PutSolution:
    """Thresholds and coefficients for the n-exercise perpetual put.

    Between two exercises the price must first climb back to z0 >= K; this
    makes the continuation value below z0 proportional to the price (slope
    c_k) and yields V_{k+1}(x) = V_1((1 - c_k) x) and
    x_{k+1}* = x_1*/(1 - c_k).
    """
    if n < 1:
        raise ClosedFormInputError("n must be >= 1")
    if K <= 0 or sigma <= 0 or beta <= 0:
        raise ClosedFormInputError("K, sigma, beta must be positive")
    if beta < sigma ** 2 / 2.0:
        raise ClosedFormInputError(
            f"beta >= sigma^2/2 required for a.s.-finite refraction times "
            f"(beta={beta!r}, sigma^2/2={sigma ** 2 / 2.0!r})"
        )
    if z0 < K:
        raise ClosedFormInputError(f"refraction level z0={z0!r} must be >= strike K={K!r}")

    gamma = -2.0 * beta / sigma ** 2
    x1 = K / (1.0 + sigma ** 2 / (2.0 * beta))

    def v1(x: float) -> float:
        return K - x if x <= x1 else (K - x1) * (x / x1) ** gamma

    x_star = [x1]
    c: list[float] = []
    c_prev = 0.0
    for _ in range(1, n):
        shrunk = (1.0 - c_prev) * z0
        if shrunk < x1:
            raise BranchValidityError(
                "induction branch invalid for these parameters: "
                f"(1 - c_k) z0 = {shrunk!r} fell below x_1* = {x1!r}"
            )
        c_k = v1(shrunk) / z0
        if not c_k < 1.0:
            raise BranchValidityError(
                f"induction branch invalid for these parameters: c_k = {c_k!r} >= 1"
            )
        c.append(c_k)
        x_star.append(x1 / (1.0 - c_k))
        c_prev = c_k
    return PutSolution(
        strike=K, sigma=sigma, beta=beta, z0=z0, gamma=gamma,
        x_star=tuple(x_star), c=tuple(c),
    )
