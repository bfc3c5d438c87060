"""Figure rendering for solver reports.

Each helper writes a PNG next to the delimited output of the corresponding
CLI command.  All figures use the non-interactive Agg backend.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .closedform import HouseSolution, PutSolution
from .core import FiniteMarkovModel, ThresholdPolicy, ValueCascade


def save_cascade_figure(
    model: FiniteMarkovModel,
    cascade: ValueCascade,
    policy: ThresholdPolicy,
    path: str,
) -> str:
    """Value functions V_1..V_n over the state space, stopping states marked."""
    states = np.array(model.states)
    order = np.argsort(states)
    n = cascade.n_exercises
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for k in range(1, n + 1):
        ax.plot(states[order], cascade.values[k - 1][order], marker=".", label=f"$V_{{{k}}}$")
        stop = sorted(policy.rules[n - k].states)
        if stop:
            ax.plot(
                states[stop], cascade.values[k - 1][stop],
                linestyle="none", marker="o", markerfacecolor="none",
                color=ax.lines[-1].get_color(),
            )
    ax.set_xlabel("state")
    ax.set_ylabel("value")
    ax.set_title("Value cascade (circles: stopping set)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_house_figure(solution: HouseSolution, path: str) -> str:
    """Acceptance levels and shifts per number of remaining rights."""
    ks = [lvl.k for lvl in solution.levels]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, [lvl.accept_level for lvl in solution.levels], marker="o",
            label="accept offer $\\geq$")
    ax.plot(ks, [lvl.threshold for lvl in solution.levels], marker="s",
            label="shifted threshold $t_k$")
    ax.plot(ks, [lvl.shift for lvl in solution.levels], marker="^",
            label="shift $d_{k-1}$")
    ax.set_xlabel("rights remaining $k$")
    ax.set_xticks(ks)
    ax.set_title("House selling: thresholds by remaining rights")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_put_figure(solution: PutSolution, path: str) -> str:
    """Value functions V_k and exercise thresholds for the perpetual put."""
    x = np.linspace(1e-6, 1.4 * solution.z0, 400)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for k in range(1, solution.n_exercises + 1):
        ax.plot(x, [solution.value(xi, k) for xi in x], label=f"$V_{{{k}}}$")
    ax.plot(x, np.maximum(solution.strike - x, 0.0), linestyle="--",
            color="gray", label="$(K-x)^+$")
    for k, xs in enumerate(solution.x_star, start=1):
        ax.axvline(xs, linestyle=":", color="black", alpha=0.5)
        ax.annotate(f"$x_{{{k}}}^*$", (xs, ax.get_ylim()[1] * 0.9))
    ax.axvline(solution.z0, linestyle="-.", color="tab:red", alpha=0.6)
    ax.annotate("$z_0$", (solution.z0, ax.get_ylim()[1] * 0.8), color="tab:red")
    ax.set_xlabel("price")
    ax.set_ylabel("value")
    ax.set_title("Perpetual put with level-triggered refraction")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
