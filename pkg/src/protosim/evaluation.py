"""Reference rollouts, trajectory containers, metrics, and the synthetic
error decomposition.

The brute-force reference queries every agent at every round with its own
recurrent states and neighbor summaries; no engine state enters it.  It is
the computational target the budgeted rollout is scored against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import NO_STATE, SimulationResult, build_context, neighbor_counts_for_round
from .errors import CapabilityError, ConfigurationError
from .metrics import (bootstrap_jsd_ci, exact_match, jsd, label_distribution,
                      wilson_interval)
from .oracle import CATEGORY_REFERENCE, Oracle, SyntheticKernel
from .population import Population
from .scenario import Scenario
from .socialgraph import SocialGraph

__all__ = ["Trajectory", "ErrorDecomposition", "run_reference", "decompose_error",
           "jsd", "exact_match", "wilson_interval", "bootstrap_jsd_ci",
           "label_distribution"]


@dataclass
class Trajectory:
    """Per-round hard states and reported distributions for one rollout."""

    method: str
    hard_by_round: np.ndarray        # (T, n) 0-based states
    reported: np.ndarray             # (T, K) reported distribution per round
    calls: dict
    seeds: dict
    n_options: int
    initial_states: np.ndarray       # (n,) with NO_STATE sentinel
    unprojected: np.ndarray | None = None   # (T, K) pre-projection estimates

    def __post_init__(self):
        if self.hard_by_round.shape[0] != self.reported.shape[0]:
            raise ConfigurationError("round count mismatch between ledgers and reports")
        sums = self.reported.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise ConfigurationError("reported distributions must lie on the simplex")

    @property
    def n_rounds(self) -> int:
        return self.hard_by_round.shape[0]

    def final_hard(self) -> np.ndarray:
        return self.hard_by_round[-1]

    def final_reported(self) -> np.ndarray:
        return self.reported[-1]

    def empirical(self, round_index: int) -> np.ndarray:
        """Empirical hard-state distribution at a 1-based round."""
        return label_distribution(self.hard_by_round[round_index - 1], self.n_options)


def trajectory_from_simulation(sim: SimulationResult, method: str = "aps") -> Trajectory:
    return Trajectory(method=method,
                      hard_by_round=sim.hard_by_round(),
                      reported=np.stack([r.projected for r in sim.rounds]),
                      calls=sim.ledger,
                      seeds=sim.seeds,
                      n_options=sim.rounds[0].soft.shape[1],
                      initial_states=sim.initial_states,
                      unprojected=np.stack([r.unprojected for r in sim.rounds]))


def run_reference(population: Population, graph: SocialGraph, scenario: Scenario,
                  oracle: Oracle, initial_states: np.ndarray | None = None,
                  writer=None, resume_state: dict | None = None) -> Trajectory:
    """Full rollout: every agent queried at every round.

    Shares population, graph, scenario, option set, and prompt protocol
    with budgeted rollouts, but consumes none of their state.  With a
    writer, every completed round is checkpointed so an interrupted run
    resumes exactly; on resume the returned trajectory covers only the new
    rounds (the run directory holds the full record).
    """
    n = population.n
    if initial_states is None:
        prev = np.full(n, NO_STATE, dtype=int)
    else:
        prev = np.asarray(initial_states, dtype=int)
    initial = prev.copy()
    first_round = 1
    if resume_state is not None:
        first_round = int(resume_state["round"]) + 1
        prev = np.asarray(resume_state["hard"], dtype=int)
    hard_rounds = []
    reported = []
    for t in range(first_round, scenario.n_rounds + 1):
        counts = neighbor_counts_for_round(graph, prev, scenario.n_options)
        contexts = [build_context(population, scenario, agent, t, prev[agent], counts)
                    for agent in range(n)]
        decisions = oracle.query_batch(contexts, CATEGORY_REFERENCE)
        hard = np.array([d.state for d in decisions], dtype=int)
        hard_rounds.append(hard)
        reported.append(label_distribution(hard, scenario.n_options))
        prev = hard
        if writer is not None:
            writer.write_round(t, hard, reported[-1], {"reference": n})
    if writer is not None:
        writer.finalize()
    return Trajectory(method="reference",
                      hard_by_round=np.stack(hard_rounds),
                      reported=np.stack(reported),
                      calls=oracle.ledger.snapshot(),
                      seeds={"population": int(population.seed), "graph": int(graph.seed)},
                      n_options=scenario.n_options,
                      initial_states=initial)


@dataclass
class ErrorDecomposition:
    """Per-round L1 error split: estimator error against the budgeted
    rollout's own context target, context mismatch between the two
    trajectories' targets, and the realized gap to the reference target."""

    audit_error: np.ndarray       # |p_hat - mean true dist under method contexts|_1
    context_mismatch: np.ndarray  # |method target - reference target|_1
    realized_error: np.ndarray    # |p_hat - reference target|_1

    @property
    def bound(self) -> np.ndarray:
        return self.audit_error + self.context_mismatch


def _context_target(kernel: SyntheticKernel, population: Population,
                    graph: SocialGraph, scenario: Scenario,
                    hard_by_round: np.ndarray, initial_states: np.ndarray,
                    round_index: int) -> np.ndarray:
    prev = initial_states if round_index == 1 else hard_by_round[round_index - 2]
    counts = neighbor_counts_for_round(graph, prev, scenario.n_options)
    total = np.zeros(scenario.n_options)
    for agent in range(population.n):
        context = build_context(population, scenario, agent, round_index,
                                prev[agent], counts)
        total += kernel.true_distribution(context)
    return total / population.n


def decompose_error(method_traj: Trajectory, reference_traj: Trajectory,
                    kernel: Oracle, population: Population, graph: SocialGraph,
                    scenario: Scenario) -> ErrorDecomposition:
    """Synthetic-oracle error decomposition over a completed pair of runs.

    Needs the oracle's true distribution under both context sets, so it is
    only available for the synthetic kernel.
    """
    if not isinstance(kernel, SyntheticKernel):
        raise CapabilityError("error decomposition requires a synthetic kernel")
    if method_traj.unprojected is None:
        raise ConfigurationError("method trajectory lacks unprojected estimates")
    T = method_traj.n_rounds
    if reference_traj.n_rounds != T:
        raise ConfigurationError("trajectories have different round counts")
    audit_error = np.zeros(T)
    context_mismatch = np.zeros(T)
    realized = np.zeros(T)
    for t in range(1, T + 1):
        method_target = _context_target(kernel, population, graph, scenario,
                                        method_traj.hard_by_round,
                                        method_traj.initial_states, t)
        reference_target = _context_target(kernel, population, graph, scenario,
                                           reference_traj.hard_by_round,
                                           reference_traj.initial_states, t)
        estimate = method_traj.unprojected[t - 1]
        audit_error[t - 1] = np.abs(estimate - method_target).sum()
        context_mismatch[t - 1] = np.abs(method_target - reference_target).sum()
        realized[t - 1] = np.abs(estimate - reference_target).sum()
    return ErrorDecomposition(audit_error=audit_error,
                              context_mismatch=context_mismatch,
                              realized_error=realized)
