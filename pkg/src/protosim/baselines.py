"""Same-budget approximation baselines.

All four share the rollout protocol (population, graph, scenario, prompt
contexts, recurrent hard ledger) and the core stratification, but none use
tail routing, shadow audits, or residual-aware allocation.  The total
online budget is split as evenly as possible across rounds and then
allocated across strata in proportion to stratum size.
"""

from __future__ import annotations

import numpy as np
from sklearn.cluster import MiniBatchKMeans

from .audit import allocate_proportional
from .engine import NO_STATE, build_context, interpolate, neighbor_counts_for_round
from .errors import ConfigurationError
from .evaluation import Trajectory
from .metrics import label_distribution
from .oracle import CATEGORY_CORE, Oracle
from .population import Population
from .scenario import Scenario
from .seeding import BASELINE, keyed_rng
from .socialgraph import SocialGraph
from .stratification import (ScheduleConfig, StrataAssignment,
                             core_stratum_count, partition)

BASELINE_KINDS = ("stratified-sampling", "cluster-assignment",
                  "label-propagation", "medoid-anchors")


def split_budget(total: int, rounds: int) -> list[int]:
    """Per-round budgets differing from the even split by at most one."""
    base, extra = divmod(int(total), rounds)
    return [base + (1 if t < extra else 0) for t in range(rounds)]


def _majority(labels: np.ndarray, n_options: int) -> int:
    return int(np.argmax(np.bincount(labels, minlength=n_options)))


def _sample_members(members: np.ndarray, count: int, seed: int, round_index: int,
                    stratum: int, cell: int = 0) -> np.ndarray:
    rng = keyed_rng(seed, BASELINE, round_index, stratum, cell)
    return np.sort(rng.choice(members, size=count, replace=False))


def _fill_by_interpolation(agents: np.ndarray, anchors: np.ndarray,
                           anchor_states: np.ndarray, features: np.ndarray,
                           kappa: int, n_options: int, soft: np.ndarray,
                           hard: np.ndarray) -> None:
    diffs = features[agents][:, None, :] - features[anchors][None, :, :]
    dists = np.sqrt(np.einsum("ijk,ijk->ij", diffs, diffs))
    for row, agent in enumerate(agents):
        soft_vec, state, _ = interpolate(anchor_states, dists[row], anchors,
                                         kappa, n_options)
        soft[agent] = soft_vec
        hard[agent] = state


def run_baseline(kind: str, total_budget: int, population: Population,
                 graph: SocialGraph, scenario: Scenario, oracle: Oracle,
                 seed: int, *, m_core: int | None = None, kappa: int = 5,
                 initial_states: np.ndarray | None = None) -> Trajectory:
    if kind not in BASELINE_KINDS:
        raise ConfigurationError(f"unknown baseline kind {kind!r}; "
                                 f"expected one of {BASELINE_KINDS}")
    n = population.n
    n_options = scenario.n_options
    rounds = scenario.n_rounds
    if m_core is None:
        m_core = core_stratum_count(n, ScheduleConfig())
    assignment = partition(population.standardized, np.empty(0, dtype=int),
                           m_core, seed)
    sizes = assignment.sizes
    per_round = split_budget(total_budget, rounds)
    if min(per_round) < assignment.n_strata:
        raise ConfigurationError("per-round budget must cover one query per stratum")

    prev = (np.full(n, NO_STATE, dtype=int) if initial_states is None
            else np.asarray(initial_states, dtype=int))
    initial = prev.copy()
    hard_rounds: list[np.ndarray] = []
    reported_rounds: list[np.ndarray] = []

    for t in range(1, rounds + 1):
        counts = neighbor_counts_for_round(graph, prev, n_options)
        budgets = allocate_proportional(sizes, per_round[t - 1], minimum_one=True)
        hard = np.full(n, NO_STATE, dtype=int)
        soft = np.zeros((n, n_options))

        def _query(agents: np.ndarray) -> np.ndarray:
            contexts = [build_context(population, scenario, a, t, prev[a], counts)
                        for a in agents]
            decisions = oracle.query_batch(contexts, CATEGORY_CORE)
            states = np.array([d.state for d in decisions], dtype=int)
            hard[agents] = states
            soft[agents, states] = 1.0
            return states

        if kind in ("stratified-sampling", "cluster-assignment"):
            reported = np.zeros(n_options)
            for m in range(assignment.n_strata):
                members = assignment.members(m)
                sampled = _sample_members(members, int(budgets[m]), seed, t, m)
                states = _query(sampled)
                majority = _majority(states, n_options)
                rest = np.setdiff1d(members, sampled)
                hard[rest] = majority
                soft[rest, majority] = 1.0
                if kind == "stratified-sampling":
                    reported += (len(members) / n) * label_distribution(states, n_options)
            if kind == "cluster-assignment":
                reported = label_distribution(hard, n_options)
        elif kind == "label-propagation":
            for m in range(assignment.n_strata):
                members = assignment.members(m)
                budget_m = int(budgets[m])
                if budget_m >= len(members):
                    _query(members)
                    continue
                cell_states = prev[members]
                values, cell_sizes = np.unique(cell_states, return_counts=True)
                cell_alloc = allocate_proportional(cell_sizes, budget_m)
                anchors = []
                for pos, value in enumerate(values):
                    if cell_alloc[pos] == 0:
                        continue
                    cell_members = members[cell_states == value]
                    anchors.append(_sample_members(cell_members, int(cell_alloc[pos]),
                                                   seed, t, m, int(value) + 1))
                anchors = np.sort(np.concatenate(anchors))
                states = _query(anchors)
                rest = np.setdiff1d(members, anchors)
                if len(rest):
                    _fill_by_interpolation(rest, anchors, states,
                                           population.standardized, kappa,
                                           n_options, soft, hard)
            reported = soft.mean(axis=0)
        else:  # medoid-anchors
            for m in range(assignment.n_strata):
                members = assignment.members(m)
                budget_m = int(budgets[m])
                if budget_m >= len(members):
                    _query(members)
                    continue
                anchors = _medoid_anchors(members, budget_m, population.standardized,
                                          prev, n_options, seed, t, m)
                states = _query(anchors)
                rest = np.setdiff1d(members, anchors)
                if len(rest):
                    _fill_by_interpolation(rest, anchors, states,
                                           population.standardized, kappa,
                                           n_options, soft, hard)
            reported = soft.mean(axis=0)

        hard_rounds.append(hard)
        reported_rounds.append(reported)
        prev = hard

    return Trajectory(method=kind,
                      hard_by_round=np.stack(hard_rounds),
                      reported=np.stack(reported_rounds),
                      calls=oracle.ledger.snapshot(),
                      seeds={"run": int(seed)},
                      n_options=n_options,
                      initial_states=initial)


def _medoid_anchors(members: np.ndarray, budget: int, features: np.ndarray,
                    prev: np.ndarray, n_options: int, seed: int,
                    round_index: int, stratum: int) -> np.ndarray:
    """Nearest members to the centers of within-stratum mini-clusters built
    on features augmented with the previous-state one-hot."""
    one_hot = np.zeros((len(members), n_options))
    valid = prev[members] >= 0
    one_hot[np.flatnonzero(valid), prev[members][valid]] = 1.0
    augmented = np.hstack([features[members], one_hot])
    km_seed = int(keyed_rng(seed, BASELINE, round_index, stratum).integers(0, 2**31 - 1))
    model = MiniBatchKMeans(n_clusters=budget, init="k-means++", n_init=1,
                            max_iter=100, batch_size=min(4096, len(members)),
                            random_state=km_seed)
    labels = model.fit_predict(augmented)
    chosen: list[int] = []
    taken = np.zeros(len(members), dtype=bool)
    for c in range(budget):
        in_cluster = np.flatnonzero((labels == c) & ~taken)
        if len(in_cluster) == 0:
            continue
        deltas = augmented[in_cluster] - model.cluster_centers_[c]
        best = in_cluster[np.argmin(np.einsum("ij,ij->i", deltas, deltas))]
        chosen.append(int(members[best]))
        taken[best] = True
    # k-means can leave empty clusters; top up deterministically so the
    # per-round call accounting stays exact
    if len(chosen) < budget:
        remaining = members[~taken]
        order = np.argsort(remaining)
        need = budget - len(chosen)
        chosen.extend(int(a) for a in remaining[order[:need]])
    return np.sort(np.array(chosen, dtype=int))
