"""Rollout engine: residual-aware budget allocation, prototype selection,
local-response-surface propagation, shadow auditing, and ledger upkeep.

Each round queries only budgeted core prototypes, the fixed singleton-tail
set, and shadow-audit agents.  Non-prototype core agents receive soft
vectors interpolated from the nearest queried prototypes in their stratum;
tail agents are never interpolation supports and never receive
interpolated states.  Rounds are strictly sequential; all within-round
merges are keyed by agent index, so results are independent of query
completion order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import audit as audit_mod
from .errors import ConfigurationError, OracleError, ProtosimError
from .oracle import (CATEGORY_AUDIT, CATEGORY_CORE, CATEGORY_TAIL, Decision,
                     Oracle, PromptContext)
from .population import Population
from .scenario import Scenario
from .seeding import PROTOTYPES, keyed_rng
from .socialgraph import SocialGraph, neighbor_count_matrix
from .stratification import (ScheduleConfig, StrataAssignment, audit_budget,
                             prototype_rate, stratify)

DISTANCE_EPS = 1e-6
NO_STATE = -1  # sentinel for "no previous state" in hard-state arrays


@dataclass(frozen=True)
class EngineConfig:
    """Run-level knobs beyond the scale schedules."""

    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    risk_stabilizer: float = 1e-6          # tau in the allocation weights
    weight_distance: float = 1.0
    weight_mismatch: float = 1.0
    weight_recall: float = 1.0
    audit_epsilon: float = 0.1
    rare_threshold: float = 0.05
    adaptive_allocation: bool = True       # False: size-proportional only
    selection: str = "uniform"             # or "medoid": nearest-to-centroid first
    audit_enabled: bool = True

    def __post_init__(self):
        if self.risk_stabilizer <= 0:
            raise ConfigurationError("risk_stabilizer must be positive")
        if self.selection not in ("uniform", "medoid"):
            raise ConfigurationError("selection must be 'uniform' or 'medoid'")
        if not 0.0 < self.audit_epsilon <= 1.0:
            raise ConfigurationError("audit_epsilon must be in (0, 1]")


def allocate_budgets(b_core: int, sizes, risks, tau: float) -> np.ndarray:
    """Integer per-stratum prototype budgets.

    Continuous weights |C_m| * sqrt(risk + tau) normalized to b_core;
    integerized by flooring with a minimum of one per nonempty stratum,
    capping at stratum size, then distributing the remaining slots by
    largest fractional part (overflow rolls to the next largest).  When
    b_core cannot cover one per stratum, the largest-weight strata get the
    singles (documented degradation).
    """
    sizes = np.asarray(sizes, dtype=int)
    risks = np.asarray(risks, dtype=float)
    if tau <= 0:
        raise ConfigurationError("tau must be positive")
    if np.any(sizes < 0) or np.any(risks < 0):
        raise ConfigurationError("sizes and risks must be nonnegative")
    counts = np.zeros(len(sizes), dtype=int)
    nonempty = np.flatnonzero(sizes > 0)
    if len(nonempty) == 0 or b_core <= 0:
        return counts
    weights = sizes * np.sqrt(risks + tau)
    if b_core < len(nonempty):
        order = nonempty[np.lexsort((nonempty, -weights[nonempty]))]
        counts[order[:b_core]] = 1
        return counts
    target_total = min(int(b_core), int(sizes.sum()))
    continuous = b_core * weights / weights.sum()
    counts = np.minimum(np.floor(continuous).astype(int), sizes)
    counts[nonempty] = np.maximum(counts[nonempty], 1)
    deficit = target_total - counts.sum()
    if deficit > 0:
        frac = continuous - np.floor(continuous)
        order = np.lexsort((np.arange(len(sizes)), -frac))
        while deficit > 0:
            progressed = False
            for m in order:
                if deficit == 0:
                    break
                if sizes[m] > 0 and counts[m] < sizes[m]:
                    counts[m] += 1
                    deficit -= 1
                    progressed = True
            if not progressed:
                break
    return counts


def select_prototypes(members: np.ndarray, budget: int, round_index: int,
                      stratum: int, seed: int, *, features: np.ndarray | None = None,
                      centroid: np.ndarray | None = None,
                      medoid_first: bool = False) -> np.ndarray:
    """Prototype set for one stratum: a uniform draw without replacement
    from an RNG keyed by (seed, round, stratum), or the nearest-to-centroid
    members when medoid selection is enabled."""
    members = np.asarray(members, dtype=int)
    if budget > len(members):
        raise ConfigurationError("budget exceeds stratum size")
    if budget == len(members):
        return np.sort(members)
    if medoid_first:
        deltas = features[members] - centroid
        dist = np.einsum("ij,ij->i", deltas, deltas)
        order = np.lexsort((members, dist))
        return np.sort(members[order[:budget]])
    rng = keyed_rng(seed, PROTOTYPES, round_index, stratum)
    return np.sort(rng.choice(members, size=budget, replace=False))


def interpolate(support_options: np.ndarray, support_distances: np.ndarray,
                support_ids: np.ndarray, kappa: int,
                n_options: int) -> tuple[np.ndarray, int, np.ndarray]:
    """Local response surface for one agent.

    Takes the kappa nearest queried prototypes (ties by lower prototype
    id), weights them by normalized inverse distance (d + 1e-6)^-1, and
    returns (soft vector, hard state, chosen support positions).  The hard
    state is the argmax with lowest-option-index tie-break.
    """
    if len(support_ids) == 0:
        raise ProtosimError("interpolation requires at least one queried prototype")
    order = np.lexsort((support_ids, support_distances))[:kappa]
    weights = 1.0 / (support_distances[order] + DISTANCE_EPS)
    weights = weights / weights.sum()
    soft = np.zeros(n_options)
    np.add.at(soft, np.asarray(support_options, dtype=int)[order], weights)
    return soft, int(np.argmax(soft)), order


@dataclass
class RoundResult:
    round_index: int
    budgets: np.ndarray                 # per-stratum prototype budgets
    prototype_ids: np.ndarray
    tail_ids: np.ndarray
    hard: np.ndarray                    # (n,) post-round hard states
    soft: np.ndarray                    # (n, K) soft reporting ledger
    design: audit_mod.AuditDesign
    audit_labels: np.ndarray            # 0-based shadow labels, aligned with design.audit_ids
    unprojected: np.ndarray
    projected: np.ndarray
    diagnostics: dict[int, audit_mod.StratumDiagnostics | None]
    risks_next: np.ndarray
    calls: dict[str, int]
    interpolated_ids: np.ndarray        # frame agents (received interpolation)
    support_ids: np.ndarray             # (F, kappa) prototype ids, -1 padded
    support_distances: np.ndarray       # (F, kappa), NaN padded

    def support_map(self) -> dict[int, np.ndarray]:
        return {int(agent): row[row >= 0]
                for agent, row in zip(self.interpolated_ids, self.support_ids)}


def build_context(population: Population, scenario: Scenario, agent: int,
                  round_index: int, prev_state: int,
                  neighbor_counts: np.ndarray | None) -> PromptContext:
    """Prompt context for one agent; prev_state uses the NO_STATE sentinel."""
    return PromptContext(
        agent_id=int(agent),
        round_index=round_index,
        stage_text=scenario.stages[round_index - 1],
        options=scenario.options,
        features_std=population.standardized[agent],
        profile=population.profile_text(agent),
        prev_state=None if prev_state == NO_STATE else int(prev_state),
        neighbor_counts=None if neighbor_counts is None else neighbor_counts[agent],
    )


def neighbor_counts_for_round(graph: SocialGraph, prev_hard: np.ndarray,
                              n_options: int) -> np.ndarray | None:
    """Neighbor summaries from previous-round hard states; None at round 1
    when no initial states exist.  All agents' states (tails included)
    feed the summaries."""
    if np.any(prev_hard == NO_STATE):
        return None
    return neighbor_count_matrix(graph, prev_hard, n_options)


def run_round(*, round_index: int, population: Population, graph: SocialGraph,
              scenario: Scenario, oracle: Oracle, assignment: StrataAssignment,
              prev_hard: np.ndarray, risks_prev: np.ndarray, cfg: EngineConfig,
              run_seed: int, audit_seed: int) -> RoundResult:
    """One rollout round (propagation + shadow audit)."""
    n = population.n
    n_options = scenario.n_options
    kappa = cfg.schedule.interp_support
    counts = neighbor_counts_for_round(graph, prev_hard, n_options)

    b_core = int(np.ceil(prototype_rate(n, cfg.schedule) * n))
    sizes = assignment.sizes
    risks = risks_prev if cfg.adaptive_allocation else np.ones_like(risks_prev)
    budgets = allocate_budgets(b_core, sizes, risks, cfg.risk_stabilizer)

    prototype_sets: dict[int, np.ndarray] = {}
    for m in range(assignment.n_strata):
        members = assignment.members(m)
        if budgets[m] == 0:
            prototype_sets[m] = np.empty(0, dtype=int)
            continue
        prototype_sets[m] = select_prototypes(
            members, int(budgets[m]), round_index, m, run_seed,
            features=population.standardized, centroid=assignment.centroids[m],
            medoid_first=(cfg.selection == "medoid"))
    prototype_ids = (np.sort(np.concatenate([p for p in prototype_sets.values()]))
                     if prototype_sets else np.empty(0, dtype=int))
    tail_ids = assignment.tail_ids

    hard = np.full(n, NO_STATE, dtype=int)
    soft = np.zeros((n, n_options))

    def _query_block(agents: np.ndarray, category: str) -> None:
        contexts = [build_context(population, scenario, a, round_index,
                                  prev_hard[a], counts) for a in agents]
        for agent, decision in zip(agents, oracle.query_batch(contexts, category)):
            hard[agent] = decision.state
            soft[agent, decision.state] = 1.0

    _query_block(prototype_ids, CATEGORY_CORE)
    _query_block(tail_ids, CATEGORY_TAIL)

    interpolated: list[int] = []
    support_id_rows: list[np.ndarray] = []
    support_dist_rows: list[np.ndarray] = []
    support_entropy: dict[int, float] = {}
    support_mean_dist: dict[int, float] = {}
    frames: dict[int, np.ndarray] = {}
    for m in range(assignment.n_strata):
        members = assignment.members(m)
        protos = prototype_sets[m]
        frame = np.setdiff1d(members, protos, assume_unique=False)
        frames[m] = frame
        if len(frame) == 0:
            continue
        if len(protos) == 0:
            raise ProtosimError(f"stratum {m} has frame members but no prototypes")
        diffs = (population.standardized[frame][:, None, :]
                 - population.standardized[protos][None, :, :])
        dists = np.sqrt(np.einsum("ijk,ijk->ij", diffs, diffs))
        proto_options = hard[protos]
        for row, agent in enumerate(frame):
            soft_vec, state, chosen = interpolate(proto_options, dists[row],
                                                  protos, kappa, n_options)
            soft[agent] = soft_vec
            hard[agent] = state
            interpolated.append(int(agent))
            ids_row = np.full(kappa, -1, dtype=int)
            dist_row = np.full(kappa, np.nan)
            ids_row[: len(chosen)] = protos[chosen]
            dist_row[: len(chosen)] = dists[row][chosen]
            support_id_rows.append(ids_row)
            support_dist_rows.append(dist_row)
            support_mean_dist[int(agent)] = float(np.mean(dists[row][chosen]))
            dist_labels = np.bincount(proto_options[chosen], minlength=n_options)
            p = dist_labels[dist_labels > 0] / dist_labels.sum()
            support_entropy[int(agent)] = float(-(p * np.log2(p)).sum())

    interpolated_ids = np.asarray(interpolated, dtype=int)
    support_ids = (np.vstack(support_id_rows) if support_id_rows
                   else np.empty((0, kappa), dtype=int))
    support_distances = (np.vstack(support_dist_rows) if support_dist_rows
                         else np.empty((0, kappa)))

    # shadow audit: same context as rollout calls, labels never overwrite states
    if cfg.audit_enabled:
        budget = audit_budget(n, cfg.schedule)
        design = audit_mod.sample_audit_set(frames, hard, budget, cfg.audit_epsilon,
                                            audit_seed, round_index)
    else:
        empty = np.empty(0, dtype=int)
        design = audit_mod.AuditDesign(frame_ids=empty, psi_frame=np.empty(0),
                                       audit_ids=empty, psi_audited=np.empty(0),
                                       allocations={}, cell_allocations={},
                                       epsilon=cfg.audit_epsilon, seed=audit_seed)
    audit_labels = np.empty(0, dtype=int)
    if design.size > 0:
        contexts = [build_context(population, scenario, a, round_index,
                                  prev_hard[a], counts) for a in design.audit_ids]
        decisions = oracle.query_batch(contexts, CATEGORY_AUDIT)
        audit_labels = np.array([d.state for d in decisions], dtype=int)

    unprojected = audit_mod.audit_correct(soft, design.audit_ids, audit_labels,
                                          design.psi_audited)
    projected = audit_mod.project_simplex(unprojected)

    diagnostics: dict[int, audit_mod.StratumDiagnostics | None] = {}
    stratum_of = assignment.labels
    for m in range(assignment.n_strata):
        mask = stratum_of[design.audit_ids] == m if design.size else np.empty(0, dtype=bool)
        ids_m = design.audit_ids[mask] if design.size else np.empty(0, dtype=int)
        if len(ids_m) == 0:
            diagnostics[m] = None
            continue
        diagnostics[m] = audit_mod.compute_stratum_diagnostics(
            m, ids_m, hard, audit_labels[mask], soft,
            np.array([support_mean_dist[i] for i in ids_m.tolist()]),
            np.array([support_entropy[i] for i in ids_m.tolist()]),
            n_options, cfg.rare_threshold)
    risks_next = audit_mod.compute_risk_scores(
        diagnostics, risks_prev, cfg.weight_distance, cfg.weight_mismatch,
        cfg.weight_recall)

    calls = {"core": int(len(prototype_ids)), "tail": int(len(tail_ids)),
             "audit": int(design.size)}
    return RoundResult(round_index=round_index, budgets=budgets,
                       prototype_ids=prototype_ids, tail_ids=tail_ids,
                       hard=hard, soft=soft, design=design,
                       audit_labels=audit_labels, unprojected=unprojected,
                       projected=projected, diagnostics=diagnostics,
                       risks_next=risks_next, calls=calls,
                       interpolated_ids=interpolated_ids,
                       support_ids=support_ids,
                       support_distances=support_distances)


@dataclass
class SimulationResult:
    rounds: list[RoundResult]
    assignment: StrataAssignment
    initial_states: np.ndarray
    seeds: dict[str, int]
    ledger: dict

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    def hard_by_round(self) -> np.ndarray:
        return np.stack([r.hard for r in self.rounds])

    def total_calls(self) -> int:
        return int(sum(sum(r.calls.values()) for r in self.rounds))


def run_simulation(population: Population, graph: SocialGraph, scenario: Scenario,
                   oracle: Oracle, cfg: EngineConfig, seed: int, *,
                   audit_seed: int | None = None,
                   initial_states: np.ndarray | None = None,
                   assignment: StrataAssignment | None = None,
                   writer=None, resume_state: dict | None = None,
                   stop_after_round: int | None = None) -> SimulationResult:
    """Stratify once, then run every scenario stage in order.

    ``writer`` (see runio.RunWriter) persists round artifacts and
    checkpoints; ``resume_state`` continues an interrupted run from its
    last completed round and reproduces the uninterrupted trajectory
    bit-for-bit because every draw is keyed by (seed, round, purpose).
    """
    if population.n != graph.n:
        raise ConfigurationError("population and graph sizes differ")
    audit_seed = seed + 1 if audit_seed is None else audit_seed
    if initial_states is None:
        initial = np.full(population.n, NO_STATE, dtype=int)
    else:
        initial = np.asarray(initial_states, dtype=int)
        if initial.shape != (population.n,):
            raise ConfigurationError("initial_states must have one entry per agent")
    if assignment is None:
        assignment = stratify(population.standardized, cfg.schedule, seed)
    if writer is not None and resume_state is None:
        writer.write_strata(assignment)
        writer.write_initial(initial)

    first_round = 1
    prev_hard = initial.copy()
    risks = np.ones(assignment.n_strata)
    rounds: list[RoundResult] = []
    if resume_state is not None:
        first_round = int(resume_state["round"]) + 1
        prev_hard = np.asarray(resume_state["hard"], dtype=int)
        risks = np.asarray(resume_state["risks"], dtype=float)

    seeds = {"run": int(seed), "audit": int(audit_seed), "population": int(population.seed),
             "graph": int(graph.seed)}
    last_round = scenario.n_rounds if stop_after_round is None else min(
        stop_after_round, scenario.n_rounds)
    for t in range(first_round, last_round + 1):
        try:
            result = run_round(round_index=t, population=population, graph=graph,
                               scenario=scenario, oracle=oracle, assignment=assignment,
                               prev_hard=prev_hard, risks_prev=risks, cfg=cfg,
                               run_seed=seed, audit_seed=audit_seed)
        except OracleError:
            # previously completed rounds already checkpointed; resume restarts here
            raise
        rounds.append(result)
        prev_hard = result.hard
        risks = result.risks_next
        if writer is not None:
            writer.write_round(result)
            writer.write_checkpoint(result)
    ledger = oracle.ledger.snapshot()
    sim = SimulationResult(rounds=rounds, assignment=assignment, initial_states=initial,
                           seeds=seeds, ledger=ledger)
    if writer is not None:
        writer.finalize(sim)
    return sim
