"""Shadow auditing: sampling design, residual-corrected estimator,
simplex projection, diagnostics, and residual-risk scores.

Audits query non-prototype core agents under the same context as rollout
calls.  Their labels never overwrite hard states; they enter only the
design-weighted residual correction of the reported distribution and the
per-stratum risk scores that steer next-round prototype budgets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DesignError
from .metrics import jsd, label_distribution
from .seeding import AUDIT_BRANCH, AUDIT_CELL, AUDIT_UNIFORM, keyed_rng

RARE_CELL_FRACTION = 0.05


def allocate_proportional(sizes: np.ndarray, total: int,
                          minimum_one: bool = False) -> np.ndarray:
    """Integer allocation proportional to sizes with largest-remainder
    rounding, capped at each size.  With ``minimum_one``, every nonzero
    size gets at least one slot when the total permits."""
    sizes = np.asarray(sizes, dtype=int)
    counts = np.zeros(len(sizes), dtype=int)
    nonempty = np.flatnonzero(sizes > 0)
    total = min(int(total), int(sizes.sum()))
    if total <= 0 or len(nonempty) == 0:
        return counts
    if minimum_one and total < len(nonempty):
        order = nonempty[np.lexsort((nonempty, -sizes[nonempty]))]
        counts[order[:total]] = 1
        return counts
    target = total * sizes / sizes.sum()
    counts = np.minimum(np.floor(target).astype(int), sizes)
    if minimum_one:
        counts[nonempty] = np.maximum(counts[nonempty], 1)
    remainder = total - counts.sum()
    if remainder > 0:
        frac = target - np.floor(target)
        order = np.lexsort((np.arange(len(sizes)), -frac))
        while remainder > 0:
            progressed = False
            for m in order:
                if remainder == 0:
                    break
                if counts[m] < sizes[m]:
                    counts[m] += 1
                    remainder -= 1
                    progressed = True
            if not progressed:
                break
    elif remainder < 0:
        # minimum-one floors overshot; release slots from the smallest
        # fractional parts that stay above the floor
        frac = target - np.floor(target)
        order = np.lexsort((np.arange(len(sizes)), frac))
        while remainder < 0:
            progressed = False
            for m in order:
                if remainder == 0:
                    break
                floor_m = 1 if (minimum_one and sizes[m] > 0) else 0
                if counts[m] > floor_m:
                    counts[m] -= 1
                    remainder += 1
                    progressed = True
            if not progressed:
                break
    return counts


@dataclass
class AuditDesign:
    """One round's audit sample with exact inclusion probabilities.

    ``frame_ids``/``psi_frame`` cover every correction-frame member;
    ``audit_ids``/``psi_audited`` the realized sample.  ``allocations``
    maps stratum -> audit count; ``cell_allocations`` maps stratum ->
    {predicted state -> draws} for the state-stratified branch.
    """

    frame_ids: np.ndarray
    psi_frame: np.ndarray
    audit_ids: np.ndarray
    psi_audited: np.ndarray
    allocations: dict[int, int]
    cell_allocations: dict[int, dict[int, int]]
    epsilon: float
    seed: int

    @property
    def size(self) -> int:
        return len(self.audit_ids)


def _stratum_cell_allocation(states: np.ndarray, a_m: int) -> dict[int, int]:
    """Deterministic allocation of a_m draws over predicted-state cells:
    proportional with largest remainder, then every rare nonempty cell
    (frame frequency < 0.05) is guaranteed one draw, donated from the
    largest allocations."""
    values, counts = np.unique(states, return_counts=True)
    alloc = allocate_proportional(counts, a_m)
    frame_size = len(states)
    rare = counts / frame_size < RARE_CELL_FRACTION
    for j in np.flatnonzero(rare):
        if alloc[j] >= 1:
            continue
        donors = np.flatnonzero(alloc > 1)
        if len(donors) == 0:
            donors = np.flatnonzero((alloc == 1) & ~rare)
        if len(donors) == 0:
            continue
        donor = donors[np.argmax(alloc[donors])]
        alloc[donor] -= 1
        alloc[j] += 1
    return {int(v): int(a) for v, a in zip(values, alloc)}


def sample_audit_set(frames: dict[int, np.ndarray], predicted: np.ndarray,
                     budget: int, epsilon: float, seed: int,
                     round_index: int) -> AuditDesign:
    """Draw the shadow-audit set (mixture design) and record exact
    inclusion probabilities.

    frames: stratum -> sorted correction-frame agent ids.
    predicted: (n,) current-round hard states (0-based).
    Per stratum, with probability 1-epsilon the sample is state-stratified
    over predicted-state cells (rare cells guaranteed a draw); with
    probability epsilon it is uniform over the stratum frame.  Either way
    psi is the exact mixture probability, clipped at 1.
    """
    if budget < 1:
        raise DesignError("audit budget must be >= 1")
    if not 0.0 < epsilon <= 1.0:
        raise DesignError("epsilon must be in (0, 1]")
    strata = sorted(frames.keys())
    frame_sizes = np.array([len(frames[m]) for m in strata], dtype=int)
    if frame_sizes.sum() == 0:
        empty = np.empty(0, dtype=int)
        return AuditDesign(frame_ids=empty, psi_frame=np.empty(0),
                           audit_ids=empty, psi_audited=np.empty(0),
                           allocations={}, cell_allocations={},
                           epsilon=epsilon, seed=seed)
    per_stratum = allocate_proportional(frame_sizes, budget, minimum_one=True)

    frame_ids_all: list[np.ndarray] = []
    psi_all: list[np.ndarray] = []
    audit_ids: list[np.ndarray] = []
    allocations: dict[int, int] = {}
    cell_allocations: dict[int, dict[int, int]] = {}
    for pos, m in enumerate(strata):
        frame = np.sort(np.asarray(frames[m], dtype=int))
        a_m = int(per_stratum[pos])
        allocations[m] = a_m
        if len(frame) == 0:
            continue
        states = predicted[frame]
        cell_alloc = _stratum_cell_allocation(states, a_m) if a_m > 0 else {}
        cell_allocations[m] = cell_alloc

        uniform_p = a_m / len(frame)
        psi = np.full(len(frame), epsilon * uniform_p)
        for value, a_cell in cell_alloc.items():
            members = states == value
            psi[members] += (1 - epsilon) * (a_cell / members.sum())
        psi = np.minimum(psi, 1.0)
        frame_ids_all.append(frame)
        psi_all.append(psi)

        if a_m == 0:
            continue
        use_stratified = keyed_rng(seed, AUDIT_BRANCH, round_index, m).random() < (1 - epsilon)
        if use_stratified:
            chosen = []
            for value in sorted(cell_alloc):
                a_cell = cell_alloc[value]
                if a_cell == 0:
                    continue
                cell_members = frame[states == value]
                rng = keyed_rng(seed, AUDIT_CELL, round_index, m, value)
                chosen.append(rng.choice(cell_members, size=a_cell, replace=False))
            picked = np.concatenate(chosen) if chosen else np.empty(0, dtype=int)
        else:
            rng = keyed_rng(seed, AUDIT_UNIFORM, round_index, m)
            picked = rng.choice(frame, size=a_m, replace=False)
        audit_ids.append(np.sort(picked))

    frame_ids = np.concatenate(frame_ids_all) if frame_ids_all else np.empty(0, dtype=int)
    psi_frame = np.concatenate(psi_all) if psi_all else np.empty(0)
    ids = np.sort(np.concatenate(audit_ids)) if audit_ids else np.empty(0, dtype=int)
    psi_by_id = dict(zip(frame_ids.tolist(), psi_frame.tolist()))
    psi_audited = np.array([psi_by_id[i] for i in ids.tolist()])
    return AuditDesign(frame_ids=frame_ids, psi_frame=psi_frame, audit_ids=ids,
                       psi_audited=psi_audited, allocations=allocations,
                       cell_allocations=cell_allocations, epsilon=epsilon, seed=seed)


def audit_correct(soft: np.ndarray, audit_ids: np.ndarray, audit_labels: np.ndarray,
                  psi: np.ndarray) -> np.ndarray:
    """Design-weighted residual-corrected estimate (unprojected).

    soft-ledger baseline plus inverse-probability-weighted residuals of
    the shadow labels; each residual sums to zero over options, so the
    output sums to one exactly.  Entries may be negative.
    """
    n, n_options = soft.shape
    estimate = soft.mean(axis=0)
    if len(audit_ids) == 0:
        return estimate
    psi = np.asarray(psi, dtype=float)
    if np.any(psi <= 0):
        raise DesignError("inclusion probabilities must be positive")
    one_hot = np.zeros((len(audit_ids), n_options))
    one_hot[np.arange(len(audit_ids)), np.asarray(audit_labels, dtype=int)] = 1.0
    residuals = (one_hot - soft[np.asarray(audit_ids, dtype=int)]) / psi[:, None]
    return estimate + residuals.sum(axis=0) / n


def project_simplex(vector: np.ndarray) -> np.ndarray:
    """Clip negatives and renormalize; all-zero clips fall back to uniform.
    Idempotent on probability vectors."""
    v = np.asarray(vector, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DesignError("simplex projection requires finite entries")
    clipped = np.clip(v, 0.0, None)
    total = clipped.sum()
    if total <= 0.0:
        return np.full(len(v), 1.0 / len(v))
    return clipped / total


@dataclass
class StratumDiagnostics:
    """Shadow-audit summaries for one stratum and round."""

    stratum: int
    n_audited: int
    mismatch_rate: float          # share of audits disagreeing with the hard state
    residual_variance: float      # summed per-option sample variance of residuals
    monitoring_jsd: float         # predicted vs shadow label distributions
    mean_support_distance: float  # mean over audits of mean distance to supports
    disagreement_slope: float     # mean support-label entropy over support distance
    rare_state_recall: float      # share of rare shadow labels matched by hard states


def compute_stratum_diagnostics(stratum: int, audited_ids: np.ndarray,
                                hard: np.ndarray, shadow_labels: np.ndarray,
                                soft: np.ndarray, support_distances: np.ndarray,
                                support_entropies: np.ndarray, n_options: int,
                                rare_threshold: float = 0.05) -> StratumDiagnostics:
    """Diagnostics over one stratum's audited agents.

    support_distances / support_entropies are per-audited-agent summaries
    of the interpolation supports (mean distance to, and base-2 entropy of
    the labels of, the agent's nearest queried prototypes).
    """
    ids = np.asarray(audited_ids, dtype=int)
    a = len(ids)
    if a < 1:
        raise DesignError("diagnostics need at least one audit")
    predicted = hard[ids]
    shadow = np.asarray(shadow_labels, dtype=int)
    mismatch = float(np.mean(predicted != shadow))

    one_hot = np.zeros((a, n_options))
    one_hot[np.arange(a), shadow] = 1.0
    residuals = one_hot - soft[ids]
    if a >= 2:
        residual_variance = float(np.sum(np.var(residuals, axis=0, ddof=1)))
    else:
        residual_variance = 0.0

    monitoring = jsd(label_distribution(predicted, n_options),
                     label_distribution(shadow, n_options))

    rho = float(np.mean(support_distances))
    slope = float(np.mean(support_entropies)) / (rho + 1e-6)

    counts = np.bincount(shadow, minlength=n_options)
    rare_labels = np.flatnonzero((counts > 0) & (counts / a < rare_threshold))
    rare_mask = np.isin(shadow, rare_labels)
    if rare_mask.any():
        recall = float(np.mean(predicted[rare_mask] == shadow[rare_mask]))
    else:
        recall = 1.0
    return StratumDiagnostics(stratum=stratum, n_audited=a, mismatch_rate=mismatch,
                              residual_variance=residual_variance,
                              monitoring_jsd=monitoring,
                              mean_support_distance=rho,
                              disagreement_slope=slope,
                              rare_state_recall=recall)


def risk_score(residual_variance: float, disagreement_slope: float,
               mean_support_distance: float, mismatch_rate: float,
               rare_state_recall: float, weight_distance: float = 1.0,
               weight_mismatch: float = 1.0, weight_recall: float = 1.0) -> float:
    """Residual-risk score from (already normalized) diagnostics."""
    return (residual_variance
            + weight_distance * disagreement_slope ** 2 * mean_support_distance ** 2
            + weight_mismatch * mismatch_rate ** 2
            + weight_recall * (1.0 - rare_state_recall) ** 2)


def compute_risk_scores(diagnostics: dict[int, StratumDiagnostics | None],
                        previous: np.ndarray, weight_distance: float = 1.0,
                        weight_mismatch: float = 1.0,
                        weight_recall: float = 1.0) -> np.ndarray:
    """Next-round risk scores for all strata.

    Each diagnostic is normalized by its cross-stratum per-round maximum
    (zero max gives 0); strata with no audits this round carry forward
    their previous score.
    """
    scores = np.asarray(previous, dtype=float).copy()
    audited = {m: d for m, d in diagnostics.items() if d is not None}
    if not audited:
        return scores

    def _norm(values: np.ndarray) -> np.ndarray:
        top = values.max()
        return values / top if top > 0 else np.zeros_like(values)

    strata = sorted(audited)
    variance = _norm(np.array([audited[m].residual_variance for m in strata]))
    slope = _norm(np.array([audited[m].disagreement_slope for m in strata]))
    rho = _norm(np.array([audited[m].mean_support_distance for m in strata]))
    mismatch = _norm(np.array([audited[m].mismatch_rate for m in strata]))
    recall = _norm(np.array([audited[m].rare_state_recall for m in strata]))
    for pos, m in enumerate(strata):
        scores[m] = risk_score(variance[pos], slope[pos], rho[pos], mismatch[pos],
                               recall[pos], weight_distance, weight_mismatch,
                               weight_recall)
    return scores
