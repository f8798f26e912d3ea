"""Sublinear scale schedules, tail scoring and routing, core strata.

All schedules share one baseline scale: below it the counts plateau at
their baseline values, above it they grow with sublinear exponents so
absolute counts grow while queried fractions shrink.  Tail agents are the
top robust-distance scores; the remaining agents are partitioned once into
core strata that stay fixed for the whole run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import MiniBatchKMeans

from .errors import ConfigurationError

RATE_PIECEWISE = "piecewise"   # plateau at baseline_rate below baseline_n
RATE_POWER = "power"           # pure power law at every scale (production form)
RATE_FIXED = "fixed"           # validation override

MAD_FLOOR = 1e-6


@dataclass(frozen=True)
class ScheduleConfig:
    """Scale-schedule parameters.

    baseline_n: scale at which the schedules are anchored.
    baseline_rate / rate_decay: prototype-rate schedule.
    rate_mode: 'piecewise' plateaus the rate below baseline_n; 'power'
      applies the decay law at every scale (capped at 1.0); 'fixed' uses
      ``fixed_rate`` everywhere.
    baseline_strata / strata_growth: core stratum-count schedule.
    tail_base_fraction / tail_growth: singleton-tail schedule.
    audit_base_fraction / audit_growth / audit_min: shadow-audit schedule.
    interp_support: nearest queried prototypes used per interpolation.
    """

    baseline_n: int = 5000
    baseline_rate: float = 0.15
    rate_decay: float = 0.6
    baseline_strata: int = 10
    strata_growth: float = 0.5
    tail_base_fraction: float = 0.05
    tail_growth: float = 0.4
    audit_base_fraction: float = 0.05
    audit_growth: float = 0.4
    audit_min: int = 1
    interp_support: int = 5
    rate_mode: str = RATE_PIECEWISE
    fixed_rate: float | None = None

    def __post_init__(self):
        for name in ("rate_decay", "strata_growth", "tail_growth", "audit_growth"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigurationError(f"{name} must be in (0, 1)")
        if not 0.0 < self.baseline_rate <= 1.0:
            raise ConfigurationError("baseline_rate must be in (0, 1]")
        if self.baseline_n < 1 or self.baseline_strata < 1 or self.audit_min < 1:
            raise ConfigurationError("counts must be >= 1")
        if self.interp_support < 1:
            raise ConfigurationError("interp_support must be >= 1")
        if self.rate_mode not in (RATE_PIECEWISE, RATE_POWER, RATE_FIXED):
            raise ConfigurationError(f"unknown rate_mode {self.rate_mode!r}")
        if self.rate_mode == RATE_FIXED and self.fixed_rate is None:
            raise ConfigurationError("rate_mode 'fixed' requires fixed_rate")
        if self.fixed_rate is not None and not 0.0 < self.fixed_rate <= 1.0:
            raise ConfigurationError("fixed_rate must be in (0, 1]")


def prototype_rate(n: int, cfg: ScheduleConfig) -> float:
    """Core prototype rate at scale n."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if cfg.rate_mode == RATE_FIXED:
        return float(cfg.fixed_rate)
    if cfg.rate_mode == RATE_POWER:
        return min(1.0, cfg.baseline_rate * (cfg.baseline_n / n) ** cfg.rate_decay)
    if n <= cfg.baseline_n:
        return cfg.baseline_rate
    return cfg.baseline_rate * (cfg.baseline_n / n) ** cfg.rate_decay


def core_stratum_count(n: int, cfg: ScheduleConfig) -> int:
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if n <= cfg.baseline_n:
        return cfg.baseline_strata
    return math.floor(cfg.baseline_strata * (n / cfg.baseline_n) ** cfg.strata_growth)


def tail_count(n: int, cfg: ScheduleConfig) -> int:
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    base = cfg.tail_base_fraction * cfg.baseline_n
    if n <= cfg.baseline_n:
        return math.ceil(base)
    return math.ceil(base * (n / cfg.baseline_n) ** cfg.tail_growth)


def audit_budget(n: int, cfg: ScheduleConfig) -> int:
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    growth = max(1.0, (n / cfg.baseline_n) ** cfg.audit_growth)
    return max(cfg.audit_min, math.floor(cfg.audit_base_fraction * cfg.baseline_n * growth))


def tail_scores(features: np.ndarray) -> np.ndarray:
    """Robust standardized distance from the coordinate-wise median.

    Per-column MAD is floored at 1e-6 for stability.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigurationError("features must be an (n>=2, d) matrix")
    med = np.median(x, axis=0)
    mad = np.median(np.abs(x - med), axis=0)
    mad = np.maximum(mad, MAD_FLOOR)
    return np.linalg.norm((x - med) / mad, axis=1)


def select_tails(scores: np.ndarray, count: int) -> np.ndarray:
    """Indices of the top ``count`` scores; ties go to the lower index."""
    n = scores.shape[0]
    count = min(count, n)
    order = np.lexsort((np.arange(n), -scores))
    return np.sort(order[:count])


@dataclass
class StrataAssignment:
    """Tail routing plus core-strata labels, fixed for a whole run.

    ``labels[i]`` is the stratum of agent i, or -1 for tail agents.
    """

    labels: np.ndarray          # (n,) int, -1 for tails
    tail_ids: np.ndarray        # sorted agent indices
    scores: np.ndarray          # (n,) tail scores
    centroids: np.ndarray       # (n_strata, d)
    seed: int

    def __post_init__(self):
        assert np.all(self.labels[self.tail_ids] == -1)
        core = np.flatnonzero(self.labels >= 0)
        assert len(core) + len(self.tail_ids) == len(self.labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def n_strata(self) -> int:
        return self.centroids.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels[self.labels >= 0], minlength=self.n_strata)

    def members(self, stratum: int) -> np.ndarray:
        return np.flatnonzero(self.labels == stratum)


def partition(features: np.ndarray, tail_ids: np.ndarray, m_core: int,
              seed: int, scores: np.ndarray | None = None) -> StrataAssignment:
    """Mini-batch k-means over non-tail agents' standardized features.

    k-means++ seeding, batch size min(4096, n_core), 100-iteration cap,
    deterministic per seed.  Strata are computed once before round 1.
    """
    x = np.asarray(features, dtype=float)
    n = x.shape[0]
    tail_ids = np.sort(np.asarray(tail_ids, dtype=int))
    if m_core < 1:
        raise ConfigurationError("m_core must be >= 1")
    core_mask = np.ones(n, dtype=bool)
    core_mask[tail_ids] = False
    core_ids = np.flatnonzero(core_mask)
    if len(core_ids) == 0:
        raise ConfigurationError("no non-tail agents to partition")
    if len(core_ids) < m_core:
        raise ConfigurationError(f"need >= {m_core} non-tail agents, have {len(core_ids)}")
    model = MiniBatchKMeans(n_clusters=m_core, init="k-means++", n_init=1,
                            max_iter=100, batch_size=min(4096, len(core_ids)),
                            random_state=seed)
    core_labels = model.fit_predict(x[core_ids])
    labels = np.full(n, -1, dtype=int)
    labels[core_ids] = core_labels
    if scores is None:
        scores = np.zeros(n)
    return StrataAssignment(labels=labels, tail_ids=tail_ids, scores=scores,
                            centroids=model.cluster_centers_.copy(), seed=seed)


def stratify(features: np.ndarray, cfg: ScheduleConfig, seed: int) -> StrataAssignment:
    """Tail scoring + routing + core partition for a population."""
    n = features.shape[0]
    scores = tail_scores(features)
    tails = select_tails(scores, tail_count(n, cfg))
    m_core = core_stratum_count(n, cfg)
    return partition(features, tails, m_core, seed, scores=scores)
