"""Distribution metrics and interval estimators for categorical outcomes."""

from __future__ import annotations

from statistics import NormalDist

import numpy as np

from .seeding import BOOTSTRAP, keyed_rng


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in bits (base-2 logs, 0*log 0 = 0).

    Bounded in [0, 1]; symmetric; 0 iff p == q.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)

    def _kl(a: np.ndarray, b: np.ndarray) -> float:
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)


def exact_match(states_a, states_b) -> float:
    """Fraction of aligned agents whose hard states agree."""
    a = np.asarray(states_a)
    b = np.asarray(states_b)
    if a.shape != b.shape:
        raise ValueError(f"misaligned agent sets: {a.shape} vs {b.shape}")
    return float(np.mean(a == b))


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1 or not 0 <= successes <= trials:
        raise ValueError(f"invalid counts: {successes}/{trials}")
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    p_hat = successes / trials
    denom = 1.0 + z * z / trials
    center = (p_hat + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p_hat * (1 - p_hat) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def label_distribution(labels, n_options: int) -> np.ndarray:
    """Empirical distribution of 0-based labels over n_options categories."""
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels, minlength=n_options).astype(float)
    return counts / counts.sum()


def bootstrap_jsd_ci(method_labels, reference_labels, n_options: int,
                     resamples: int = 1000, confidence: float = 0.95,
                     seed: int = 0) -> tuple[float, float]:
    """Percentile interval for the JSD between two empirical label
    distributions, via a paired nonparametric bootstrap over agents."""
    if resamples < 100:
        raise ValueError("resamples must be >= 100")
    a = np.asarray(method_labels, dtype=int)
    b = np.asarray(reference_labels, dtype=int)
    if a.shape != b.shape:
        raise ValueError("paired labels must be aligned")
    n = a.shape[0]
    rng = keyed_rng(seed, BOOTSTRAP)
    values = np.empty(resamples)
    for r in range(resamples):
        idx = rng.integers(0, n, size=n)
        values[r] = jsd(label_distribution(a[idx], n_options),
                        label_distribution(b[idx], n_options))
    lo_q = (1 - confidence) / 2
    return (float(np.quantile(values, lo_q)), float(np.quantile(values, 1 - lo_q)))
