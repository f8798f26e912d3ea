"""Fixed small-world context graph and neighbor-state summaries.

The graph is built once per scale and shared by every rollout of that
scale; only the evolving neighbor-state summaries differ across methods.
Storage is a directed (n, degree) int32 context list — no dense adjacency
is ever materialized.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .seeding import GRAPH, keyed_rng


@dataclass
class SocialGraph:
    n: int
    degree: int
    p_rewire: float
    neighbors: np.ndarray  # (n, degree) int32 agent indices
    seed: int

    @property
    def checksum(self) -> int:
        return zlib.crc32(np.ascontiguousarray(self.neighbors).tobytes())

    def save(self, path) -> None:
        path = Path(path)
        np.save(path, self.neighbors)
        sidecar = {"n": self.n, "degree": self.degree, "p_rewire": self.p_rewire,
                   "seed": self.seed, "checksum": self.checksum}
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SocialGraph":
        path = Path(path)
        sidecar = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        neighbors = np.load(str(path) if str(path).endswith(".npy") else str(path) + ".npy")
        graph = cls(n=sidecar["n"], degree=sidecar["degree"], p_rewire=sidecar["p_rewire"],
                    neighbors=neighbors, seed=sidecar["seed"])
        if graph.checksum != sidecar["checksum"]:
            raise ConfigurationError("graph checksum mismatch")
        return graph


@dataclass(frozen=True)
class StateCounts:
    """Counts of a context row's previous-round states over the option set."""

    counts: np.ndarray  # (n_options,) ints summing to the context degree

    @property
    def fractions(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def build_ws_graph(n: int, degree: int, p_rewire: float, seed: int) -> SocialGraph:
    """Ring lattice with degree/2 neighbors per side; each right-side slot
    independently rewired with probability p_rewire to a uniform non-self,
    non-duplicate target (up to 100 attempts, then the ring target stays).

    Row layout: slots [0, degree/2) are left-side ring targets, slots
    [degree/2, degree) are right-side (possibly rewired) targets.
    """
    if degree % 2 != 0:
        raise ConfigurationError("context degree must be even")
    if degree >= n:
        raise ConfigurationError("context degree must be < n")
    if not 0.0 <= p_rewire <= 1.0:
        raise ConfigurationError("p_rewire must be in [0, 1]")
    half = degree // 2
    idx = np.arange(n)[:, None]
    offsets = np.arange(1, half + 1)[None, :]
    neighbors = np.empty((n, degree), dtype=np.int32)
    neighbors[:, :half] = (idx - offsets) % n
    neighbors[:, half:] = (idx + offsets) % n

    rng = keyed_rng(seed, GRAPH)
    rewire = rng.random((n, half)) < p_rewire
    for i in range(n):
        for slot in np.flatnonzero(rewire[i]):
            col = half + slot
            row = neighbors[i]
            for _ in range(100):
                target = int(rng.integers(0, n))
                if target != i and target not in row:
                    row[col] = target
                    break
    return SocialGraph(n=n, degree=degree, p_rewire=p_rewire, neighbors=neighbors, seed=seed)


def neighbor_count_matrix(graph: SocialGraph, hard_states: np.ndarray,
                          n_options: int) -> np.ndarray:
    """(n, n_options) matrix of previous-round neighbor state counts."""
    states = np.asarray(hard_states)
    if states.shape[0] != graph.n:
        raise ConfigurationError("hard_states length must equal graph.n")
    if states.min() < 0 or states.max() >= n_options:
        raise ConfigurationError("hard states outside option range")
    neighbor_states = states[graph.neighbors]  # (n, degree)
    flat = neighbor_states + n_options * np.arange(graph.n)[:, None]
    counts = np.bincount(flat.ravel(), minlength=graph.n * n_options)
    return counts.reshape(graph.n, n_options)


def neighbor_summary(graph: SocialGraph, hard_states, agent: int,
                     n_options: int) -> StateCounts:
    """Counts of one agent's context-row previous-round states."""
    states = np.asarray(hard_states)
    if states.shape[0] != graph.n:
        raise ConfigurationError("hard_states length must equal graph.n")
    row_states = states[graph.neighbors[agent]]
    if row_states.min() < 0 or row_states.max() >= n_options:
        raise ConfigurationError("hard states outside option range")
    return StateCounts(counts=np.bincount(row_states, minlength=n_options))
