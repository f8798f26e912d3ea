"""Agent populations: synthetic generation and seed-record expansion.

A population holds mixed-type raw feature columns plus a per-column
z-scored matrix used everywhere downstream (stratification, tail scoring,
interpolation, synthetic transition kernels).  Feature layouts are
declarative: a ``FeatureSpec`` lists categorical, ordinal, and continuous
fields, so no survey schema is hard-coded.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError
from .seeding import ANCHOR, EXPAND, POPULATION, keyed_rng

CATEGORICAL = "categorical"
ORDINAL = "ordinal"
CONTINUOUS = "continuous"


@dataclass(frozen=True)
class FeatureField:
    """One feature descriptor.

    categorical: ``support`` is the allowed value set (order fixes the
    numeric code).  ordinal: integers in [low, high].  continuous: floats,
    with [low, high] used as generation/clipping bounds.
    """

    name: str
    kind: str
    support: tuple = ()
    low: float = 0.0
    high: float = 0.0

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, ORDINAL, CONTINUOUS):
            raise ConfigurationError(f"unknown feature kind: {self.kind!r}")
        if self.kind == CATEGORICAL and len(self.support) == 0:
            raise ConfigurationError(f"feature {self.name!r}: empty categorical support")
        if self.kind == ORDINAL and int(self.low) > int(self.high):
            raise ConfigurationError(f"feature {self.name!r}: ordinal low > high")
        if self.kind == CONTINUOUS and not (np.isfinite(self.low) and np.isfinite(self.high)):
            raise ConfigurationError(f"feature {self.name!r}: continuous bounds must be finite")

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == CATEGORICAL:
            d["support"] = list(self.support)
        else:
            d["low"] = self.low
            d["high"] = self.high
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureField":
        return cls(name=d["name"], kind=d["kind"],
                   support=tuple(d.get("support", ())),
                   low=d.get("low", 0.0), high=d.get("high", 0.0))


def categorical(name: str, support) -> FeatureField:
    return FeatureField(name=name, kind=CATEGORICAL, support=tuple(support))


def ordinal(name: str, low: int, high: int) -> FeatureField:
    return FeatureField(name=name, kind=ORDINAL, low=int(low), high=int(high))


def continuous(name: str, low: float, high: float) -> FeatureField:
    return FeatureField(name=name, kind=CONTINUOUS, low=float(low), high=float(high))


@dataclass(frozen=True)
class FeatureSpec:
    fields: tuple[FeatureField, ...]

    def __post_init__(self):
        if len(self.fields) == 0:
            raise ConfigurationError("feature spec has no fields")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate feature names")

    @property
    def d(self) -> int:
        return len(self.fields)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    def field(self, name: str) -> FeatureField:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"fields": [f.to_dict() for f in self.fields]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls(fields=tuple(FeatureField.from_dict(f) for f in d["fields"]))

    @classmethod
    def load(cls, path) -> "FeatureSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class PerturbConfig:
    """Knobs for seed-record expansion.

    stickiness: probability a discrete value stays on the seed value
      (ordinal local kernel; also the categorical copy probability).
      The rest of the ordinal mass splits equally over the two adjacent
      categories, renormalized at range boundaries.
    shrinkage: weight pulling the local covariance toward the identity
      (estimated in standardized space, so identity = global scale).
    k_neighbors: same-cell seeds used for the local covariance.
    clip_quantiles: empirical quantile bounds for perturbed continuous
      values, taken over the seed pool.
    scale: multiplier on the continuous perturbation; 0 disables it.
    cell_feature: optional categorical feature naming the coarse cell
      used for neighbor search and categorical redraws.
    """

    stickiness: float = 0.6
    shrinkage: float = 0.3
    k_neighbors: int = 10
    clip_quantiles: tuple[float, float] = (0.01, 0.99)
    scale: float = 1.0
    cell_feature: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.stickiness <= 1.0:
            raise ConfigurationError("stickiness must be in [0, 1]")
        if not 0.0 <= self.shrinkage <= 1.0:
            raise ConfigurationError("shrinkage must be in [0, 1]")
        if self.k_neighbors < 1:
            raise ConfigurationError("k_neighbors must be >= 1")
        lo, hi = self.clip_quantiles
        if not 0.0 <= lo < hi <= 1.0:
            raise ConfigurationError("clip_quantiles must satisfy 0 <= lo < hi <= 1")
        if self.scale < 0:
            raise ConfigurationError("scale must be >= 0")


@dataclass
class Population:
    """n agents with raw mixed-type columns and a standardized matrix.

    ``numeric`` encodes raw values as floats (categorical -> support
    index, ordinal/continuous -> value).  ``standardized`` is ``numeric``
    z-scored per column with ddof=0; zero-variance columns standardize to
    all-zero and keep sd 0 in ``sds`` so de-standardization recovers the
    constant.
    """

    spec: FeatureSpec
    raw: dict[str, np.ndarray]
    numeric: np.ndarray
    standardized: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    seed: int
    anchors: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.standardized.shape[0]

    @property
    def d(self) -> int:
        return self.standardized.shape[1]

    def destandardize(self) -> np.ndarray:
        return self.standardized * self.sds + self.means

    def profile_text(self, agent: int) -> str:
        parts = [f"{f.name}: {self.raw[f.name][agent]}" for f in self.spec.fields]
        return "; ".join(parts)

    def save(self, path) -> None:
        path = Path(path)
        arrays = {"standardized": self.standardized, "numeric": self.numeric,
                  "means": self.means, "sds": self.sds}
        for j, f in enumerate(self.spec.fields):
            arrays[f"raw_{j}"] = self.raw[f.name]
        if self.anchors is not None:
            arrays["anchors"] = self.anchors
        np.savez(path, **arrays)
        sidecar = {"spec": self.spec.to_dict(), "seed": self.seed, "n": self.n}
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Population":
        path = Path(path)
        sidecar = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        spec = FeatureSpec.from_dict(sidecar["spec"])
        with np.load(path, allow_pickle=False) as data:
            raw = {f.name: data[f"raw_{j}"] for j, f in enumerate(spec.fields)}
            anchors = data["anchors"] if "anchors" in data.files else None
            return cls(spec=spec, raw=raw, numeric=data["numeric"],
                       standardized=data["standardized"], means=data["means"],
                       sds=data["sds"], seed=int(sidecar["seed"]), anchors=anchors)


def standardize_columns(numeric: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-column z-score (ddof=0); zero-variance columns map to zero."""
    means = numeric.mean(axis=0)
    sds = numeric.std(axis=0)
    std = np.zeros_like(numeric)
    nz = sds > 0
    std[:, nz] = (numeric[:, nz] - means[nz]) / sds[nz]
    return std, means, sds


def _encode_numeric(spec: FeatureSpec, raw: dict[str, np.ndarray]) -> np.ndarray:
    n = len(next(iter(raw.values())))
    numeric = np.zeros((n, spec.d))
    for j, f in enumerate(spec.fields):
        col = raw[f.name]
        if f.kind == CATEGORICAL:
            index = {v: i for i, v in enumerate(f.support)}
            numeric[:, j] = [index[v] for v in col.tolist()]
        else:
            numeric[:, j] = col.astype(float)
    return numeric


def _build_population(spec: FeatureSpec, raw: dict[str, np.ndarray], seed: int,
                      anchors: np.ndarray | None = None) -> Population:
    numeric = _encode_numeric(spec, raw)
    std, means, sds = standardize_columns(numeric)
    return Population(spec=spec, raw=raw, numeric=numeric, standardized=std,
                      means=means, sds=sds, seed=seed, anchors=anchors)


def generate_synthetic_population(spec: FeatureSpec, n: int, seed: int) -> Population:
    """Seeded synthetic population.

    categorical: values drawn from a seeded (Dirichlet) categorical
    distribution; ordinal: uniform over the range; continuous: mixture of
    two seeded Gaussians clipped to the declared bounds.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = keyed_rng(seed, POPULATION)
    raw: dict[str, np.ndarray] = {}
    for f in spec.fields:
        if f.kind == CATEGORICAL:
            probs = rng.dirichlet(np.ones(len(f.support)))
            codes = rng.choice(len(f.support), size=n, p=probs)
            raw[f.name] = np.asarray(f.support, dtype=object)[codes].astype(type(f.support[0]))
        elif f.kind == ORDINAL:
            raw[f.name] = rng.integers(int(f.low), int(f.high) + 1, size=n)
        else:
            span = f.high - f.low
            centers = rng.uniform(f.low, f.high, size=2)
            widths = rng.uniform(0.05, 0.2, size=2) * max(span, 1e-12)
            mix = rng.uniform(0.25, 0.75)
            pick = rng.random(n) < mix
            values = np.where(pick,
                              rng.normal(centers[0], widths[0], size=n),
                              rng.normal(centers[1], widths[1], size=n))
            raw[f.name] = np.clip(values, f.low, f.high)
    return _build_population(spec, raw, seed)


def read_seed_csv(path, spec: FeatureSpec) -> list[dict]:
    """Read seed records from CSV; header must cover the spec names."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [name for name in spec.names if name not in header]
        if missing:
            raise ConfigurationError(f"seed CSV missing columns: {missing}")
        return [dict(row) for row in reader]


def validate_records(records: list[dict], spec: FeatureSpec) -> dict[str, np.ndarray]:
    """Parse and validate seed records column-wise.

    Values must lie on the declared supports/ranges.  Empty continuous
    cells are allowed and map to numeric 0.0 (degenerate-code handling);
    empty or out-of-support discrete cells are ingestion errors.
    """
    if not records:
        raise ConfigurationError("seed records are empty")
    columns: dict[str, list] = {f.name: [] for f in spec.fields}
    for i, row in enumerate(records):
        for f in spec.fields:
            value = row.get(f.name)
            text = "" if value is None else str(value).strip()
            if f.kind == CATEGORICAL:
                matched = None
                for v in f.support:
                    if value == v or text == str(v):
                        matched = v
                        break
                if matched is None:
                    raise IngestionError(i, f"{f.name}={value!r} not in categorical support")
                columns[f.name].append(matched)
            elif f.kind == ORDINAL:
                try:
                    iv = int(float(text))
                except (TypeError, ValueError):
                    raise IngestionError(i, f"{f.name}={value!r} is not an integer")
                if not int(f.low) <= iv <= int(f.high):
                    raise IngestionError(i, f"{f.name}={iv} outside [{int(f.low)}, {int(f.high)}]")
                columns[f.name].append(iv)
            else:
                if text == "":
                    columns[f.name].append(0.0)
                    continue
                try:
                    fv = float(text)
                except (TypeError, ValueError):
                    raise IngestionError(i, f"{f.name}={value!r} is not a number")
                if not np.isfinite(fv):
                    raise IngestionError(i, f"{f.name}={fv} is not finite")
                columns[f.name].append(fv)
    out = {}
    for f in spec.fields:
        if f.kind == CATEGORICAL:
            out[f.name] = np.array(columns[f.name], dtype=type(f.support[0]))
        elif f.kind == ORDINAL:
            out[f.name] = np.array(columns[f.name], dtype=int)
        else:
            out[f.name] = np.array(columns[f.name], dtype=float)
    return out


def _ordinal_kernel_step(rng, value: int, low: int, high: int, stickiness: float) -> int:
    moves = [value, value - 1, value + 1]
    weights = [stickiness, (1.0 - stickiness) / 2.0, (1.0 - stickiness) / 2.0]
    feasible = [(m, w) for m, w in zip(moves, weights) if low <= m <= high]
    total = sum(w for _, w in feasible)
    probs = [w / total for _, w in feasible]
    pick = rng.choice(len(feasible), p=probs)
    return feasible[pick][0]


def expand_from_seeds(records: list[dict], spec: FeatureSpec, target_n: int,
                      perturb: PerturbConfig, seed: int) -> Population:
    """Expand seed records to ``target_n`` agents by anchored perturbation.

    The first ``len(records)`` agents are the seed records themselves; the
    remainder are anchored to seeds drawn with replacement and perturbed
    type-aware: categorical copy-or-redraw from same-cell marginals,
    ordinal local kernel clipped to range, continuous Gaussian steps in
    standardized space with a shrinkage local covariance, clipped to
    empirical quantile bounds.
    """
    seed_cols = validate_records(records, spec)
    n_seeds = len(records)
    if target_n < n_seeds:
        raise ConfigurationError("target_n must be >= number of seed records")

    anchor_rng = keyed_rng(seed, ANCHOR)
    extra = target_n - n_seeds
    drawn = anchor_rng.integers(0, n_seeds, size=extra) if extra else np.empty(0, dtype=int)
    anchors = np.concatenate([np.arange(n_seeds), drawn]).astype(int)

    seed_numeric = _encode_numeric(spec, seed_cols)
    seed_std, pool_means, pool_sds = standardize_columns(seed_numeric)
    cont_idx = [j for j, f in enumerate(spec.fields) if f.kind == CONTINUOUS]
    lo_q, hi_q = perturb.clip_quantiles
    clip_lo = {j: np.quantile(seed_std[:, j], lo_q) for j in cont_idx}
    clip_hi = {j: np.quantile(seed_std[:, j], hi_q) for j in cont_idx}

    if perturb.cell_feature is not None:
        cell_field = spec.field(perturb.cell_feature)
        if cell_field.kind != CATEGORICAL:
            raise ConfigurationError("cell_feature must name a categorical feature")
        cell_values = seed_cols[perturb.cell_feature]
        cells = {v: np.flatnonzero(cell_values == v) for v in cell_field.support}
    else:
        cells = {None: np.arange(n_seeds)}
        cell_values = None

    rng = keyed_rng(seed, EXPAND)
    out_cols = {f.name: list(seed_cols[f.name][: n_seeds]) for f in spec.fields}

    for a in drawn:
        cell_key = cell_values[a] if cell_values is not None else None
        cell_members = cells[cell_key]
        if len(cell_members) < 2:
            cell_members = np.arange(n_seeds)

        row: dict[str, object] = {}
        for j, f in enumerate(spec.fields):
            seed_value = seed_cols[f.name][a]
            if f.kind == CATEGORICAL:
                if rng.random() < perturb.stickiness:
                    row[f.name] = seed_value
                else:
                    row[f.name] = seed_cols[f.name][rng.choice(cell_members)]
            elif f.kind == ORDINAL:
                if perturb.stickiness >= 1.0:
                    row[f.name] = int(seed_value)
                else:
                    row[f.name] = _ordinal_kernel_step(
                        rng, int(seed_value), int(f.low), int(f.high), perturb.stickiness)
        if cont_idx:
            if perturb.scale <= 0:
                for j in cont_idx:
                    row[spec.fields[j].name] = float(seed_cols[spec.fields[j].name][a])
            else:
                base = seed_std[a, cont_idx]
                k = min(perturb.k_neighbors, len(cell_members))
                deltas = seed_std[cell_members] - seed_std[a]
                order = np.argsort(np.einsum("ij,ij->i", deltas, deltas), kind="stable")
                neighbors = seed_std[cell_members[order[:k]]][:, cont_idx]
                if len(neighbors) >= 2:
                    local = np.atleast_2d(np.cov(neighbors, rowvar=False, ddof=1))
                else:
                    local = np.eye(len(cont_idx))
                cov = (1 - perturb.shrinkage) * local + perturb.shrinkage * np.eye(len(cont_idx))
                chol = np.linalg.cholesky(cov + 1e-9 * np.eye(len(cont_idx)))
                step = perturb.scale * chol @ rng.standard_normal(len(cont_idx))
                new_std = base + step
                for pos, j in enumerate(cont_idx):
                    clipped = float(np.clip(new_std[pos], clip_lo[j], clip_hi[j]))
                    row[spec.fields[j].name] = clipped * pool_sds[j] + pool_means[j]
        for f in spec.fields:
            out_cols[f.name].append(row[f.name])

    raw = {}
    for f in spec.fields:
        if f.kind == CATEGORICAL:
            raw[f.name] = np.array(out_cols[f.name], dtype=type(f.support[0]))
        elif f.kind == ORDINAL:
            raw[f.name] = np.array(out_cols[f.name], dtype=int)
        else:
            raw[f.name] = np.array(out_cols[f.name], dtype=float)
    return _build_population(spec, raw, seed, anchors=anchors)
