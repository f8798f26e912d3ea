"""Run artifacts: per-round JSONL records, binary state snapshots,
checkpoints, and the final summary.

Layout of a run directory:

    config.snapshot.txt      resolved flat config keys
    strata.npz               labels, tail ids, scores, centroids
    rounds.jsonl             one record per completed round
    states/round_0001.npz    hard/soft ledgers and interpolation supports
    checkpoint.npz           last completed round (resume point)
    summary.json             totals and per-round estimates (no timestamps)

Summaries are rebuilt from rounds.jsonl, so an interrupted-and-resumed run
produces byte-identical output.  Resume refuses to continue when the
stored config hash differs from the current one.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatch, ConfigurationError
from .stratification import StrataAssignment


def config_hash(config_text: str) -> str:
    canonical = "\n".join(sorted(line.strip() for line in config_text.splitlines()
                                 if line.strip() and not line.strip().startswith("#")))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def round_record(result) -> dict:
    """JSONL record for one round (audit ids plus their inclusion
    probabilities, allocation counts, and both estimate vectors)."""
    diags = {}
    for m, d in result.diagnostics.items():
        if d is None:
            continue
        diags[str(m)] = {"n_audited": d.n_audited, "mismatch_rate": d.mismatch_rate,
                         "residual_variance": d.residual_variance,
                         "monitoring_jsd": d.monitoring_jsd,
                         "mean_support_distance": d.mean_support_distance,
                         "disagreement_slope": d.disagreement_slope,
                         "rare_state_recall": d.rare_state_recall}
    record = {
        "round": result.round_index,
        "budgets": result.budgets,
        "prototype_ids": result.prototype_ids,
        "tail_ids": result.tail_ids,
        "audit_ids": result.design.audit_ids,
        "audit_psi": result.design.psi_audited,
        "audit_labels": result.audit_labels,
        "audit_allocations": result.design.allocations,
        "audit_cell_allocations": result.design.cell_allocations,
        "unprojected": result.unprojected,
        "projected": result.projected,
        "calls": result.calls,
        "risk_scores": result.risks_next,
        "diagnostics": diags,
    }
    return _jsonable(record)


class RunWriter:
    def __init__(self, out_dir, config_text: str, seeds: dict, meta: dict | None = None):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "states").mkdir(exist_ok=True)
        self.config_text = config_text
        self.hash = config_hash(config_text)
        self.seeds = dict(seeds)
        self.meta = dict(meta or {})
        (self.dir / "config.snapshot.txt").write_text(config_text, encoding="utf-8")

    def write_strata(self, assignment: StrataAssignment) -> None:
        np.savez(self.dir / "strata.npz", labels=assignment.labels,
                 tail_ids=assignment.tail_ids, scores=assignment.scores,
                 centroids=assignment.centroids, seed=assignment.seed)

    def write_initial(self, initial_states: np.ndarray) -> None:
        np.save(self.dir / "initial_states.npy", initial_states)

    def write_round(self, result) -> None:
        with open(self.dir / "rounds.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(round_record(result), sort_keys=True) + "\n")
        np.savez(self.dir / "states" / f"round_{result.round_index:04d}.npz",
                 hard=result.hard.astype(np.int16), soft=result.soft,
                 interpolated_ids=result.interpolated_ids,
                 support_ids=result.support_ids,
                 support_distances=result.support_distances)

    def write_checkpoint(self, result) -> None:
        np.savez(self.dir / "checkpoint.npz", round=result.round_index,
                 hard=result.hard, risks=result.risks_next)
        (self.dir / "checkpoint.json").write_text(
            json.dumps({"round": result.round_index, "config_hash": self.hash,
                        "seeds": self.seeds}, sort_keys=True), encoding="utf-8")

    def finalize(self, sim) -> Path:
        records = read_round_records(self.dir)
        totals: dict[str, int] = {}
        for record in records:
            for category, count in record["calls"].items():
                totals[category] = totals.get(category, 0) + count
        summary = {
            "config_hash": self.hash,
            "seeds": self.seeds,
            "meta": self.meta,
            "n_rounds": len(records),
            "calls": {"total": sum(totals.values()), "by_category": totals},
            "final_projected": records[-1]["projected"] if records else None,
            "rounds": [{"round": r["round"], "calls": r["calls"],
                        "budgets": r["budgets"], "projected": r["projected"],
                        "unprojected": r["unprojected"],
                        "risk_scores": r["risk_scores"]} for r in records],
        }
        path = self.dir / "summary.json"
        path.write_text(json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8")
        return path


class TrajectoryWriter:
    """Incremental writer for reference runs (same layout, no audit fields)."""

    def __init__(self, out_dir, config_text: str, seeds: dict, method: str):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "states").mkdir(exist_ok=True)
        self.config_text = config_text
        self.hash = config_hash(config_text)
        self.seeds = dict(seeds)
        self.method = method
        (self.dir / "config.snapshot.txt").write_text(config_text, encoding="utf-8")

    def write_round(self, round_index: int, hard: np.ndarray, reported: np.ndarray,
                    calls: dict) -> None:
        record = _jsonable({"round": round_index, "reported": reported, "calls": calls})
        with open(self.dir / "rounds.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        np.savez(self.dir / "states" / f"round_{round_index:04d}.npz",
                 hard=hard.astype(np.int16))
        np.savez(self.dir / "checkpoint.npz", round=round_index, hard=hard,
                 risks=np.zeros(1))
        (self.dir / "checkpoint.json").write_text(
            json.dumps({"round": round_index, "config_hash": self.hash,
                        "seeds": self.seeds}, sort_keys=True), encoding="utf-8")

    def finalize(self) -> Path:
        records = read_round_records(self.dir)
        totals: dict[str, int] = {}
        for record in records:
            for category, count in record["calls"].items():
                totals[category] = totals.get(category, 0) + count
        summary = {
            "config_hash": self.hash,
            "seeds": self.seeds,
            "meta": {"method": self.method},
            "n_rounds": len(records),
            "calls": {"total": sum(totals.values()), "by_category": totals},
            "final_projected": records[-1]["reported"] if records else None,
            "rounds": [{"round": r["round"], "calls": r["calls"],
                        "reported": r["reported"]} for r in records],
        }
        path = self.dir / "summary.json"
        path.write_text(json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8")
        return path


def write_trajectory(out_dir, trajectory, config_text: str, method: str) -> Path:
    """Persist a completed trajectory (used for baseline runs)."""
    writer = TrajectoryWriter(out_dir, config_text, trajectory.seeds, method)
    per_round = trajectory.calls.get("by_round", {})
    for t in range(1, trajectory.n_rounds + 1):
        calls = per_round.get(str(t), {})
        writer.write_round(t, trajectory.hard_by_round[t - 1],
                           trajectory.reported[t - 1], calls)
    np.save(writer.dir / "initial_states.npy", trajectory.initial_states)
    return writer.finalize()


def read_round_records(run_dir) -> list[dict]:
    path = Path(run_dir) / "rounds.jsonl"
    if not path.exists():
        return []
    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()
               if line.strip()]
    return sorted(records, key=lambda r: r["round"])


def load_checkpoint(run_dir, current_config_text: str) -> dict:
    """Resume state from a run directory; refuses on config-hash mismatch."""
    run_dir = Path(run_dir)
    meta_path = run_dir / "checkpoint.json"
    data_path = run_dir / "checkpoint.npz"
    if not meta_path.exists() or not data_path.exists():
        raise ConfigurationError(f"no checkpoint in {run_dir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta["config_hash"] != config_hash(current_config_text):
        raise CheckpointMismatch("config hash differs from checkpointed run")
    with np.load(data_path) as data:
        return {"round": int(data["round"]), "hard": data["hard"].copy(),
                "risks": data["risks"].copy()}


def load_round_states(run_dir, round_index: int) -> dict:
    with np.load(Path(run_dir) / "states" / f"round_{round_index:04d}.npz") as data:
        return {key: data[key].copy() for key in data.files}


def load_strata(run_dir) -> dict:
    with np.load(Path(run_dir) / "strata.npz") as data:
        return {key: data[key].copy() for key in data.files}


def load_trajectory(run_dir):
    """Rebuild a Trajectory from a completed run directory (engine,
    reference, or baseline layout)."""
    from .engine import NO_STATE
    from .evaluation import Trajectory

    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    records = read_round_records(run_dir)
    if not records:
        raise ConfigurationError(f"no round records in {run_dir}")
    hard = []
    reported = []
    unprojected = []
    for record in records:
        states = load_round_states(run_dir, record["round"])
        hard.append(states["hard"].astype(int))
        reported.append(np.array(record.get("projected") or record["reported"]))
        if "unprojected" in record:
            unprojected.append(np.array(record["unprojected"]))
    initial_path = run_dir / "initial_states.npy"
    if initial_path.exists():
        initial = np.load(initial_path)
    else:
        initial = np.full(len(hard[0]), NO_STATE, dtype=int)
    return Trajectory(method=summary.get("meta", {}).get("method", "run"),
                      hard_by_round=np.stack(hard),
                      reported=np.stack(reported),
                      calls=summary["calls"],
                      seeds=summary.get("seeds", {}),
                      n_options=len(reported[0]),
                      initial_states=initial,
                      unprojected=np.stack(unprojected) if unprojected else None)
