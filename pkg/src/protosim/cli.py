"""Command-line surface: artifact generation, rollouts, evaluation, reports.

Every command is driven by a flat dotted-key config file plus one-to-one
``--override key=value`` flags; run commands write per-round JSONL records
and a final summary whose bytes depend only on inputs and seeds.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import click
import numpy as np

from . import runio
from .baselines import run_baseline
from .config import (ConfigView, engine_config_from_config, load_config,
                     render_config_text, schedule_from_config)
from .engine import NO_STATE, run_simulation
from .errors import ConfigurationError
from .evaluation import (bootstrap_jsd_ci, exact_match, jsd, run_reference,
                         trajectory_from_simulation, wilson_interval)
from .http_oracle import DEFAULT_API_KEY_ENV, HttpOracle
from .oracle import PromptTemplate, ScriptedOracle, SyntheticKernel
from .population import (FeatureSpec, PerturbConfig, Population,
                         expand_from_seeds, generate_synthetic_population,
                         read_seed_csv)
from .scenario import Scenario, truncated
from .socialgraph import SocialGraph, build_ws_graph
from .stratification import audit_budget, prototype_rate, tail_count


def _load(config, override) -> tuple[ConfigView, str]:
    values = load_config(config, list(override))
    return ConfigView(values), render_config_text(values)


def _load_population(cfg: ConfigView) -> Population:
    return Population.load(cfg.get_path("population.path"))


def _load_graph(cfg: ConfigView) -> SocialGraph:
    return SocialGraph.load(cfg.get_path("graph.path"))


def _load_scenario(cfg: ConfigView) -> Scenario:
    scenario = Scenario.load(cfg.get_path("scenario.path"))
    rounds = cfg.get_int("run.rounds", None)
    if rounds is not None and rounds != scenario.n_rounds:
        scenario = truncated(scenario, rounds)
    return scenario


def _build_oracle(cfg: ConfigView, population: Population, scenario: Scenario):
    kind = cfg.get_str("oracle.kind", required=True)
    if kind == "synthetic":
        return SyntheticKernel(
            n_features=population.d, n_options=scenario.n_options,
            n_stages=scenario.n_rounds, seed=cfg.get_int("oracle.seed", 0),
            temperature=cfg.get_float("oracle.temperature", 1.0),
            decoding=cfg.get_str("oracle.decoding", "argmax"),
            feature_scale=cfg.get_float("oracle.feature_scale", 1.0),
            prev_scale=cfg.get_float("oracle.prev_scale", 1.0),
            neighbor_scale=cfg.get_float("oracle.neighbor_scale", 1.0),
            stage_scale=cfg.get_float("oracle.stage_scale", 1.0))
    if kind == "scripted":
        return ScriptedOracle.load(cfg.get_path("oracle.script"))
    if kind == "http":
        template = None
        if cfg.has("oracle.template"):
            template = PromptTemplate.load(cfg.get_path("oracle.template"))
        return HttpOracle(
            base_url=cfg.get_str("oracle.base_url", required=True),
            model=cfg.get_str("oracle.model", required=True),
            api_key_env=cfg.get_str("oracle.api_key_env", DEFAULT_API_KEY_ENV),
            template=template,
            timeout_s=cfg.get_float("oracle.timeout_s", 120.0),
            retries=cfg.get_int("oracle.retries", 3),
            max_in_flight=cfg.get_int("oracle.max_in_flight", 16),
            transcript_path=cfg.get_str("oracle.transcripts", None))
    raise ConfigurationError(f"oracle.kind must be synthetic, scripted, or http; got {kind!r}")


def _initial_states(cfg: ConfigView, n: int) -> np.ndarray | None:
    if not cfg.has("run.initial_states"):
        return None
    states = np.load(cfg.get_path("run.initial_states"))
    if states.shape != (n,):
        raise ConfigurationError("run.initial_states must hold one state per agent")
    return states.astype(int)


def _out_dir(cfg: ConfigView, out_flag: str | None) -> Path:
    out = out_flag or cfg.get_str("run.out", required=True)
    return Path(out)


@click.group()
def main():
    """Budgeted prototype-propagation simulation toolkit."""


_config_options = [
    click.option("--config", "config", required=True, type=click.Path(exists=True),
                 help="flat dotted-key config file"),
    click.option("--override", "override", multiple=True, metavar="KEY=VALUE",
                 help="override a config key"),
]


def _with_config(fn):
    for option in reversed(_config_options):
        fn = option(fn)
    return fn


@main.command("gen-pop")
@_with_config
def gen_pop(config, override):
    """Generate or expand a population and write it to population.path."""
    cfg, _ = _load(config, override)
    kind = cfg.get_str("population.kind", "synthetic")
    spec = FeatureSpec.load(cfg.get_path("population.spec"))
    seed = cfg.get_int("population.seed", 0)
    if kind == "synthetic":
        population = generate_synthetic_population(
            spec, cfg.get_int("population.n", required=True), seed)
    elif kind == "seeds":
        records = read_seed_csv(cfg.get_path("population.csv"), spec)
        perturb = PerturbConfig(
            stickiness=cfg.get_float("perturb.stickiness", 0.6),
            shrinkage=cfg.get_float("perturb.shrinkage", 0.3),
            k_neighbors=cfg.get_int("perturb.k_neighbors", 10),
            clip_quantiles=(cfg.get_float("perturb.clip_lo", 0.01),
                            cfg.get_float("perturb.clip_hi", 0.99)),
            scale=cfg.get_float("perturb.scale", 1.0),
            cell_feature=cfg.get_str("perturb.cell_feature", None))
        population = expand_from_seeds(
            records, spec, cfg.get_int("population.target_n", required=True),
            perturb, seed)
    else:
        raise ConfigurationError("population.kind must be 'synthetic' or 'seeds'")
    path = cfg.get_str("population.path", required=True)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    population.save(path)
    click.echo(f"population: n={population.n} d={population.d} -> {path}")


@main.command("gen-graph")
@_with_config
def gen_graph(config, override):
    """Build the fixed context graph for population.path."""
    cfg, _ = _load(config, override)
    population = _load_population(cfg)
    graph = build_ws_graph(population.n,
                           cfg.get_int("graph.degree", 10),
                           cfg.get_float("graph.rewire_p", 0.1),
                           cfg.get_int("graph.seed", 0))
    path = cfg.get_str("graph.path", required=True)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    graph.save(path)
    click.echo(f"graph: n={graph.n} degree={graph.degree} checksum={graph.checksum} -> {path}")


@main.command("run-aps")
@_with_config
@click.option("--seed", type=int, default=None, help="override run.seed")
@click.option("--out", type=click.Path(), default=None, help="override run.out")
@click.option("--resume", is_flag=True, help="resume from the run directory checkpoint")
def run_aps(config, override, seed, out, resume):
    """Run the budgeted rollout and write round artifacts + summary."""
    cfg, text = _load(config, override)
    population = _load_population(cfg)
    graph = _load_graph(cfg)
    scenario = _load_scenario(cfg)
    oracle = _build_oracle(cfg, population, scenario)
    engine_cfg = engine_config_from_config(cfg)
    run_seed = seed if seed is not None else cfg.get_int("run.seed", 42)
    audit_seed = cfg.get_int("run.audit_seed", None)
    out_dir = _out_dir(cfg, out)

    resume_state = None
    if resume:
        resume_state = runio.load_checkpoint(out_dir, text)
        click.echo(f"resuming after round {resume_state['round']}")
    writer = runio.RunWriter(out_dir, text,
                             seeds={"run": run_seed,
                                    "audit": audit_seed if audit_seed is not None else run_seed + 1},
                             meta={"method": "aps", "n": population.n})
    sim = run_simulation(population, graph, scenario, oracle, engine_cfg, run_seed,
                         audit_seed=audit_seed,
                         initial_states=_initial_states(cfg, population.n),
                         writer=writer, resume_state=resume_state)
    summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
    click.echo(f"run-aps: rounds={summary['n_rounds']} "
               f"calls={summary['calls']['total']} -> {out_dir}")


@main.command("run-reference")
@_with_config
@click.option("--out", type=click.Path(), default=None, help="override run.out")
@click.option("--resume", is_flag=True)
def run_reference_cmd(config, override, out, resume):
    """Run the brute-force full rollout (every agent, every round)."""
    cfg, text = _load(config, override)
    population = _load_population(cfg)
    graph = _load_graph(cfg)
    scenario = _load_scenario(cfg)
    oracle = _build_oracle(cfg, population, scenario)
    out_dir = _out_dir(cfg, out)
    resume_state = runio.load_checkpoint(out_dir, text) if resume else None
    writer = runio.TrajectoryWriter(out_dir, text,
                                    seeds={"population": population.seed,
                                           "graph": graph.seed},
                                    method="reference")
    initial = _initial_states(cfg, population.n)
    np.save(out_dir / "initial_states.npy",
            initial if initial is not None else np.full(population.n, NO_STATE, dtype=int))
    run_reference(population, graph, scenario, oracle, initial_states=initial,
                  writer=writer, resume_state=resume_state)
    summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
    click.echo(f"run-reference: rounds={summary['n_rounds']} "
               f"calls={summary['calls']['total']} -> {out_dir}")


@main.command("run-baseline")
@_with_config
@click.option("--out", type=click.Path(), default=None, help="override run.out")
def run_baseline_cmd(config, override, out):
    """Run one same-budget baseline (baseline.kind, baseline.budget)."""
    cfg, text = _load(config, override)
    population = _load_population(cfg)
    graph = _load_graph(cfg)
    scenario = _load_scenario(cfg)
    oracle = _build_oracle(cfg, population, scenario)
    schedule = schedule_from_config(cfg)
    trajectory = run_baseline(cfg.get_str("baseline.kind", required=True),
                              cfg.get_int("baseline.budget", required=True),
                              population, graph, scenario, oracle,
                              cfg.get_int("run.seed", 42),
                              kappa=schedule.interp_support,
                              initial_states=_initial_states(cfg, population.n))
    out_dir = _out_dir(cfg, out)
    runio.write_trajectory(out_dir, trajectory, text, trajectory.method)
    click.echo(f"run-baseline[{trajectory.method}]: calls={trajectory.calls['total']} "
               f"-> {out_dir}")


@main.command("evaluate")
@click.option("--method", "method_dir", required=True, type=click.Path(exists=True))
@click.option("--reference", "reference_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--bootstrap", type=int, default=1000, show_default=True)
@click.option("--confidence", type=float, default=0.95, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def evaluate(method_dir, reference_dir, out, bootstrap, confidence, seed):
    """Compare a method run to a reference run; write JSON + per-round CSV."""
    method = runio.load_trajectory(method_dir)
    reference = runio.load_trajectory(reference_dir)
    if method.n_rounds != reference.n_rounds:
        raise ConfigurationError("method and reference run different round counts")
    per_round = [jsd(method.reported[t], reference.empirical(t + 1))
                 for t in range(method.n_rounds)]
    final_jsd = per_round[-1]
    match = exact_match(method.final_hard(), reference.final_hard())
    n = method.hard_by_round.shape[1]
    wilson = wilson_interval(int(round(match * n)), n, confidence)
    jsd_ci = bootstrap_jsd_ci(method.final_hard(), reference.final_hard(),
                              method.n_options, resamples=bootstrap,
                              confidence=confidence, seed=seed)
    method_calls = method.calls["total"]
    reference_calls = reference.calls["total"]
    report = {
        "method": method.method,
        "jsd_final": final_jsd,
        "jsd_log_base": 2,
        "jsd_per_round": per_round,
        "exact_match_final": match,
        "exact_match_wilson": list(wilson),
        "jsd_bootstrap_ci": list(jsd_ci),
        "method_calls": method_calls,
        "reference_calls": reference_calls,
        "reduction_factor": reference_calls / max(1, method_calls),
        "confidence": confidence,
    }
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, sort_keys=True, indent=2), encoding="utf-8")
    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "jsd", "method_reported", "reference_empirical"])
        for t in range(method.n_rounds):
            writer.writerow([t + 1, per_round[t],
                             json.dumps(method.reported[t].tolist()),
                             json.dumps(reference.empirical(t + 1).tolist())])
    click.echo(f"evaluate: jsd={final_jsd:.6f} exact={match:.4f} -> {out}")


@main.command("report")
@_with_config
@click.option("--scales", required=True, help="comma-separated population sizes")
@click.option("--out", required=True, type=click.Path())
def report(config, override, scales, out):
    """Schedule report: per-scale call accounting for the configured
    schedule (nominal per-round budgets times the round count)."""
    cfg, _ = _load(config, override)
    schedule = schedule_from_config(cfg)
    rounds = cfg.get_int("run.rounds", 8)
    rows = []
    for token in scales.split(","):
        n = int(float(token))
        rate = prototype_rate(n, schedule)
        core = math.ceil(rate * n)
        tails = tail_count(n, schedule)
        audits = audit_budget(n, schedule)
        per_round = core + tails + audits
        rows.append({"n": n, "prototype_rate": rate, "core_per_round": core,
                     "tails_per_round": tails, "audits_per_round": audits,
                     "per_round_total": per_round, "rounds": rounds,
                     "total_calls": rounds * per_round,
                     "brute_force_calls": rounds * n,
                     "reduction_factor": (rounds * n) / (rounds * per_round)})
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    click.echo(f"report: {len(rows)} scales -> {out}")


if __name__ == "__main__":
    main()
