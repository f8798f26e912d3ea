"""Budgeted prototype-propagation simulation toolkit.

Multi-round agent populations driven by a pluggable transition oracle:
only budgeted core prototypes, routed tail agents, and shadow-audit agents
are queried, prototype responses propagate through local response
surfaces, and population distributions are reported via a design-weighted
residual-corrected estimator.
"""

from .audit import (AuditDesign, StratumDiagnostics, audit_correct,
                    compute_risk_scores, project_simplex, risk_score,
                    sample_audit_set)
from .baselines import BASELINE_KINDS, run_baseline
from .engine import (EngineConfig, NO_STATE, RoundResult, SimulationResult,
                     allocate_budgets, interpolate, run_round, run_simulation,
                     select_prototypes)
from .evaluation import (ErrorDecomposition, Trajectory, decompose_error,
                         run_reference, trajectory_from_simulation)
from .metrics import bootstrap_jsd_ci, exact_match, jsd, wilson_interval
from .oracle import (CallLedger, Decision, Oracle, PromptContext, PromptTemplate,
                     ScriptedOracle, SyntheticKernel, parse_decision, render_prompt)
from .population import (FeatureSpec, PerturbConfig, Population, categorical,
                         continuous, expand_from_seeds,
                         generate_synthetic_population, ordinal, read_seed_csv)
from .scenario import Scenario
from .socialgraph import SocialGraph, StateCounts, build_ws_graph, neighbor_summary
from .stratification import (ScheduleConfig, StrataAssignment, audit_budget,
                             core_stratum_count, partition, prototype_rate,
                             stratify, tail_count, tail_scores)

__version__ = "0.1.0"
