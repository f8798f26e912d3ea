import numpy as np
import pytest

from protosim.baselines import BASELINE_KINDS, run_baseline, split_budget
from protosim.engine import EngineConfig, run_simulation
from protosim.errors import CapabilityError, ConfigurationError
from protosim.evaluation import (decompose_error, jsd, run_reference,
                                 trajectory_from_simulation)
from protosim.oracle import ScriptedOracle, SyntheticKernel
from protosim.population import FeatureSpec, continuous, generate_synthetic_population
from protosim.scenario import Scenario
from protosim.socialgraph import build_ws_graph
from protosim.stratification import ScheduleConfig


def make_world(n=100, rounds=3, n_options=4, d=3, seed=0, kernel_seed=5):
    spec = FeatureSpec(fields=tuple(continuous(f"x{j}", -3, 3) for j in range(d)))
    population = generate_synthetic_population(spec, n, seed=seed)
    graph = build_ws_graph(n, 6, 0.1, seed=seed + 1)
    scenario = Scenario(stages=tuple(f"stage {t}" for t in range(1, rounds + 1)),
                        options=tuple(f"opt{k}" for k in range(n_options)))
    kernel = SyntheticKernel(n_features=d, n_options=n_options, n_stages=rounds,
                             seed=kernel_seed)
    return population, graph, scenario, kernel


def fresh_kernel(world, seed=5):
    population, _, scenario, _ = world
    return SyntheticKernel(n_features=population.d, n_options=scenario.n_options,
                           n_stages=scenario.n_rounds, seed=seed)


class TestReference:
    def test_deterministic(self):
        world = make_world()
        population, graph, scenario, kernel = world
        a = run_reference(population, graph, scenario, kernel)
        b = run_reference(population, graph, scenario, fresh_kernel(world))
        np.testing.assert_array_equal(a.hard_by_round, b.hard_by_round)

    def test_call_count_is_n_times_t(self):
        population, graph, scenario, kernel = make_world(n=100, rounds=3)
        trajectory = run_reference(population, graph, scenario, kernel)
        assert trajectory.calls["total"] == 300
        assert trajectory.calls["by_category"]["reference"] == 300

    def test_scripted_rollout_matches_hand_tabulation(self):
        population, graph, scenario, _ = make_world(n=100, rounds=3)
        script = {(agent, t): (agent + t) % 4 + 1
                  for agent in range(100) for t in range(1, 4)}
        oracle = ScriptedOracle(script)
        trajectory = run_reference(population, graph, scenario, oracle)
        # hand tabulation of the final round: option (agent+3) % 4 + 1
        expected = np.zeros(4)
        for agent in range(100):
            expected[(agent + 3) % 4] += 1 / 100
        np.testing.assert_allclose(trajectory.empirical(3), expected, atol=1e-12)
        assert trajectory.reported[-1] == pytest.approx(expected.tolist())


class TestSplitBudget:
    def test_even_split_within_one(self):
        for total, rounds in [(100, 8), (101, 8), (7, 3), (8000, 8)]:
            parts = split_budget(total, rounds)
            assert sum(parts) == total
            assert max(parts) - min(parts) <= 1


class TestBaselines:
    def test_unknown_kind_rejected(self):
        world = make_world()
        population, graph, scenario, kernel = world
        with pytest.raises(ConfigurationError):
            run_baseline("bogus", 100, population, graph, scenario, kernel, seed=1)

    @pytest.mark.parametrize("kind", BASELINE_KINDS)
    def test_full_budget_degeneracy_equals_reference(self, kind):
        world = make_world(n=60, rounds=2)
        population, graph, scenario, _ = world
        reference = run_reference(population, graph, scenario, fresh_kernel(world))
        trajectory = run_baseline(kind, 60 * 2, population, graph, scenario,
                                  fresh_kernel(world), seed=3, m_core=3)
        np.testing.assert_array_equal(trajectory.hard_by_round,
                                      reference.hard_by_round)

    @pytest.mark.parametrize("kind", BASELINE_KINDS)
    def test_per_round_calls_within_one_of_even_split(self, kind):
        world = make_world(n=80, rounds=3)
        population, graph, scenario, _ = world
        oracle = fresh_kernel(world)
        total = 100
        trajectory = run_baseline(kind, total, population, graph, scenario,
                                  oracle, seed=3, m_core=3)
        by_round = [oracle.ledger.round_total(t) for t in (1, 2, 3)]
        assert sum(by_round) == total
        expected = split_budget(total, 3)
        assert by_round == expected

    @pytest.mark.parametrize("kind", BASELINE_KINDS)
    def test_reported_on_simplex_and_states_valid(self, kind):
        world = make_world(n=80, rounds=3)
        population, graph, scenario, _ = world
        trajectory = run_baseline(kind, 90, population, graph, scenario,
                                  fresh_kernel(world), seed=3, m_core=3)
        assert np.all(trajectory.hard_by_round >= 0)
        assert np.all(trajectory.hard_by_round < 4)
        np.testing.assert_allclose(trajectory.reported.sum(axis=1), 1.0, atol=1e-9)

    def test_budget_below_strata_rejected(self):
        world = make_world(n=80, rounds=3)
        population, graph, scenario, kernel = world
        with pytest.raises(ConfigurationError):
            run_baseline("stratified-sampling", 6, population, graph, scenario,
                         kernel, seed=3, m_core=3)


class TestDecomposition:
    def make_runs(self, n=80, rounds=3):
        world = make_world(n=n, rounds=rounds)
        population, graph, scenario, kernel = world
        cfg = EngineConfig(schedule=ScheduleConfig(
            baseline_n=5000, tail_base_fraction=0.002, audit_base_fraction=0.002,
            baseline_strata=3))
        sim = run_simulation(population, graph, scenario, kernel, cfg, seed=4)
        method = trajectory_from_simulation(sim)
        reference = run_reference(population, graph, scenario, fresh_kernel(world))
        return world, method, reference

    def test_round_one_context_mismatch_zero(self):
        world, method, reference = self.make_runs()
        population, graph, scenario, kernel = world
        decomposition = decompose_error(method, reference, kernel, population,
                                        graph, scenario)
        assert decomposition.context_mismatch[0] == pytest.approx(0.0, abs=1e-12)

    def test_triangle_bound_every_round(self):
        world, method, reference = self.make_runs()
        population, graph, scenario, kernel = world
        decomposition = decompose_error(method, reference, kernel, population,
                                        graph, scenario)
        assert np.all(decomposition.realized_error
                      <= decomposition.bound + 1e-9)

    def test_full_budget_context_mismatch_zero_everywhere(self):
        world = make_world(n=60, rounds=3)
        population, graph, scenario, kernel = world
        cfg = EngineConfig(schedule=ScheduleConfig(
            baseline_n=5000, rate_mode="fixed", fixed_rate=1.0,
            tail_base_fraction=0.002, audit_base_fraction=0.002, baseline_strata=3))
        sim = run_simulation(population, graph, scenario, kernel, cfg, seed=4)
        method = trajectory_from_simulation(sim)
        reference = run_reference(population, graph, scenario, fresh_kernel(world))
        decomposition = decompose_error(method, reference, kernel, population,
                                        graph, scenario)
        np.testing.assert_allclose(decomposition.context_mismatch, 0.0, atol=1e-12)

    def test_requires_synthetic_kernel(self):
        world, method, reference = self.make_runs()
        population, graph, scenario, _ = world
        scripted = ScriptedOracle({})
        with pytest.raises(CapabilityError):
            decompose_error(method, reference, scripted, population, graph, scenario)

    def test_reference_consumes_no_method_state(self):
        import inspect

        from protosim import evaluation
        signature = inspect.signature(evaluation.run_reference)
        # structural: the reference runner cannot receive engine artifacts
        for name in ("assignment", "soft", "risks", "budgets", "sim"):
            assert name not in signature.parameters
