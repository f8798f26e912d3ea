import json

import numpy as np
import pytest

from protosim.errors import (CapabilityError, DecisionParseError, OracleError,
                             TemplateError)
from protosim.oracle import (CATEGORY_AUDIT, CATEGORY_CORE, CallLedger, Oracle,
                             PromptContext, PromptTemplate, ScriptedOracle,
                             SyntheticKernel, parse_decision, render_prompt)

OPTIONS5 = ("alpha", "beta", "gamma", "delta", "epsilon")


def make_context(agent=0, round_index=2, options=OPTIONS5, prev=1, counts=(3, 1, 0, 0, 1),
                 features=None):
    return PromptContext(
        agent_id=agent, round_index=round_index, stage_text=f"event {round_index}",
        options=options,
        features_std=np.asarray(features if features is not None else [0.5, -1.0]),
        profile="age: 3; trust: 7",
        prev_state=prev,
        neighbor_counts=None if counts is None else np.asarray(counts))


def fresh_kernel(**kwargs):
    defaults = dict(n_features=2, n_options=5, n_stages=4, seed=11)
    defaults.update(kwargs)
    return SyntheticKernel(**defaults)


class FixedLogitKernel(SyntheticKernel):
    """Kernel with an overridden logit head for hand-built examples."""

    def __init__(self, logits, **kwargs):
        super().__init__(n_features=2, n_options=len(logits), n_stages=4,
                         seed=0, **kwargs)
        self.fixed = np.asarray(logits, dtype=float)

    def _logits(self, context):
        return self.fixed.copy()


class TestSyntheticKernel:
    def test_deterministic_same_context(self):
        kernel = fresh_kernel()
        ctx = make_context()
        assert kernel.query(ctx, CATEGORY_CORE).option_index == \
            kernel.query(ctx, CATEGORY_CORE).option_index

    def test_argmax_of_given_logits(self):
        kernel = FixedLogitKernel([0.1, 2.0, 0.1, 0.1, 0.1])
        assert kernel.query(make_context(), CATEGORY_CORE).option_index == 2

    def test_zero_logits_uniform(self):
        kernel = FixedLogitKernel([0.0, 0.0, 0.0])
        dist = kernel.true_distribution(make_context(options=("a", "b", "c"),
                                                     counts=(1, 1, 0)))
        np.testing.assert_allclose(dist, np.full(3, 1 / 3), atol=1e-15)

    def test_softmax_hand_value(self):
        kernel = FixedLogitKernel([np.log(2.0), 0.0], temperature=1.0)
        dist = kernel.true_distribution(make_context(options=("a", "b"), prev=0,
                                                     counts=(1, 1)))
        np.testing.assert_allclose(dist, [2 / 3, 1 / 3], atol=1e-12)

    def test_normalization_on_random_contexts(self):
        kernel = fresh_kernel()
        rng = np.random.default_rng(0)
        for _ in range(1000):
            ctx = make_context(features=rng.normal(size=2),
                               prev=int(rng.integers(0, 5)),
                               counts=rng.multinomial(10, np.full(5, 0.2)),
                               round_index=int(rng.integers(1, 5)))
            assert abs(kernel.true_distribution(ctx).sum() - 1.0) < 1e-12

    def test_deterministic_decoding_is_point_mass(self):
        kernel = fresh_kernel()
        rng = np.random.default_rng(7)
        for _ in range(1000):
            ctx = make_context(agent=int(rng.integers(0, 100)),
                               features=rng.normal(size=2),
                               prev=int(rng.integers(0, 5)),
                               counts=rng.multinomial(10, np.full(5, 0.2)),
                               round_index=int(rng.integers(1, 5)))
            decision = kernel.query(ctx, CATEGORY_CORE)
            assert decision.state == int(np.argmax(kernel.true_distribution(ctx)))

    def test_argmax_tie_break_lowest_index(self):
        kernel = FixedLogitKernel([1.0, 1.0, 0.0])
        assert kernel.query(make_context(options=("a", "b", "c"),
                                         counts=(1, 1, 0)), CATEGORY_CORE).option_index == 1

    def test_sampled_decoding_deterministic_per_key(self):
        kernel = fresh_kernel(decoding="sampled", temperature=2.0)
        ctx = make_context()
        first = kernel.query(ctx, CATEGORY_CORE).option_index
        again = kernel.query(ctx, CATEGORY_CORE).option_index
        assert first == again

    def test_round1_context_without_prev_or_neighbors(self):
        kernel = fresh_kernel()
        ctx = make_context(round_index=1, prev=None, counts=None)
        assert 1 <= kernel.query(ctx, CATEGORY_CORE).option_index <= 5


class TestScripted:
    def test_replay(self):
        oracle = ScriptedOracle({(7, 2): 4})
        ctx = make_context(agent=7, round_index=2)
        assert oracle.query(ctx, CATEGORY_CORE).option_index == 4

    def test_missing_key_errors(self):
        oracle = ScriptedOracle({})
        with pytest.raises(OracleError):
            oracle.query(make_context(), CATEGORY_CORE)

    def test_load_from_json(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps({"7:2": 4, "0:1": 1}))
        oracle = ScriptedOracle.load(path)
        assert oracle.script[(7, 2)] == 4


class TestLedger:
    def test_conservation_with_injected_counter(self):
        calls = {"n": 0}

        class Counting(SyntheticKernel):
            def _decide(self, context, category):
                calls["n"] += 1
                return super()._decide(context, category)

        kernel = Counting(n_features=2, n_options=5, n_stages=4, seed=1)
        rng = np.random.default_rng(1)
        for _ in range(50):
            category = [CATEGORY_CORE, CATEGORY_AUDIT][int(rng.integers(0, 2))]
            kernel.query(make_context(agent=int(rng.integers(0, 9)),
                                      round_index=int(rng.integers(1, 5))), category)
        snapshot = kernel.ledger.snapshot()
        assert snapshot["total"] == calls["n"] == 50
        assert sum(snapshot["by_category"].values()) == 50

    def test_per_round_totals(self):
        ledger = CallLedger()
        ledger.record(CATEGORY_CORE, 1)
        ledger.record(CATEGORY_CORE, 1)
        ledger.record(CATEGORY_AUDIT, 1)
        ledger.record(CATEGORY_CORE, 2)
        assert ledger.round_total(1) == 3
        assert ledger.count(CATEGORY_CORE) == 3
        assert ledger.count(CATEGORY_CORE, round_index=2) == 1

    def test_unknown_category_rejected(self):
        with pytest.raises(ValueError):
            CallLedger().record("bogus", 1)

    def test_capability_error_for_true_distribution(self):
        oracle = ScriptedOracle({(0, 1): 1})
        with pytest.raises(CapabilityError):
            oracle.true_distribution(make_context())


class TestRenderPrompt:
    def test_two_option_lines(self):
        ctx = make_context(options=("yes", "no"), prev=0, counts=(1, 1))
        text = render_prompt(ctx)
        lines = [l for l in text.splitlines() if l[:2] in ("1.", "2.", "3.")]
        assert lines == ["1. yes", "2. no"]

    def test_round1_omits_previous_and_social_lines(self):
        ctx = make_context(round_index=1, prev=None, counts=None)
        text = render_prompt(ctx)
        assert "Previous attitude" not in text
        assert "Local social context" not in text
        assert "Current event 1:" in text

    def test_byte_identical_rendering(self):
        ctx = make_context()
        assert render_prompt(ctx) == render_prompt(ctx)

    def test_includes_context_fields(self):
        ctx = make_context()
        text = render_prompt(ctx)
        assert "age: 3; trust: 7" in text
        assert "Previous attitude: 2. beta" in text
        assert "option 1: 3" in text
        assert text.endswith('{"decision": "1", "reasoning": "brief reason grounded in the agent profile"}')

    def test_unknown_placeholder_rejected(self):
        with pytest.raises(TemplateError):
            PromptTemplate(text="Hello {nonsense}")

    def test_no_double_blank_lines_after_omission(self):
        ctx = make_context(round_index=1, prev=None, counts=None)
        assert "\n\n\n" not in render_prompt(ctx)


class TestParseDecision:
    def test_string_decision(self):
        assert parse_decision('{"decision": "3", "reasoning": "x"}', 5) == 3

    def test_leading_text_tolerated(self):
        assert parse_decision('prefix text {"decision": 1}', 5) == 1

    def test_out_of_range(self):
        with pytest.raises(DecisionParseError):
            parse_decision('{"decision": "9"}', 5)

    def test_missing_field(self):
        with pytest.raises(DecisionParseError):
            parse_decision('{"choice": 2}', 5)

    def test_no_json(self):
        with pytest.raises(DecisionParseError):
            parse_decision("I pick option 3", 5)

    def test_first_json_object_wins(self):
        raw = 'x {"decision": "2"} y {"decision": "5"}'
        assert parse_decision(raw, 5) == 2

    def test_skips_malformed_prefix_object(self):
        raw = '{not json} then {"decision": 4}'
        assert parse_decision(raw, 5) == 4

    def test_non_integer_rejected(self):
        with pytest.raises(DecisionParseError):
            parse_decision('{"decision": "two"}', 5)
        with pytest.raises(DecisionParseError):
            parse_decision('{"decision": 1.5}', 5)
