"""Transition oracle contract: prompt construction, parsing, call accounting,
and the synthetic / scripted oracle backends.

Every oracle maps a prompt context to a parsed option under a single
``query`` contract that records per-round, per-category call counts.  The
synthetic kernel additionally exposes its true decision distribution for
verification paths; that distribution is never consulted by allocation or
propagation.
"""

from __future__ import annotations

import json
import string
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapabilityError, DecisionParseError, OracleError, TemplateError
from .seeding import DECODE, KERNEL, keyed_rng

CATEGORY_CORE = "core"
CATEGORY_TAIL = "tail"
CATEGORY_AUDIT = "audit"
CATEGORY_REFERENCE = "reference"
CATEGORIES = (CATEGORY_CORE, CATEGORY_TAIL, CATEGORY_AUDIT, CATEGORY_REFERENCE)
_CATEGORY_CODE = {c: k for k, c in enumerate(CATEGORIES)}

SYSTEM_PROMPT = ("You are a rational decision maker; make a judgment based on "
                 "your background, experience, and all known information.")


@dataclass(frozen=True)
class PromptContext:
    """Everything a transition oracle may condition on for one query.

    ``prev_state`` and ``neighbor_counts`` are None at round 1 when no
    initial states were supplied.  Option indices are 0-based internally;
    prompts and parsed decisions use 1-based labels.
    """

    agent_id: int
    round_index: int          # 1-based stage index
    stage_text: str
    options: tuple[str, ...]
    features_std: np.ndarray
    profile: str
    prev_state: int | None = None
    neighbor_counts: np.ndarray | None = None

    def __post_init__(self):
        if self.round_index < 1:
            raise ValueError("round_index is 1-based")
        if len(self.options) < 2:
            raise ValueError("option set must have >= 2 entries")


@dataclass(frozen=True)
class Decision:
    option_index: int     # 1-based, in [1, len(options)]
    raw_text: str
    attempts: int
    category: str

    @property
    def state(self) -> int:
        """0-based option index for ledger arrays."""
        return self.option_index - 1


class CallLedger:
    """Per-round, per-category oracle call counts; thread-safe increments."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: dict[tuple[int, str], int] = {}
        self.retries = 0
        self.parse_failures = 0

    def record(self, category: str, round_index: int) -> None:
        if category not in CATEGORIES:
            raise ValueError(f"unknown category {category!r}")
        with self._lock:
            key = (round_index, category)
            self._counts[key] = self._counts.get(key, 0) + 1

    def note_retry(self) -> None:
        with self._lock:
            self.retries += 1

    def note_parse_failure(self) -> None:
        with self._lock:
            self.parse_failures += 1

    def count(self, category: str, round_index: int | None = None) -> int:
        with self._lock:
            return sum(v for (r, c), v in self._counts.items()
                       if c == category and (round_index is None or r == round_index))

    def round_total(self, round_index: int) -> int:
        with self._lock:
            return sum(v for (r, _), v in self._counts.items() if r == round_index)

    def total(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    def snapshot(self) -> dict:
        with self._lock:
            by_category = {c: 0 for c in CATEGORIES}
            by_round: dict[str, dict[str, int]] = {}
            for (r, c), v in sorted(self._counts.items()):
                by_category[c] += v
                by_round.setdefault(str(r), {})[c] = v
            return {"total": sum(by_category.values()), "by_category": by_category,
                    "by_round": by_round, "retries": self.retries,
                    "parse_failures": self.parse_failures}


class Oracle:
    """Base query contract.  Subclasses implement ``_decide``."""

    def __init__(self):
        self.ledger = CallLedger()

    def query(self, context: PromptContext, category: str) -> Decision:
        decision = self._decide(context, category)
        self.ledger.record(category, context.round_index)
        return decision

    def query_batch(self, contexts: list[PromptContext], category: str) -> list[Decision]:
        """Decisions in input order; implementations may parallelize but the
        merge is keyed by position, never by completion order."""
        return [self.query(c, category) for c in contexts]

    def _decide(self, context: PromptContext, category: str) -> Decision:
        raise NotImplementedError

    def true_distribution(self, context: PromptContext) -> np.ndarray:
        raise CapabilityError("this oracle does not expose a true distribution")


class SyntheticKernel(Oracle):
    """Linear-logit synthetic transition kernel with inspectable truth.

    Logits are a seeded Gaussian linear map of (standardized features,
    previous-state one-hot, neighbor fraction vector, stage one-hot), each
    block scaled by ``*_scale / sqrt(block_dim)``.  Decoding is argmax
    (lowest-index tie-break) or a seeded categorical draw.
    """

    def __init__(self, n_features: int, n_options: int, n_stages: int, seed: int,
                 temperature: float = 1.0, decoding: str = "argmax",
                 feature_scale: float = 1.0, prev_scale: float = 1.0,
                 neighbor_scale: float = 1.0, stage_scale: float = 1.0,
                 curvature_scale: float = 0.0, curvature_centers: int = 16,
                 curvature_bandwidth: float | None = None,
                 curvature_center_shift: float = 0.0,
                 curvature_center_spread: float = 1.0):
        super().__init__()
        if decoding not in ("argmax", "sampled"):
            raise ValueError("decoding must be 'argmax' or 'sampled'")
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.n_features = n_features
        self.n_options = n_options
        self.n_stages = n_stages
        self.seed = seed
        self.temperature = temperature
        self.decoding = decoding
        rng = keyed_rng(seed, KERNEL)
        self.w_features = rng.standard_normal((n_options, n_features)) * feature_scale / np.sqrt(n_features)
        self.w_prev = rng.standard_normal((n_options, n_options)) * prev_scale / np.sqrt(n_options)
        self.w_neighbors = rng.standard_normal((n_options, n_options)) * neighbor_scale / np.sqrt(n_options)
        self.w_stage = rng.standard_normal((n_options, n_stages)) * stage_scale / np.sqrt(n_stages)
        # optional local-curvature component: Gaussian bumps in feature space
        # give the response surface heterogeneous, non-linear pockets;
        # shift/spread place the bumps off-center so roughness varies by region
        self.curvature_scale = curvature_scale
        if curvature_scale > 0:
            self.centers = (curvature_center_shift
                            + curvature_center_spread
                            * rng.standard_normal((curvature_centers, n_features)))
            self.w_centers = (rng.standard_normal((n_options, curvature_centers))
                              * curvature_scale / np.sqrt(curvature_centers))
            self.bandwidth = (curvature_bandwidth if curvature_bandwidth is not None
                              else np.sqrt(n_features) / 2.0)
        else:
            self.centers = None
            self.w_centers = None
            self.bandwidth = None

    def _logits(self, context: PromptContext) -> np.ndarray:
        logits = self.w_features @ context.features_std
        if context.prev_state is not None:
            logits = logits + self.w_prev[:, context.prev_state]
        if context.neighbor_counts is not None:
            fractions = context.neighbor_counts / context.neighbor_counts.sum()
            logits = logits + self.w_neighbors @ fractions
        logits = logits + self.w_stage[:, context.round_index - 1]
        if self.curvature_scale > 0:
            deltas = self.centers - context.features_std
            sq = np.einsum("ij,ij->i", deltas, deltas)
            logits = logits + self.w_centers @ np.exp(-sq / (2 * self.bandwidth ** 2))
        return logits

    def true_distribution(self, context: PromptContext) -> np.ndarray:
        z = self._logits(context) / self.temperature
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    def _decide(self, context: PromptContext, category: str) -> Decision:
        dist = self.true_distribution(context)
        if self.decoding == "argmax":
            option = int(np.argmax(dist))
        else:
            rng = keyed_rng(self.seed, DECODE, context.round_index,
                            context.agent_id, _CATEGORY_CODE[category])
            option = int(rng.choice(self.n_options, p=dist))
        raw = json.dumps({"decision": str(option + 1)})
        return Decision(option_index=option + 1, raw_text=raw, attempts=1, category=category)


class ScriptedOracle(Oracle):
    """Replay oracle: (agent_id, round) -> 1-based option."""

    def __init__(self, script: dict[tuple[int, int], int]):
        super().__init__()
        self.script = dict(script)

    @classmethod
    def load(cls, path) -> "ScriptedOracle":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        script = {}
        for key, option in data.items():
            agent, round_index = key.split(":")
            script[(int(agent), int(round_index))] = int(option)
        return cls(script)

    def _decide(self, context: PromptContext, category: str) -> Decision:
        key = (context.agent_id, context.round_index)
        if key not in self.script:
            raise OracleError("no scripted decision", agent_id=context.agent_id,
                              round_index=context.round_index, category=category)
        option = int(self.script[key])
        if not 1 <= option <= len(context.options):
            raise OracleError(f"scripted option {option} out of range",
                              agent_id=context.agent_id,
                              round_index=context.round_index, category=category)
        raw = json.dumps({"decision": str(option)})
        return Decision(option_index=option, raw_text=raw, attempts=1, category=category)


# --- prompt template ------------------------------------------------------

ALLOWED_PLACEHOLDERS = {"profile", "previous_attitude", "local_social_context",
                        "round_index", "stage_text", "options"}
_OPTIONAL_PLACEHOLDERS = {"previous_attitude", "local_social_context"}

DEFAULT_TEMPLATE_TEXT = """You are an ordinary online user following this event.

Agent profile: {profile}

Previous attitude: {previous_attitude}

Local social context: {local_social_context}

Current event {round_index}: {stage_text}

Please choose one option from the following list:
{options}

Decision requirements: consider your own background and standpoint; consider all previous events rather than only the current message; your view may change as the event develops.

Return JSON only:
{{"decision": "1", "reasoning": "brief reason grounded in the agent profile"}}"""


@dataclass(frozen=True)
class PromptTemplate:
    text: str = DEFAULT_TEMPLATE_TEXT

    def __post_init__(self):
        for name in _placeholder_names(self.text):
            if name not in ALLOWED_PLACEHOLDERS:
                raise TemplateError(f"unknown placeholder {{{name}}}")

    @classmethod
    def load(cls, path) -> "PromptTemplate":
        return cls(text=Path(path).read_text(encoding="utf-8"))


def _placeholder_names(text: str) -> list[str]:
    names = []
    for _, name, _, _ in string.Formatter().parse(text.replace("{{", "").replace("}}", "")):
        if name:
            names.append(name)
    return names


def format_option_lines(options) -> str:
    return "\n".join(f"{k + 1}. {label}" for k, label in enumerate(options))


def render_prompt(context: PromptContext, template: PromptTemplate | None = None) -> str:
    """Fill the decision template.  Lines whose optional placeholders
    (previous attitude, local social context) are unavailable are omitted,
    and blank-line runs are collapsed."""
    template = template or PromptTemplate()
    values = {
        "profile": context.profile,
        "round_index": str(context.round_index),
        "stage_text": context.stage_text,
        "options": format_option_lines(context.options),
        "previous_attitude": None,
        "local_social_context": None,
    }
    if context.prev_state is not None:
        values["previous_attitude"] = (
            f"{context.prev_state + 1}. {context.options[context.prev_state]}")
    if context.neighbor_counts is not None:
        counts = ", ".join(f"option {k + 1}: {int(c)}"
                           for k, c in enumerate(context.neighbor_counts))
        values["local_social_context"] = f"previous-round neighbor choices - {counts}"

    lines = []
    for line in template.text.split("\n"):
        names = _placeholder_names(line)
        if any(values.get(n) is None and n in _OPTIONAL_PLACEHOLDERS for n in names):
            continue
        lines.append(line.format(**{k: v for k, v in values.items() if v is not None}))
    rendered = []
    for line in lines:
        if line == "" and rendered and rendered[-1] == "":
            continue
        rendered.append(line)
    return "\n".join(rendered)


def parse_decision(raw: str, option_count: int) -> int:
    """Extract the 1-based decision from the first JSON object in the text.

    Accepts bare integers and numeric strings; anything missing or out of
    [1, option_count] is a parse error — never mapped to a fallback option.
    """
    if option_count < 2:
        raise ValueError("option_count must be >= 2")
    decoder = json.JSONDecoder()
    start = raw.find("{")
    obj = None
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(raw, start)
            break
        except json.JSONDecodeError:
            start = raw.find("{", start + 1)
    if obj is None or not isinstance(obj, dict):
        raise DecisionParseError("no JSON object found in response")
    if "decision" not in obj:
        raise DecisionParseError("JSON object has no 'decision' field")
    value = obj["decision"]
    if isinstance(value, bool):
        raise DecisionParseError(f"decision {value!r} is not an option index")
    if isinstance(value, str):
        value = value.strip()
        if not value.lstrip("-").isdigit():
            raise DecisionParseError(f"decision {value!r} is not an integer")
        value = int(value)
    if not isinstance(value, int):
        raise DecisionParseError(f"decision {value!r} is not an integer")
    if not 1 <= value <= option_count:
        raise DecisionParseError(f"decision {value} outside [1, {option_count}]")
    return value
