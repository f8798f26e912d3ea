"""Scenario definition: ordered stage texts plus one shared option set."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError


@dataclass(frozen=True)
class Scenario:
    stages: tuple[str, ...]
    options: tuple[str, ...]

    def __post_init__(self):
        if len(self.stages) < 1:
            raise ConfigurationError("scenario needs at least one stage")
        if len(self.options) < 2:
            raise ConfigurationError("scenario needs at least two options")

    @property
    def n_rounds(self) -> int:
        return len(self.stages)

    @property
    def n_options(self) -> int:
        return len(self.options)

    def to_dict(self) -> dict:
        return {"stages": list(self.stages), "options": list(self.options)}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Scenario":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(stages=tuple(data["stages"]), options=tuple(data["options"]))


def truncated(scenario: Scenario, rounds: int) -> Scenario:
    """First ``rounds`` stages of a scenario (same option set)."""
    if not 1 <= rounds <= scenario.n_rounds:
        raise ConfigurationError(f"rounds must be in [1, {scenario.n_rounds}]")
    return Scenario(stages=scenario.stages[:rounds], options=scenario.options)
