"""Exception types shared across the package."""

from __future__ import annotations


class ProtosimError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ProtosimError):
    """Invalid configuration value or inconsistent inputs."""


class IngestionError(ProtosimError):
    """A seed record violates the feature spec; carries the offending row."""

    def __init__(self, row: int, message: str):
        super().__init__(f"seed row {row}: {message}")
        self.row = row


class TemplateError(ProtosimError):
    """Prompt template references an unknown placeholder."""


class DecisionParseError(ProtosimError):
    """Oracle response could not be parsed into a valid option."""


class CapabilityError(ProtosimError):
    """Operation requires an oracle capability this oracle does not have."""


class DesignError(ProtosimError):
    """Invalid sampling design (e.g. nonpositive inclusion probability)."""


class OracleError(ProtosimError):
    """Unrecoverable oracle failure; carries agent / round / category."""

    def __init__(self, message: str, *, agent_id: int | None = None,
                 round_index: int | None = None, category: str | None = None):
        detail = message
        tags = []
        if agent_id is not None:
            tags.append(f"agent={agent_id}")
        if round_index is not None:
            tags.append(f"round={round_index}")
        if category is not None:
            tags.append(f"category={category}")
        if tags:
            detail = f"{message} ({', '.join(tags)})"
        super().__init__(detail)
        self.agent_id = agent_id
        self.round_index = round_index
        self.category = category


class CheckpointMismatch(ProtosimError):
    """Resume refused: checkpoint does not match the current configuration."""
