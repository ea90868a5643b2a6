"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and a ``context`` dict so
the CLI and the simulation harness can report and count failures by category.
"""
from __future__ import annotations

from typing import Any


class TrajMsmError(Exception):
    code = "error"

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "context": self.context}


class ConfigError(TrajMsmError):
    code = "config_error"


# data model
class MissingCell(TrajMsmError):
    code = "missing_cell"


class DomainError(TrajMsmError):
    code = "domain_error"


class RaggedPanel(TrajMsmError):
    code = "ragged_panel"


# numerics
class Separation(TrajMsmError):
    code = "separation"


class RankDeficient(TrajMsmError):
    code = "rank_deficient"


class EmptyClass(TrajMsmError):
    code = "empty_class"


# lcgm
class DegenerateClass(TrajMsmError):
    code = "degenerate_class"


# msm
class MonotoneLikelihood(TrajMsmError):
    code = "monotone_likelihood"


class NoEvents(TrajMsmError):
    code = "no_events"


# simulation
class EmptyGroup(TrajMsmError):
    code = "empty_group"


class TooManyFailures(TrajMsmError):
    code = "too_many_failures"


#: Errors that make a single simulation replicate unusable without being bugs.
REPLICATE_FAILURES = (
    DegenerateClass,
    Separation,
    RankDeficient,
    EmptyClass,
    EmptyGroup,
    MonotoneLikelihood,
    NoEvents,
)
