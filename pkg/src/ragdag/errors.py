"""Error taxonomy shared by every ragdag module.

Each error carries a stable ``name`` (its class name) and an optional
``context`` dict; the CLI prints both so failures are machine-greppable.
"""

from __future__ import annotations

from typing import Any


class RagdagError(Exception):
    """Base class for all domain errors raised by this package."""

    def __init__(self, message: str = "", **context: Any) -> None:
        super().__init__(message)
        self.context = context

    @property
    def name(self) -> str:
        return type(self).__name__

    def __str__(self) -> str:
        base = super().__str__()
        if self.context:
            ctx = ", ".join(f"{k}={v!r}" for k, v in sorted(self.context.items()))
            return f"{base} ({ctx})" if base else ctx
        return base


# corpus
class EmptyDocument(RagdagError):
    """Raw document text is empty or all whitespace."""


class DuplicateId(RagdagError):
    """An id collided with one already present in a store or index."""


class StoreIO(RagdagError):
    """Reading or writing a persistent store failed."""


# embed
class EncoderUnavailable(RagdagError):
    """Remote encoder unreachable after retries."""


class DimensionMismatch(RagdagError):
    """A vector's dimensionality disagrees with the configured dims."""


# vindex
class FormatVersionMismatch(RagdagError):
    """Index file has wrong magic bytes or an unsupported version."""


# rerank
class ScorerUnavailable(RagdagError):
    """Remote reranking scorer unreachable after retries."""


# modelgw
class BackendTimeout(RagdagError):
    """Model backend timed out after all retries."""


class BackendUnavailable(RagdagError):
    """Model backend unreachable or erroring after all retries."""


class NoScriptMatch(RagdagError):
    """Scripted backend had no rule matching the prompt."""


class BudgetExceeded(RagdagError):
    """Prompt is over the role's context budget."""


# gate
class AmbiguousGateOutput(RagdagError):
    """Gate model output normalized to neither accepted label."""


# dagdecomp
class MalformedJson(RagdagError):
    """Model text contained no parseable task array, or bad field types."""


class UnknownDependency(RagdagError):
    """A task references a dependency id that is not in the task list."""


class CycleDetected(RagdagError):
    """The dependency edges contain a cycle (self-loops included)."""


class EmptyTaskList(RagdagError):
    """The parsed task array has no elements."""


# pipeline
class BudgetImpossible(RagdagError):
    """Irreducible prompt content alone exceeds the budget."""


class NodeFailed(RagdagError):
    """A task node's model call failed after retries.

    Recorded in the execution trace; the pipeline continues independent
    branches rather than propagating this.
    """


# curate
class InsufficientPool(RagdagError):
    """Distractor pool smaller than the number of distractors requested."""


class InvalidM(RagdagError):
    """Requested selection size is outside [1, n]."""


# bench
class FormatError(RagdagError):
    """A dataset file failed to parse; context carries the line number."""


class MissingGold(RagdagError):
    """A benchmark item's gold label is not among its options."""


class ConfigError(RagdagError):
    """Run configuration is invalid; context names the offending key."""
