"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine-raised errors."""


class DomainError(EngineError, ValueError):
    """An argument is outside the operation's domain (empty input, bad range, ...)."""


class ContractError(EngineError, RuntimeError):
    """A pluggable component violated its contract (e.g. unnormalized scorer)."""


class ProtocolError(EngineError, RuntimeError):
    """An external backend replied with something the wire schema does not allow."""


class RetryableError(EngineError, RuntimeError):
    """A transient transport failure (endpoint down, timeout); safe to retry."""


class PipelineError(EngineError, RuntimeError):
    """A component failure annotated with the pipeline stage it occurred in."""

    def __init__(self, stage: str, message: str, *, instance_id: str | None = None):
        self.stage = stage
        self.instance_id = instance_id
        prefix = f"[{stage}]" if instance_id is None else f"[{stage}] instance {instance_id}:"
        super().__init__(f"{prefix} {message}")


class StudySkipped(EngineError):
    """An instance does not qualify for a study; recorded, not fatal."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)
