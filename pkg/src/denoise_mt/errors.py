"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class AlignmentError(ValueError):
    """Parallel files disagree on line counts."""


class CheckpointError(RuntimeError):
    """Checkpoint is unreadable, incompatible, or structurally broken."""
