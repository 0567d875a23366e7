"""Exception types; the CLI maps each to an exit code."""


class HikoError(Exception):
    exit_code = 1


class ConfigError(HikoError, ValueError):
    exit_code = 2


class StructureError(HikoError, ValueError):
    """Anchor conflicts and shape or width mismatches between codecs."""

    exit_code = 3


class CheckpointError(HikoError):
    """Unreadable, malformed or mismatched checkpoint files."""

    exit_code = 4
