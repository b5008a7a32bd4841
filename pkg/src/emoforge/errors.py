"""Exception types shared across the engine."""


class EmoforgeError(Exception):
    """Base class for all engine errors."""


class ConfigError(EmoforgeError):
    """Invalid configuration: bad budgets, unknown families, missing launchers.

    The CLI maps this class to exit code 2.
    """


class UnknownFamilyError(ConfigError):
    pass


class UnknownTaskError(EmoforgeError):
    pass


class EmptyArchiveError(EmoforgeError):
    pass


class DuplicateCandidateError(EmoforgeError):
    pass


class CheckpointError(EmoforgeError):
    pass


class ReplayExhaustedError(EmoforgeError):
    pass


class LauncherError(ConfigError):
    """A language tag has no configured launcher (config problem, not a candidate failure)."""


class OutOfBoundsError(EmoforgeError):
    """A benchmark objective was queried outside its task bounds."""
