"""Exception types shared across the package.

Library code raises these (or plain ValueError for argument misuse); the CLI
maps them onto exit codes.
"""


class VisegridError(Exception):
    """Base class for package-specific failures."""


class ConfigError(VisegridError):
    """Bad configuration value or unusable combination of options."""


class MissingInputError(VisegridError):
    """A required input file or artifact is absent."""


class DictionaryError(VisegridError):
    """Malformed pronunciation dictionary content."""


class TranscriptionError(VisegridError):
    """A word has no dictionary entry, or a symbol has no home."""


class FoldError(VisegridError):
    """Fold split cannot be built or is internally inconsistent."""


class LeakageError(VisegridError):
    """Train/test overlap detected where the protocol requires disjointness."""


class InfeasiblePathError(VisegridError):
    """An observation sequence is too short to traverse the required states."""

    def __init__(self, required: int, got: int, label: str = ""):
        what = f" for {label}" if label else ""
        super().__init__(
            f"observation too short{what}: need at least {required} frames, got {got}"
        )
        self.required = required
        self.got = got


class NoHypothesisError(VisegridError):
    """The decoder found no complete path through the network."""
