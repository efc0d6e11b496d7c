"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class BlowupError(RuntimeError):
    """A trajectory left the working interval; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot
