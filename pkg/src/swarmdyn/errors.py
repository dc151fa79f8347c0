"""Exception hierarchy: config/input problems vs runtime faults.

The CLI maps ConfigError to exit code 1 and FaultError (or anything else
unexpected) to exit code 2.
"""


class SwarmdynError(Exception):
    pass


class ConfigError(SwarmdynError):
    """Malformed configuration, missing input, or failed validation."""


class FaultError(SwarmdynError):
    """Runtime fault: impossible geometry, degenerate inputs, broken state."""
