"""Exception hierarchy shared by every stage of the pipeline."""


class O2CError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(O2CError):
    """A line of an input file could not be decoded.

    ``line`` is 1-based and ``None`` when the error is not tied to a line.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    """A record decoded but misses fields required for its kind."""


class StructuralError(O2CError):
    """Inputs are individually valid but inconsistent as a whole."""


class ConfigurationError(O2CError):
    """Analysis inputs disagree, e.g. an indirect site without CFG entry."""

    def __init__(self, message, sites=()):
        self.sites = tuple(sites)
        if self.sites:
            message = f"{message}: " + ", ".join(str(s) for s in self.sites)
        super().__init__(message)


class BudgetExceeded(O2CError):
    """The tree evaluator would exceed its verifier-style resource budget."""


class AuditionUnavailable(O2CError):
    """An untracked object was freed in Phase 0 but no model is loaded."""
