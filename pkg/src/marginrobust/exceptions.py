class ConfigurationError(ValueError):
    """Invalid configuration, shape mismatch, or inconsistent settings."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class IngestionError(IOError):
    """A data file could not be parsed; the message names the file."""
