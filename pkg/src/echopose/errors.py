"""Shared error types, mapped onto CLI exit codes."""


class DataFormatError(RuntimeError):
    """Malformed dataset, checkpoint or session input (exit code 3)."""


class NumericsError(RuntimeError):
    """Non-finite value in a numeric computation (exit code 4)."""
