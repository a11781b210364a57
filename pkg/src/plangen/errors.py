"""Shared exception base for the toolkit.

Every domain error raised by plangen derives from PlangenError so the CLI
can map them to exit code 1 while genuine bugs still crash loudly.
"""


class PlangenError(Exception):
    """Base class for all domain errors."""
