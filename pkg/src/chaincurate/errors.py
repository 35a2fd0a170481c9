"""Exception hierarchy shared across the pipeline.

DataError maps to CLI exit code 2, UpstreamError to exit code 3.
"""


class DataError(Exception):
    """Malformed, inconsistent, or corrupt pipeline data."""


class UpstreamError(Exception):
    """Failure of an external service (inference endpoint, auth, replay miss)."""
