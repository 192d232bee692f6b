"""Exception types shared across the package."""


class DpgridError(Exception):
    """Base class for all package errors."""


class CaseError(DpgridError):
    """Case file or case data violates the schema or an invariant."""


class PartitionError(DpgridError):
    """Bus-to-region map is not a valid partition."""


class ModelError(DpgridError):
    """Regional model cannot be assembled from the given inputs."""


class IntegralityError(ModelError):
    """Binary-phase solution has fractional commitment or maintenance values."""


class SolverError(DpgridError):
    """The bundled solver failed numerically after bounded retries."""


class ConfigError(DpgridError):
    """Invalid experiment or solver configuration."""


class PrivacyError(DpgridError):
    """Privacy mechanism misconfiguration (missing scale, bad budget)."""


class ProtocolError(DpgridError):
    """Violation of the neighbor-only, exactly-once messaging contract."""
