"""Exception hierarchy for the fleet simulator."""


class AcFleetError(Exception):
    """Base class for all errors raised by this package."""


class ModelDivergenceError(AcFleetError):
    """A thermal state left the physically plausible band (blow-up)."""


class IntegrationError(AcFleetError):
    """Numerical integration produced a non-finite state or failed to
    converge to a limit cycle."""


class NeverOffError(AcFleetError):
    """Heat injection meets or exceeds cooling capacity; the compressor
    would run forever."""


class NeverOnError(AcFleetError):
    """Wall losses alone keep the house below the upper deadband edge;
    the compressor never triggers."""


class ProtocolError(AcFleetError):
    """A wire message violated the framing or schema rules."""


class IngestionError(AcFleetError):
    """A data file could not be parsed.

    Carries the 1-based line number when known.
    """

    def __init__(self, message, line_no=None):
        super().__init__(message if line_no is None
                         else f"line {line_no}: {message}")
        self.line_no = line_no


class InsufficientDataError(AcFleetError):
    """Not enough telemetry to estimate a model (e.g. a transition
    matrix) at the requested fidelity."""


class AccountingError(AcFleetError):
    """An internal energy or device-count audit failed."""


class NormalizationError(AcFleetError):
    """A metric's normalizing quantity is zero (e.g. a zero-mean
    reference under NRMSE); the metric is undefined."""


class ConfigError(AcFleetError):
    """An experiment configuration is malformed or inconsistent."""
