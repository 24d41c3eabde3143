"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class NHCSRError(Exception):
    exit_code = 1
    code = "ERROR"


class UsageError(NHCSRError):
    exit_code = 2
    code = "USAGE"


class ConfigError(UsageError):
    code = "CONFIG"


class DataContractError(NHCSRError):
    exit_code = 3
    code = "DATA_CONTRACT"


class DimensionError(DataContractError, ValueError):
    code = "DIMENSION"


class FormatError(DataContractError):
    code = "FORMAT"


class ChecksumError(FormatError):
    code = "CHECKSUM"


class NumericError(NHCSRError, FloatingPointError):
    exit_code = 4
    code = "NUMERIC"


class ConvergenceError(NumericError):
    code = "CONVERGENCE"

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ContractError(NHCSRError, ValueError):
    """Caller violated a precondition that is not about data shape or content."""

    exit_code = 3
    code = "CONTRACT"
