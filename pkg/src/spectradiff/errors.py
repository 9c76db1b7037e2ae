"""Exception types shared across the package."""


class SpectraDiffError(Exception):
    """Base class for all package errors."""


class DimensionError(SpectraDiffError, ValueError):
    """Tensor/array extents do not line up."""


class ContractError(SpectraDiffError, ValueError):
    """A caller violated an operation precondition."""


class ConfigError(SpectraDiffError, ValueError):
    """Invalid configuration value or combination."""


class ParseError(SpectraDiffError, ValueError):
    """Malformed input file.  Carries a line number when one is known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
