"""Exception types shared across the package."""


class TrajexError(Exception):
    """Base class for all package errors."""


class ShapeError(TrajexError):
    """Raster or message dimensions do not match what the operation expects."""


class HorizonError(TrajexError):
    """A requested timestep lies outside the available horizon."""


class ConfigError(TrajexError):
    """A configuration value violates its documented constraints."""


class GenerationError(TrajexError):
    """Scenario randomization could not satisfy its constraints."""


class ProtocolError(TrajexError):
    """A well-formed message cannot be served (unknown dictionary, no responses, ...)."""


class DecodeError(TrajexError):
    """A byte buffer failed structural validation.

    ``offset`` points at the first byte that could not be consumed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
