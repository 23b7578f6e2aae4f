"""Exceptions shared across the package.

Classes:
    TokenLoomError: Base class for every domain failure.
    ShapeError: Operands whose shapes cannot be combined.
    CheckpointError: A checkpoint that is corrupt or does not fit the model.
    CorpusFormatError: A corpus record that does not follow the JSON-lines schema.
    ConfigError: An unknown configuration key or an unparsable value.
"""


class TokenLoomError(Exception):
    """Base class for tokenloom failures."""
    pass


class ShapeError(TokenLoomError, ValueError):
    """Shapes of the operands are incompatible."""
    pass


class CheckpointError(TokenLoomError):
    """A checkpoint could not be decoded or does not match the model."""
    pass


class CorpusFormatError(TokenLoomError, ValueError):
    """A corpus record does not conform to the record schema."""
    pass


class ConfigError(TokenLoomError, ValueError):
    """A configuration key or value is invalid."""
    pass
