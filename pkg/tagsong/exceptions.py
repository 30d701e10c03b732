class TagsongError(Exception):
    """Generic tagsong exception."""


class ShapeError(TagsongError):
    """Operand shapes do not agree."""


class NumericError(TagsongError):
    """A value became NaN/Inf or a norm vanished."""


class EmptyLyricError(TagsongError):
    """Lyric has no usable tokens left after preprocessing."""


class ParameterError(TagsongError):
    """Argument outside its valid range."""


class ConfigError(TagsongError):
    """Invalid or inconsistent configuration."""


class CheckpointError(TagsongError):
    """Checkpoint could not be read or does not match the running setup."""


class TagsongIndexError(TagsongError, IndexError):
    """Token, mood or tag index out of range."""


class TagsongParseError(TagsongError):
    """Malformed input file."""

    def __init__(self, message, path=None, line=None):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class SchemaError(TagsongParseError):
    """Well-formed input whose fields violate the record schema."""
