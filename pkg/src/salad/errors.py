class FormatError(ValueError):
    """A feature, checkpoint or audio file could not be parsed."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass
