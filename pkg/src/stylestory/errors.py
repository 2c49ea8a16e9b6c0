"""Exception types shared across the pipeline."""


class StyleStoryError(Exception):
    """Base class for pipeline errors."""


class FormatError(StyleStoryError, ValueError):
    """An input file or record does not match its documented format."""


class ConfigError(StyleStoryError, ValueError):
    pass


class EmptyCorpus(StyleStoryError, ValueError):
    pass


class InsufficientData(StyleStoryError, ValueError):
    pass


class LengthMismatch(StyleStoryError, ValueError):
    pass


class LengthExceeded(StyleStoryError, ValueError):
    pass


class IdOutOfRange(StyleStoryError, ValueError):
    pass


class EmptyTarget(StyleStoryError, ValueError):
    """Raised by the keyword loss when a story has no planning keywords; callers skip the term."""


class NonFiniteLoss(StyleStoryError, ArithmeticError):
    pass


class EmptyCandidate(StyleStoryError, ValueError):
    pass


class NoNgrams(StyleStoryError, ValueError):
    pass


class MissingPair(StyleStoryError, ValueError):
    pass
