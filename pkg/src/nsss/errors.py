"""Exception hierarchy shared by every stage of the pipeline."""


class NsssError(Exception):
    """Base class for all library errors."""


class DataError(NsssError):
    """Problems with input data (files, records, ids)."""


class CorpusIOError(DataError, OSError):
    pass


class FormatError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateIdError(DataError):
    def __init__(self, ident: str):
        super().__init__(f"duplicate id {ident!r}")
        self.ident = ident


class InvalidArgument(NsssError, ValueError):
    pass


class LayoutError(NsssError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class LengthMismatch(NsssError, ValueError):
    pass


class MissingWeights(NsssError, ValueError):
    pass


class VariantMismatch(NsssError, ValueError):
    pass


class NonFiniteGradient(NsssError, ArithmeticError):
    pass


class DivergenceDetected(NsssError, ArithmeticError):
    pass


class EmptyIndex(DataError):
    pass


class InvalidRank(NsssError, ValueError):
    pass


class CorpusTooSmall(DataError):
    pass


class PoolTooSmall(NsssError, ValueError):
    pass


class UnsupportedShape(NsssError, ValueError):
    pass


class ZeroOriginalScore(NsssError, ArithmeticError):
    pass
