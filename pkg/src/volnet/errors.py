"""Exception hierarchy shared across the engine."""


class VolnetError(Exception):
    pass


class ShapeMismatch(VolnetError, ValueError):
    pass


class RankError(VolnetError, ValueError):
    pass


class IndexOutOfRange(VolnetError, IndexError):
    pass


class UnknownInput(VolnetError, ValueError):
    pass


class NonScalarLoss(VolnetError, ValueError):
    pass


class NonDeterministicFunction(VolnetError, RuntimeError):
    pass


class DegenerateBatch(VolnetError, ValueError):
    pass


class DegenerateAxis(VolnetError, ValueError):
    pass


class InvalidSpec(VolnetError, ValueError):
    pass


class MissingModality(VolnetError, ValueError):
    pass


class EmptyInput(VolnetError, ValueError):
    pass


class NonFiniteLoss(VolnetError, FloatingPointError):
    pass


class NiftiError(VolnetError, ValueError):
    pass


class BadMagic(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class TruncatedFile(NiftiError):
    pass
