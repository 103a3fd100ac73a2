"""Exception hierarchy shared by all formlang modules."""


class FormLangError(Exception):
    """Base class for all errors raised by formlang."""


# --- expression construction ---

class InvalidTerminal(FormLangError):
    pass


class ShapeMismatch(FormLangError):
    pass


class FreeIndexConflict(FormLangError):
    pass


class ArityError(FormLangError):
    pass


class RankError(FormLangError):
    pass


class RankMismatch(FormLangError):
    pass


class IndexOutOfRange(FormLangError):
    pass


class UnboundIndex(FormLangError):
    pass


class DuplicateIndex(FormLangError):
    pass


class DivisionByZero(FormLangError):
    pass


class MathDomain(FormLangError):
    pass


class NotAVariable(FormLangError):
    pass


class DoubleRestriction(FormLangError):
    pass


class BooleanMisuse(FormLangError):
    pass


class Unsupported(FormLangError):
    pass


class UnsupportedDerivative(Unsupported):
    pass


class UnsupportedNode(Unsupported):
    pass


class UnsupportedMeasure(Unsupported):
    pass


# --- elements ---

class UnknownFamily(FormLangError):
    pass


class BadDegree(FormLangError):
    pass


class CellMismatch(FormLangError):
    pass


class BadSymmetry(FormLangError):
    pass


# --- forms ---

class NonScalarIntegrand(FormLangError):
    pass


class FreeIndexInIntegrand(FormLangError):
    pass


class MissingRestriction(FormLangError):
    pass


class SpuriousRestriction(FormLangError):
    pass


class MixedArity(FormLangError):
    pass


class NotACoefficient(FormLangError):
    pass


class ElementMismatch(FormLangError):
    pass


class ComponentOutOfRange(FormLangError):
    pass


# --- evaluation ---

class UnboundTerminal(FormLangError):
    pass


class UnhandledKind(FormLangError):
    pass
