"""Exception hierarchy shared by all modules."""


class MacgError(Exception):
    """Base class for package errors."""


class NonFinite(MacgError, ValueError):
    pass


class NotClampablePD(MacgError, ValueError):
    """A tensor has an eigenvalue far below zero; not explainable as noise."""


class Overflow(MacgError, OverflowError):
    pass


class DomainError(MacgError, ValueError):
    """Operation applied to a field in the wrong domain (manifold vs tangent)."""


class ShapeError(MacgError, ValueError):
    pass


class DimMismatch(ShapeError):
    pass


class PatchTooLarge(ShapeError):
    pass


class OddDimension(ShapeError):
    pass


class CoverageGap(MacgError, ValueError):
    def __init__(self, uncovered):
        self.uncovered = uncovered
        n = len(uncovered)
        head = ", ".join(str(tuple(int(v) for v in u)) for u in uncovered[:5])
        more = "" if n <= 5 else f", ... (+{n - 5} more)"
        super().__init__(f"{n} voxel(s) not covered by any patch: {head}{more}")


class EmptyMask(MacgError, ValueError):
    pass


class NotScalarLoss(MacgError, ValueError):
    pass


class InfeasibleFA(MacgError, ValueError):
    pass


class NonFiniteLoss(MacgError, FloatingPointError):
    def __init__(self, term, step=None, value=None):
        self.term = term
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss term {term!r} at step {step}: {value}")


class FormatError(MacgError, ValueError):
    """Malformed TFV / checkpoint / report file."""


class ConfigError(MacgError, ValueError):
    def __init__(self, msg, key=None, line=None, column=None):
        self.key = key
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}, column {column or 1})"
        super().__init__(f"{msg}{where}")


class DegenerateWarning(UserWarning):
    """Principal direction requested for a tensor with a repeated top eigenvalue."""
