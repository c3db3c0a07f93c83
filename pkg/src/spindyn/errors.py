"""Exception hierarchy shared by all spindyn modules."""


class SpinDynError(Exception):
    """Base class for every error raised by spindyn."""


class InvalidCrystalError(SpinDynError, ValueError):
    pass


class SymmetryError(SpinDynError, ValueError):
    """A symmetry operation is inconsistent with the crystal or a coupling."""


class SizeError(SpinDynError, ValueError):
    pass


class NumericalError(SpinDynError):
    """Base for failures of a numerical method (CLI exit code 2)."""


class IntegrationError(NumericalError):
    """Fixed-point iteration of an implicit integrator did not converge."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InstabilityError(NumericalError):
    """Spin-wave Hamiltonian is not positive semidefinite."""

    def __init__(self, message, q=None, min_eigenvalue=None):
        super().__init__(message)
        self.q = q
        self.min_eigenvalue = min_eigenvalue


class WangLandauIncomplete(NumericalError):
    """Step budget exhausted before the modification factor reached its target.

    The partial :class:`~spindyn.sampling.WangLandauState` is on ``.state``.
    """

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


class ModelFileError(SpinDynError, ValueError):
    def __init__(self, message, line=None, column=None, section=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        prefix = f"[{section}] " if section else ""
        super().__init__(prefix + message + loc)
        self.line = line
        self.column = column
        self.section = section
