"""
Exception hierarchy for the MCGD toolkit.

Every error raised by the chain, mixing, objective, solver and data layers
derives from MCGDError, so orchestration code can isolate a failing run with
a single except clause. Input-validation errors also derive from ValueError.
"""

from typing import Optional


class MCGDError(Exception):
    """Base class for all toolkit errors"""


# Transition matrix validation

class TransitionMatrixError(MCGDError, ValueError):
    """A matrix failed row-stochastic validation"""


class NonSquare(TransitionMatrixError):
    """Matrix is not square (or is empty)"""

    def __init__(self, shape: tuple):
        self.shape = tuple(shape)
        super().__init__(f"transition matrix must be square and non-empty, got shape {self.shape}")


class NegativeEntry(TransitionMatrixError):
    """Entry is negative or not a finite number"""

    def __init__(self, row: int, col: int, value: float):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"entry ({row}, {col}) = {value!r} is not a non-negative number")


class RowSumViolation(TransitionMatrixError):
    """Row does not sum to one within tolerance"""

    def __init__(self, row: int, row_sum: float):
        self.row = row
        self.row_sum = row_sum
        super().__init__(f"row {row} sums to {row_sum!r}, expected 1")


class MatrixParseError(MCGDError, ValueError):
    """Transition matrix text file is malformed"""


# Chain analysis

class NotErgodic(MCGDError):
    """Operation needs an irreducible aperiodic chain"""


class NoConvergence(MCGDError):
    """Iterative solve did not produce a usable answer"""


class EigSolverFailure(MCGDError):
    """Eigen-decomposition failed"""


class NotSymmetric(MCGDError):
    """Operation needs a symmetric transition matrix"""


class Defective(MCGDError):
    """Eigenvector matrix is too ill-conditioned for the diagonalizable bound"""

    def __init__(self, condition_number: float):
        self.condition_number = condition_number
        super().__init__(f"eigenvector matrix condition number {condition_number:.3e} exceeds limit")


class InsufficientDecay(MCGDError):
    """Deviation never fell below the fit threshold"""


# Chain construction

class ConnectivityTimeout(MCGDError):
    """No connected graph after the maximum number of redraws"""


class CycleSearchTimeout(MCGDError):
    """Could not place the requested directed cycles"""


class ZeroRow(MCGDError):
    """Weight matrix row sums to zero"""

    def __init__(self, row: int):
        self.row = row
        super().__init__(f"weight row {row} sums to zero")


# Objectives

class DimensionMismatch(MCGDError, ValueError):
    """Vector dimensions disagree"""


class EmptyComponents(MCGDError, ValueError):
    """Finite-sum objective needs at least one component"""


# Solver

class PreconditionViolation(MCGDError):
    """Run inputs violate a convergence condition"""

    def __init__(self, condition: str, detail: str):
        self.condition = condition
        self.detail = detail
        super().__init__(f"{condition}: {detail}")


class NonFiniteIterate(MCGDError):
    """Iterate became NaN or infinite"""

    def __init__(self, k: int, iterate: Optional[object] = None):
        self.k = k
        self.iterate = iterate
        super().__init__(f"non-finite iterate at k={k}")


class StepBoundExceeded(MCGDError):
    """A step moved further than gamma_k (D + ||e^k||)"""

    def __init__(self, k: int, step_norm: float, limit: float):
        self.k = k
        self.step_norm = step_norm
        self.limit = limit
        super().__init__(f"step {step_norm:.6g} at k={k} exceeds gamma_k * D bound {limit:.6g}")


class InsufficientData(MCGDError, ValueError):
    """Too few points for a fit"""


class NonPositiveValues(MCGDError, ValueError):
    """Log-log fit needs strictly positive values"""
