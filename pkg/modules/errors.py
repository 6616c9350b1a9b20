"""
Errors - Exception hierarchy shared by every JoinSketch module
Each category carries the process exit code the CLI reports for it
"""


class JoinSketchError(Exception):
    """Base class for all JoinSketch failures"""
    exit_code = 1


class ConfigError(JoinSketchError):
    """Bad config file, flag value, or missing column reference"""
    exit_code = 2


class DataError(JoinSketchError):
    """Malformed or incompatible input data"""
    exit_code = 3

    def __init__(self, message: str, line: int = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionMismatchError(DataError, ValueError):
    """Operand shapes do not agree"""


class EmptyJoinError(DataError):
    """A nonempty join was required but no key tuple matched"""


class MaterializationCapError(DataError):
    """Join is too large for the brute-force oracle"""

    def __init__(self, rows: int, cap: int):
        super().__init__(
            f"join has {rows} rows which exceeds the materialization cap of {cap}; "
            f"use the sketched path instead"
        )
        self.rows = rows
        self.cap = cap


class AlgorithmError(JoinSketchError):
    """An algorithm could not complete or a checked bound failed"""
    exit_code = 4


class CyclicQueryError(AlgorithmError):
    """Query hypergraph does not reduce to empty under GYO rules"""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


class AlgebraLawError(AlgorithmError):
    """A DB-sketch algebra failed one of its randomized law checks"""

    def __init__(self, violations):
        super().__init__("algebra law check failed: " + "; ".join(violations[:5]))
        self.violations = list(violations)


class RegressionDivergedError(AlgorithmError):
    """Preconditioned gradient descent grew the residual"""

    def __init__(self, message: str, iterations: int, residuals):
        super().__init__(message)
        self.iterations = iterations
        self.residuals = list(residuals)


class InvariantViolation(AlgorithmError):
    """An internal size bound did not hold"""


class ZeroMassError(AlgorithmError):
    """Sampling requested from a distribution with zero total mass"""
