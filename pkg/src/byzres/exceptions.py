"""Exception hierarchy shared by all byzres modules."""


class ByzresError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ByzresError, ValueError):
    pass


class NonFiniteError(ByzresError, FloatingPointError):
    pass


class RankDeficientError(ByzresError, ValueError):
    def __init__(self, rank, cols):
        self.rank = rank
        self.cols = cols
        super().__init__(
            f"matrix is rank deficient: numerical rank {rank} < {cols} columns"
        )


class WellPosednessError(ByzresError, ValueError):
    """An aggregation rule was asked to run outside its (M, b) condition."""

    def __init__(self, rule, condition, M, b):
        self.rule = rule
        self.condition = condition
        self.M = M
        self.b = b
        super().__init__(
            f"{rule} requires {condition}; got M={M}, b={b}"
        )


class ConvergenceError(ByzresError, RuntimeError):
    def __init__(self, message, last_objective=None):
        self.last_objective = last_objective
        super().__init__(message)


class DivergenceError(ByzresError, RuntimeError):
    """An engine produced a non-finite iterate; ``trace`` holds the rows so far."""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class TopologyError(ByzresError, ValueError):
    pass


class ConfigError(ByzresError, ValueError):
    """Configuration problems; ``violations`` lists every offending key path."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class InvariantViolation(ByzresError, AssertionError):
    """A per-iteration safety invariant failed during a simulation."""
