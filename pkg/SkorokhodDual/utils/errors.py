from typing import Optional, Sequence


class SkorokhodError(Exception):
    """
    Base class of every error raised by the SkorokhodDual solvers
    """


class MeasureError(SkorokhodError, ValueError):
    """
    A marginal could not be built or does not satisfy a precondition
    """


class EmptyMeasure(MeasureError):
    pass


class WeightSumMismatch(MeasureError):

    def __init__(self, total: float):
        self.total = total
        super().__init__(f"weights sum to {total!r}, expected 1 within 1e-9")


class MeanMismatch(MeasureError):

    def __init__(self, mean_lo: float, mean_hi: float):
        self.mean_lo = mean_lo
        self.mean_hi = mean_hi
        super().__init__(f"measures have different means: {mean_lo!r} != {mean_hi!r}")


class NonFiniteValue(MeasureError):
    pass


class NotAPeacock(MeasureError):

    def __init__(self, pair_index: int, witness: Optional[float], message: str = ""):
        self.pair_index = pair_index
        self.witness = witness
        super().__init__(message or f"marginals {pair_index} and {pair_index + 1} are not in convex order"
                                    f" (violation at x={witness!r})")


class BudgetExceeded(SkorokhodError, ValueError):

    def __init__(self, state_count: int, budget: int):
        self.state_count = state_count
        self.budget = budget
        super().__init__(f"lattice needs at least {state_count} states, budget is {budget}")


class PayoffError(SkorokhodError, ValueError):
    pass


class ArityMismatch(PayoffError):

    def __init__(self, expected: int, received: int):
        self.expected = expected
        self.received = received
        super().__init__(f"payoff expects {expected} stop snapshots, received {received}")


class UnboundedAbove(PayoffError):
    pass


class UnsupportedPayoff(PayoffError):
    pass


class MissingAugmentation(PayoffError):

    def __init__(self, statistic: str):
        self.statistic = statistic
        super().__init__(f"the payoff needs the '{statistic}' statistic, build the lattice with it")


class DegenerateIncrement(SkorokhodError, RuntimeError):
    pass


class StrikeGridError(SkorokhodError, ValueError):
    pass


class UnrepresentableAtom(SkorokhodError, ValueError):

    def __init__(self, marginal_index: int, position: float):
        self.marginal_index = marginal_index
        self.position = position
        super().__init__(f"atom {position!r} of marginal {marginal_index + 1} is not a lattice value")


class Infeasible(SkorokhodError, RuntimeError):
    """
    The flow linear program has no solution: the marginals cannot be embedded on this lattice and horizon.
    The certificate y satisfies A^T y >= 0 and b^T y < 0 for the equality system A x = b, x >= 0.
    """

    def __init__(self, infeasibility: float, certificate: Optional[Sequence[float]] = None,
                 row_keys: Optional[Sequence] = None):
        self.infeasibility = infeasibility
        self.certificate = certificate
        self.row_keys = row_keys
        super().__init__(f"linear program is infeasible (phase one residual {infeasibility:.3e})")


class Unbounded(SkorokhodError, RuntimeError):
    """
    The objective decreases without limit along the edge opened by the entering column
    """

    def __init__(self, column: int, iterations: int):
        self.column = column
        self.iterations = iterations
        super().__init__(f"linear program is unbounded along column {column} (after {iterations} pivots)")


class IterationLimit(SkorokhodError, RuntimeError):

    def __init__(self, iterations: int):
        self.iterations = iterations
        super().__init__(f"simplex stopped after {iterations} iterations without reaching optimality")


class NegativeGap(SkorokhodError, RuntimeError):

    def __init__(self, gap: float):
        self.gap = gap
        super().__init__(f"dual value is below the primal value by {-gap:.3e}: weak duality is broken")


class HorizonTooShort(SkorokhodError, ValueError):

    def __init__(self, remaining_mass: float):
        self.remaining_mass = remaining_mass
        super().__init__(f"{remaining_mass:.3e} of mass is still unabsorbed at the horizon")


class AtomTooLarge(MeasureError):
    pass


class NotRepresentable(PayoffError):
    pass


class CapRequired(PayoffError):
    pass


class ConfigInvalid(SkorokhodError, ValueError):
    pass
