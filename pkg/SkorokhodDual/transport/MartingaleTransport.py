from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from SkorokhodDual.measures.DiscreteMeasure import PeacockVector
from SkorokhodDual.payoffs.PayoffSpec import Barrier, ForwardStart, LocalTime, Lookback, PayoffComponent, \
    PayoffSpec, StopTimeFunction
from SkorokhodDual.SkorokhodSolver import SkorokhodSolver, SolveReport
from SkorokhodDual.utils.LoggerGenerator import LoggerGenerator
from SkorokhodDual.utils.errors import ArityMismatch, CapRequired, NotRepresentable, SkorokhodError

# kinds which read the calendar path between the maturities, lost by the time change
CALENDAR_KINDS = ('asian', 'calendar_max')
TRANSPORT_KINDS = ('lookback', 'barrier', 'variance', 'forward_start', 'local_time') + CALENDAR_KINDS


@dataclass(frozen=True)
class TransportPayoff:
    """
    Payoff of a continuous martingale X observed at the maturities t_1 < ... < t_n = 1, through its values, its
    quadratic variation and its running extrema at the maturities.

    ``maturity`` (1-based, default the last one) is the maturity read by the single maturity kinds,
    ``floor`` is the floor of the whole payoff (needed by lower bounds of payoffs unbounded below).
    """
    kind: str
    maturities: Tuple[float, ...] = (1.,)
    weight: float = 1.
    cap: Optional[float] = None
    floor: Optional[float] = None
    extreme: str = 'max'
    extreme_floor: Optional[float] = None
    upper: Optional[float] = None
    lower: Optional[float] = None
    knock: str = 'in'
    shape: str = 'linear'
    strike: float = 0.
    coefficients: Optional[Tuple[float, ...]] = None
    maturity: Optional[int] = None

    def __post_init__(self):
        if self.kind not in TRANSPORT_KINDS:
            raise ValueError(f"unknown transport payoff kind {self.kind!r}")
        maturities = tuple(float(t) for t in self.maturities)
        if not maturities or any(t <= 0 for t in maturities) \
                or any(a >= b for a, b in zip(maturities[:-1], maturities[1:])):
            raise ValueError(f"maturities must be positive and increasing, received {maturities}")
        if abs(maturities[-1] - 1.) > 1e-12:
            raise ValueError(f"the last maturity is the unit of time, received {maturities[-1]}")
        object.__setattr__(self, 'maturities', maturities)
        if self.maturity is not None and not 1 <= self.maturity <= len(maturities):
            raise ValueError(f"maturity index {self.maturity} outside 1..{len(maturities)}")

    @property
    def n(self) -> int:
        return len(self.maturities)

    def describe(self) -> Dict:
        return {'kind': self.kind, 'maturities': list(self.maturities), 'weight': self.weight, 'cap': self.cap,
                'floor': self.floor}


def _component(tp: TransportPayoff) -> PayoffComponent:
    if tp.kind == 'lookback':
        return Lookback(weight=tp.weight, cap=tp.cap, side=tp.extreme, floor=tp.extreme_floor, stop=tp.maturity)
    if tp.kind == 'barrier':
        return Barrier(payout=tp.weight, upper=tp.upper, lower=tp.lower, knock=tp.knock, stop=tp.maturity)
    if tp.kind == 'local_time':
        return LocalTime(coefficient=tp.weight, cap=tp.cap, stop=tp.maturity)
    if tp.kind == 'variance':
        # <X>_{t_k} becomes the stop time theta_k
        coefficients = tp.coefficients
        if coefficients is None:
            coefficients = [0.] * tp.n
            coefficients[(tp.maturity or tp.n) - 1] = tp.weight
        if len(coefficients) != tp.n:
            raise ArityMismatch(tp.n, len(coefficients))
        return StopTimeFunction(coefficients=tuple(coefficients), shape=tp.shape, strike=tp.strike, cap=tp.cap)
    if tp.n != 2:
        raise NotRepresentable(f"a forward start payoff reads two maturities, {tp.n} were given")
    return ForwardStart(weight=tp.weight, cap=tp.cap)


def timechange_payoff(tp: TransportPayoff) -> PayoffSpec:
    """
    Reward of the embedding problem equivalent to the transport payoff: the value at the maturity t_k becomes the
    walk stopped at theta_k, the quadratic variation at t_k becomes theta_k and the running extrema up to t_k the
    extrema of the walk up to theta_k

    :param tp: the transport payoff
    :type tp: TransportPayoff
    :return: the reward of the stopped walk
    :rtype: PayoffSpec
    """
    if tp.kind in CALENDAR_KINDS:
        raise NotRepresentable(f"the {tp.kind} payoff depends on the calendar path between the maturities")
    return PayoffSpec(_component(tp), n=tp.n, floor=tp.floor)


@dataclass
class PriceBound:
    """
    One side of the model free price interval, ``report`` being the solve of the (negated for the lower side) reward
    """
    side: str
    bound: float
    primal_bound: Optional[float]
    report: SolveReport

    @property
    def cap_binding(self) -> Optional[bool]:
        return self.report.cap_binding

    def to_dict(self) -> Dict:
        hedge = None
        if self.report.dual is not None:
            hedge = {'static': [[{'strike': s, 'value': v} for s, v in zip(strikes, values)]
                                for strikes, values in zip(self.report.dual.best_lambda.strikes,
                                                           self.report.dual.best_lambda.values)],
                     'dynamic': 'hedge.csv'}
        return {'side': self.side, 'bound': self.bound, 'primal_bound': self.primal_bound,
                'cap_binding': self.cap_binding, 'hedge': hedge, 'solve': self.report.to_dict()}


def price_bounds(tp: TransportPayoff, mu: PeacockVector, side: str = "upper", **solver_kwargs) -> PriceBound:
    """
    Model free bound on the price of the transport payoff over the martingales with marginals mu at the maturities.
    The upper bound is the value of the time changed embedding problem, the lower bound minus the value of the
    negated problem.

    :param tp: the transport payoff
    :type tp: TransportPayoff
    :param mu: the marginals at the maturities
    :type mu: PeacockVector
    :param side: 'upper' or 'lower'
    :type side: str
    :param solver_kwargs: lattice, primal, dual and verification settings of :class:`SkorokhodSolver`
    :return: the bound with the report of its solve
    :rtype: PriceBound
    """
    if side not in ("upper", "lower"):
        raise ValueError(f"side must be 'upper' or 'lower', received {side!r}")
    payoff = timechange_payoff(tp)
    if side == "lower":
        payoff = payoff.negated()
        if not payoff.bounded_above():
            raise CapRequired(f"the {tp.kind} payoff is not bounded below, declare a floor for a lower bound")
    solver_kwargs.setdefault('name', f"{tp.kind}_{side}")
    report = SkorokhodSolver(mu, payoff, **solver_kwargs).solve()
    sign = 1. if side == "upper" else -1.
    primal = None if report.primal is None else sign * report.primal.value
    return PriceBound(side, sign * report.value, primal, report)


def model_free_bounds(tp: TransportPayoff, mu: PeacockVector, tolerance: float = 1e-9,
                      **solver_kwargs) -> Tuple[PriceBound, PriceBound]:
    """
    Both sides of the price interval, checked to be ordered

    :return: (lower, upper)
    :rtype: Tuple[PriceBound, PriceBound]
    """
    upper = price_bounds(tp, mu, "upper", **solver_kwargs)
    lower = price_bounds(tp, mu, "lower", **solver_kwargs)
    if upper.bound < lower.bound - tolerance:
        LoggerGenerator.get_shared_logger("model_free_bounds").error(
            f"upper bound {upper.bound!r} below lower bound {lower.bound!r}")
        raise SkorokhodError(f"inconsistent price bounds: upper {upper.bound!r} < lower {lower.bound!r}")
    return lower, upper
