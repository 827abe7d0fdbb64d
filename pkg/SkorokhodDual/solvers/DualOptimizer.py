import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from SkorokhodDual.lattice.Lattice import Lattice
from SkorokhodDual.measures.DiscreteMeasure import PeacockVector
from SkorokhodDual.payoffs.PayoffSpec import PayoffSpec
from SkorokhodDual.solvers.MultiStop import MultiStopResult, StoppedLaw, multi_stopping_value, propagate
from SkorokhodDual.utils.LoggerGenerator import LoggerGenerator
from SkorokhodDual.utils.errors import ArityMismatch, StrikeGridError
from SkorokhodDual.utils.io_utils import write_csv


class DualPotential:
    """
    Vector of potentials lambda_1, ..., lambda_n, each one piecewise linear between its strikes and extended linearly
    beyond the end strikes. A potential is the combination of its values with the hat functions of its strikes, the
    two end hats being extended linearly as well.
    """

    def __init__(self, strikes: Sequence[Sequence[float]], values: Sequence[Sequence[float]]):
        """
        :param strikes: per marginal, the strictly increasing strikes
        :type strikes: Sequence[Sequence[float]]
        :param values: per marginal, the values of the potential at the strikes
        :type values: Sequence[Sequence[float]]
        """
        if len(strikes) != len(values):
            raise ArityMismatch(len(strikes), len(values))
        self.strikes = [np.array(s, dtype=float) for s in strikes]
        self.values = [np.array(v, dtype=float) for v in values]
        for k, (s, v) in enumerate(zip(self.strikes, self.values)):
            if s.ndim != 1 or len(s) == 0 or len(s) != len(v):
                raise StrikeGridError(f"potential {k + 1} needs as many values as strikes, at least one")
            if np.any(np.diff(s) <= 0):
                raise StrikeGridError(f"strikes of potential {k + 1} are not strictly increasing")
            if not np.all(np.isfinite(s)) or not np.all(np.isfinite(v)):
                raise StrikeGridError(f"potential {k + 1} has non finite strikes or values")

    @property
    def n(self) -> int:
        return len(self.strikes)

    @classmethod
    def zeros(cls, strikes: Sequence[Sequence[float]]) -> 'DualPotential':
        return cls(strikes, [np.zeros(len(s)) for s in strikes])

    @classmethod
    def from_functions(cls, strikes: Sequence[Sequence[float]], functions) -> 'DualPotential':
        return cls(strikes, [[f(x) for x in s] for s, f in zip(strikes, functions)])

    def basis(self, k: int, x) -> np.ndarray:
        """
        Hat functions of the strikes of potential k evaluated at x

        :param k: index of the potential, 1-based
        :type k: int
        :param x: evaluation points
        :type x: array like
        :return: matrix of shape (len(x), number of strikes)
        :rtype: np.ndarray
        """
        s = self.strikes[k - 1]
        x = np.atleast_1d(np.asarray(x, dtype=float))
        result = np.zeros((len(x), len(s)))
        if len(s) == 1:
            result[:, 0] = 1.
            return result
        segment = np.clip(np.searchsorted(s, x, side='right') - 1, 0, len(s) - 2)
        t = (x - s[segment]) / (s[segment + 1] - s[segment])
        rows = np.arange(len(x))
        result[rows, segment] = 1. - t
        result[rows, segment + 1] += t
        return result

    def evaluate(self, k: int, x) -> np.ndarray:
        shape = np.shape(x)
        return (self.basis(k, np.ravel(x)) @ self.values[k - 1]).reshape(shape)

    def with_values(self, values: Sequence[np.ndarray]) -> 'DualPotential':
        return DualPotential(self.strikes, values)

    def shifted(self, constants: Sequence[float]) -> 'DualPotential':
        return self.with_values([v + c for v, c in zip(self.values, constants)])

    def clipped(self) -> 'DualPotential':
        """
        projection on the nonnegative potentials
        """
        return self.with_values([np.maximum(v, 0.) for v in self.values])

    def covers(self, low: float, high: float) -> bool:
        return all(s[0] <= low + 1e-12 and s[-1] >= high - 1e-12 for s in self.strikes)

    def to_dict(self) -> Dict:
        return {'strikes': [s.tolist() for s in self.strikes], 'values': [v.tolist() for v in self.values]}

    def table_rows(self):
        for k, (s, v) in enumerate(zip(self.strikes, self.values), start=1):
            for strike, value in zip(s, v):
                yield k, float(strike), float(value)


def default_strikes(l: Lattice, mu: PeacockVector) -> List[np.ndarray]:
    """
    Every lattice value reachable within the horizon plus the support of each marginal
    """
    lattice_values = np.arange(-l.steps, l.steps + 1) * l.sqrt_dt
    return [np.union1d(lattice_values, m.positions) for m in mu]


@dataclass
class DualEvaluation:
    """
    Dual objective at a potential: value of the stopping problem plus the integrals of the potentials, with the
    subgradient read on the optimally stopped law
    """
    objective: float
    inner_value: float
    integral: float
    subgradient: List[np.ndarray]
    inner: MultiStopResult
    law: StoppedLaw

    @property
    def subgradient_norm(self) -> float:
        return math.sqrt(sum(float(g @ g) for g in self.subgradient))


def evaluate_dual(lam: DualPotential, l: Lattice, p: PayoffSpec, mu: PeacockVector) -> DualEvaluation:
    """
    Objective and subgradient of the dual at lam with a single inner solve

    :param lam: the potentials
    :type lam: DualPotential
    :param l: the lattice
    :type l: Lattice
    :param p: the payoff
    :type p: PayoffSpec
    :param mu: the marginals
    :type mu: PeacockVector
    :return: the evaluation
    :rtype: DualEvaluation
    """
    if lam.n != len(mu):
        raise ArityMismatch(len(mu), lam.n)
    inner = multi_stopping_value(l, p, lam)
    law = propagate(l, inner.policy)
    level_values = np.arange(-l.steps, l.steps + 1) * l.sqrt_dt
    integral = 0.
    subgradient = []
    for k, m in enumerate(mu, start=1):
        mu_mass = lam.basis(k, m.positions).T @ m.weights
        stopped_mass = lam.basis(k, level_values).T @ law.level_masses(k, l)
        integral += float(mu_mass @ lam.values[k - 1])
        subgradient.append(mu_mass - stopped_mass)
    return DualEvaluation(inner.value + integral, inner.value, integral, subgradient, inner, law)


def dual_objective(lam: DualPotential, l: Lattice, p: PayoffSpec, mu: PeacockVector) -> float:
    """
    sup_tau E[Phi - sum_k lambda_k(B_tau_k)] + sum_k mu_k(lambda_k)
    """
    return evaluate_dual(lam, l, p, mu).objective


def subgradient(lam: DualPotential, l: Lattice, p: PayoffSpec, mu: PeacockVector) -> List[np.ndarray]:
    """
    Per marginal and per strike: mu_k mass of the hat function of the strike minus the mass the optimally stopped law
    gives to it
    """
    return evaluate_dual(lam, l, p, mu).subgradient


@dataclass
class DualResult:
    best_value: float
    best_lambda: DualPotential
    history: List[Tuple[int, float, float]]
    best_evaluation: DualEvaluation
    stopped_early: bool = False

    @property
    def iterations(self) -> int:
        return len(self.history)

    def export_history_csv(self, path: Union[str, Path]):
        write_csv(path, ('iteration', 'objective', 'best'), self.history)

    def export_lambda_csv(self, path: Union[str, Path]):
        write_csv(path, ('marginal', 'strike', 'value'), self.best_lambda.table_rows())


@dataclass
class DualOptimizer:
    """
    Projected subgradient descent on the dual objective over the potentials, tracking the best observed value
    """
    lattice: Lattice
    payoff: PayoffSpec
    marginals: PeacockVector
    iterations: int = 1000
    step_rule: str = "sqrt"
    step_scale: Optional[float] = None
    positive: bool = True
    strikes: Optional[List[Sequence[float]]] = None
    target: Optional[float] = None
    warm_start: Optional[DualPotential] = None
    show_progress: bool = False
    stop_gap: Optional[float] = None
    logger: object = field(init=False, repr=False)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("the dual optimizer needs at least one iteration")
        if self.step_rule not in ("sqrt", "polyak"):
            raise ValueError(f"unknown step rule {self.step_rule!r}, expected 'sqrt' or 'polyak'")
        self.logger = LoggerGenerator.get_shared_logger("DualOptimizer")

    def initial_potential(self) -> DualPotential:
        if self.warm_start is not None:
            lam = self.warm_start
        else:
            strikes = self.strikes
            if strikes is None:
                strikes = default_strikes(self.lattice, self.marginals)
            lam = DualPotential.zeros(strikes)
        reach = self.lattice.steps * self.lattice.sqrt_dt
        if not lam.covers(-reach, reach):
            raise StrikeGridError(f"the strikes must cover the lattice values [{-reach}, {reach}]")
        return lam.clipped() if self.positive else lam

    def minimize(self) -> DualResult:
        """
        Run the iterations: lambda <- proj(lambda - step * g) with the step a / sqrt(k) (a = max(1, |f_1|) / |g_1| or
        the configured scale) or the Polyak step (f_k - target) / |g_k|^2 while the target is not met.
        Stops early on a zero subgradient or, when ``stop_gap`` is set, once the best value is within that relative
        gap of the target.

        :return: best value, best potential and history (iteration, objective, best)
        :rtype: DualResult
        """
        lam = self.initial_potential()
        history = []
        best_value, best_lambda, best_evaluation = math.inf, lam, None
        scale = self.step_scale
        stopped_early = False
        pbar = tqdm(range(1, self.iterations + 1), disable=not self.show_progress, desc="dual")
        for iteration in pbar:
            evaluation = evaluate_dual(lam, self.lattice, self.payoff, self.marginals)
            objective = evaluation.objective
            if objective < best_value:
                best_value, best_lambda, best_evaluation = objective, lam, evaluation
            history.append((iteration, objective, best_value))
            if self.stop_gap is not None and self.target is not None \
                    and best_value - self.target <= self.stop_gap * max(1., abs(self.target)):
                self.logger.debug(f"iteration {iteration}: best {best_value!r} within {self.stop_gap} of the target")
                stopped_early = True
                break

            norm = evaluation.subgradient_norm
            if norm <= 1e-14:
                self.logger.debug(f"iteration {iteration}: objective {objective!r} with a zero subgradient")
                stopped_early = True
                break
            if scale is None:
                scale = max(1., abs(objective)) / norm
            if self.step_rule == "polyak" and self.target is not None and objective > self.target + 1e-15:
                step = (objective - self.target) / norm ** 2
            else:
                step = scale / math.sqrt(iteration)
            self.logger.debug(f"iteration {iteration}: objective {objective!r}, best {best_value!r}, step {step!r}")
            pbar.set_postfix(best=best_value)

            lam = lam.with_values([v - step * g for v, g in zip(lam.values, evaluation.subgradient)])
            if self.positive:
                lam = lam.clipped()
        pbar.close()
        self.logger.info(f"dual finished after {len(history)} iterations, best value {best_value!r}")
        return DualResult(best_value, best_lambda, history, best_evaluation, stopped_early)


def minimize_dual(l: Lattice, p: PayoffSpec, mu: PeacockVector, iterations: int = 1000, step_rule: str = "sqrt",
                  step_scale: Optional[float] = None, positive: bool = True,
                  strikes: Optional[List[Sequence[float]]] = None, target: Optional[float] = None,
                  warm_start: Optional[DualPotential] = None, show_progress: bool = False,
                  stop_gap: Optional[float] = None) -> DualResult:
    """
    Minimize the dual objective by projected subgradient descent, see :class:`DualOptimizer`

    :param l: the lattice
    :type l: Lattice
    :param p: the payoff
    :type p: PayoffSpec
    :param mu: the marginals
    :type mu: PeacockVector
    :param iterations: maximum number of iterations
    :type iterations: int
    :param step_rule: 'sqrt' or 'polyak'
    :type step_rule: str
    :param step_scale: scale a of the a / sqrt(k) steps, derived from the first iteration if None
    :type step_scale: Optional[float]
    :param positive: project on the nonnegative potentials
    :type positive: bool
    :param strikes: strikes of the potentials, every lattice value and support point if None
    :type strikes: Optional[List[Sequence[float]]]
    :param target: target value of the Polyak steps, usually the primal value
    :type target: Optional[float]
    :param warm_start: initial potentials
    :type warm_start: Optional[DualPotential]
    :param show_progress: display a progress bar
    :type show_progress: bool
    :param stop_gap: relative gap to the target below which the descent stops
    :type stop_gap: Optional[float]
    :return: the best value (an upper bound of the primal value), its potentials and the history
    :rtype: DualResult
    """
    return DualOptimizer(l, p, mu, iterations, step_rule, step_scale, positive, strikes, target, warm_start,
                         show_progress, stop_gap).minimize()
