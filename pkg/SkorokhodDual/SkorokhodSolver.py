import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from SkorokhodDual import __version__
from SkorokhodDual.lattice.Lattice import DEFAULT_STATE_BUDGET, Lattice, build_lattice, monroe_horizon, \
    stabilize_horizon
from SkorokhodDual.measures.DiscreteMeasure import PeacockVector
from SkorokhodDual.payoffs.PayoffSpec import PayoffSpec, validate_boundedness
from SkorokhodDual.solvers.DualOptimizer import DualResult, minimize_dual
from SkorokhodDual.solvers.MultiStop import HedgeTable, StoppedLaw, SuperhedgeReport, export_grid_csv, \
    extract_hedge, is_coupled, verify_superhedge
from SkorokhodDual.solvers.PrimalLP import FlowLP, GapReport, PrimalSolution, build_primal_lp, \
    duality_gap_report, solve_lp
from SkorokhodDual.utils.LoggerGenerator import LoggerGenerator
from SkorokhodDual.utils.errors import ArityMismatch, Infeasible, UnrepresentableAtom
from SkorokhodDual.utils.io_utils import write_csv

CAP_BINDING_MASS = 1e-9


@dataclass
class SolveReport:
    """
    Everything a solve of an embedding problem produced: primal embedding, dual superhedge, their gap and the
    certificates. ``value`` is the dual best value when the dual ran (cost of the extracted superhedge), otherwise
    the primal value.
    """
    instance: Dict
    lattice: Lattice
    payoff: PayoffSpec
    primal: Optional[PrimalSolution] = None
    dual: Optional[DualResult] = None
    gap: Optional[GapReport] = None
    hedge: Optional[HedgeTable] = None
    superhedge: Optional[SuperhedgeReport] = None
    certificates: Dict = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    cap_binding: Optional[bool] = None

    @property
    def value(self) -> float:
        if self.dual is not None:
            return self.dual.best_value
        return self.primal.value

    @property
    def passed(self) -> bool:
        return self.gap is None or self.gap.passed

    def to_dict(self) -> Dict:
        dual = None
        if self.dual is not None:
            dual = {'best_value': self.dual.best_value, 'iterations': self.dual.iterations,
                    'stopped_early': self.dual.stopped_early, 'inner_value': self.dual.best_evaluation.inner_value,
                    'integral': self.dual.best_evaluation.integral}
        return {
            'instance': self.instance,
            'primal': None if self.primal is None else self.primal.to_dict(),
            'dual': dual,
            'gap': None if self.gap is None else self.gap.to_dict(),
            'value': self.value,
            'cap_binding': self.cap_binding,
            'certificates': self.certificates,
            'timings': self.timings,
        }

    def write_artifacts(self, folder: Union[str, Path]):
        """
        Write the CSV artifacts of the solve: dual history, potentials, stopped laws, hedge and value grids

        :param folder: destination folder
        :type folder: Union[str, Path]
        :return: None
        :rtype: None
        """
        folder = Path(folder)
        l = self.lattice
        if self.dual is not None:
            self.dual.export_history_csv(folder / "dual_history.csv")
            self.dual.export_lambda_csv(folder / "lambda.csv")
            grids = self.dual.best_evaluation.inner.grids
            anchors = grids.anchors if grids.coupled else None
            export_grid_csv(folder / "values.csv", l, grids.values, anchors)
            if self.hedge is not None:
                export_grid_csv(folder / "hedge.csv", l, self.hedge.hedges, anchors)
        if self.primal is not None:
            write_csv(folder / "stopped_law.csv", ('phase', 'value', 'mass'), stopped_law_rows(self.primal.law, l))


def stopped_law_rows(law: StoppedLaw, l: Lattice):
    for k in range(1, len(law.masses) + 1):
        values, masses = law.law(k, l, tol=0.)
        for x, m in zip(values, masses):
            yield k, float(x), float(m)


class SkorokhodSolver:
    """
    This class runs the whole pipeline of an embedding problem on the lattice: boundedness check, primal flow
    program, dual subgradient descent, superhedge extraction and verification, duality gap and horizon certificate
    """

    def __init__(self, marginals: PeacockVector, payoff: PayoffSpec, steps: int, dt: float,
                 budget: int = DEFAULT_STATE_BUDGET, monroe_eps: float = 0.1, run_primal: bool = True,
                 max_pivots: int = 50000, pricing: str = "dantzig", feasibility_tolerance: float = 1e-8,
                 refactor_every: int = 100, run_dual: bool = True, dual_iterations: int = 1000,
                 step_rule: str = "polyak", step_scale: Optional[float] = None, positive: bool = True,
                 dual_stop_gap: Optional[float] = None, stabilize_tolerance: Optional[float] = None,
                 max_steps: Optional[int] = None,
                 verify: bool = True, verification_mode: str = "auto", verification_samples: int = 10 ** 6,
                 gap_tolerance: float = 1e-2, weak_duality_tolerance: float = 1e-9,
                 representability_tolerance: float = 1e-9, seed: int = 0, show_progress: bool = False,
                 name: str = 'default'):
        """
        Initialise the solver of one instance

        :param marginals: the peacock to embed
        :type marginals: PeacockVector
        :param payoff: the reward, its arity must match the number of marginals
        :type payoff: PayoffSpec
        :param steps: horizon N of the lattice, the first horizon tried when the horizon is stabilized
        :type steps: int
        :param dt: time step of the lattice
        :type dt: float
        :param run_primal: solve the flow program
        :type run_primal: bool
        :param run_dual: run the subgradient descent (with Polyak steps towards the primal value when available)
        :type run_dual: bool
        :param stabilize_tolerance: if set, the horizon is doubled from steps until the value moves by less than this
            tolerance (primal value, or dual best value when the primal does not run)
        :type stabilize_tolerance: Optional[float]
        :param max_steps: largest horizon tried by the stabilization, 8 * steps by default
        :type max_steps: Optional[int]
        :param verify: check the extracted superhedge pathwise
        :type verify: bool
        :param name: name of the instance, used in the logs
        :type name: str

        The remaining parameters are forwarded to the lattice, the simplex, the dual optimizer and the verification.
        """
        if payoff.n != len(marginals):
            raise ArityMismatch(len(marginals), payoff.n)
        if not (run_primal or run_dual):
            raise ValueError("at least one of the primal and the dual must run")
        if stabilize_tolerance is not None and not stabilize_tolerance > 0:
            raise ValueError(f"the stabilization tolerance must be positive, received {stabilize_tolerance}")
        if max_steps is not None and max_steps < steps:
            raise ValueError(f"max_steps={max_steps} is below the first horizon {steps}")
        self.marginals = marginals
        self.payoff = payoff
        self.steps = steps
        self.dt = dt
        self.budget = budget
        self.monroe_eps = monroe_eps
        self.run_primal = run_primal
        self.max_pivots = max_pivots
        self.pricing = pricing
        self.feasibility_tolerance = feasibility_tolerance
        self.refactor_every = refactor_every
        self.run_dual = run_dual
        self.dual_iterations = dual_iterations
        self.step_rule = step_rule
        self.step_scale = step_scale
        self.positive = positive
        self.dual_stop_gap = dual_stop_gap
        self.stabilize_tolerance = stabilize_tolerance
        self.max_steps = max_steps if max_steps is not None else 8 * steps
        self.verify = verify
        self.verification_mode = verification_mode
        self.verification_samples = verification_samples
        self.gap_tolerance = gap_tolerance
        self.weak_duality_tolerance = weak_duality_tolerance
        self.representability_tolerance = representability_tolerance
        self.seed = seed
        self.show_progress = show_progress
        self.name = name
        self.logger = LoggerGenerator.get_shared_logger(f"SkorokhodSolver_{name}")

    def build_lattice(self, steps: Optional[int] = None) -> Lattice:
        """
        lattice tracking the statistics the payoff reads, with the running extrema saturated at the payoff caps
        """
        max_cap, min_floor = self.payoff.level_caps(math.sqrt(self.dt))
        return build_lattice(steps or self.steps, self.dt, self.payoff.required_augment(), budget=self.budget,
                             max_level_cap=max_cap, min_level_floor=min_floor)

    def _solve_primal(self, l: Lattice, payoff: PayoffSpec) -> PrimalSolution:
        lp = build_primal_lp(l, payoff, self.marginals, self.representability_tolerance)
        return solve_lp(lp, max_iterations=self.max_pivots, pricing=self.pricing,
                        feasibility_tolerance=self.feasibility_tolerance, refactor_every=self.refactor_every)

    def _solve_dual(self, l: Lattice, payoff: PayoffSpec, target: Optional[float]) -> DualResult:
        return minimize_dual(l, payoff, self.marginals, iterations=self.dual_iterations, step_rule=self.step_rule,
                             step_scale=self.step_scale, positive=self.positive, target=target,
                             show_progress=self.show_progress, stop_gap=self.dual_stop_gap)

    def stabilize_steps(self) -> Tuple[int, Dict, Dict[int, PrimalSolution]]:
        """
        Double the horizon from ``steps`` until the value of the problem moves by less than the stabilization
        tolerance. A horizon too short to embed the marginals has no value and never counts as stabilized.

        :return: the retained horizon, the horizon certificate and the primal solutions computed on the way
        :rtype: Tuple[int, Dict, Dict[int, PrimalSolution]]
        """
        solutions = {}

        def horizon_value(steps: int) -> float:
            l = self.build_lattice(steps)
            payoff = self.payoff.with_upper_bound(validate_boundedness(self.payoff, l))
            try:
                if self.run_primal:
                    solutions[steps] = self._solve_primal(l, payoff)
                    return solutions[steps].value
                return self._solve_dual(l, payoff, None).best_value
            except (Infeasible, UnrepresentableAtom):
                self.logger.info(f"the marginals cannot be embedded within {steps} steps")
                return math.nan

        steps, value, trace = stabilize_horizon(horizon_value, self.steps, self.stabilize_tolerance, self.max_steps,
                                                show_progress=self.show_progress)
        stabilized = len(trace) >= 2 and abs(trace[-1][1] - trace[-2][1]) < self.stabilize_tolerance
        certificate = {'start_steps': self.steps, 'max_steps': self.max_steps, 'tolerance': self.stabilize_tolerance,
                       'steps': steps, 'stabilized': stabilized,
                       'trace': [[s, None if math.isnan(v) else v] for s, v in trace]}
        self.logger.info(f"horizon {steps} retained, trace {trace}")
        return steps, certificate, solutions

    def build_lp(self, l: Optional[Lattice] = None) -> FlowLP:
        l = l or self.build_lattice()
        return build_primal_lp(l, self.payoff, self.marginals, self.representability_tolerance)

    def _cap_binding(self, l: Lattice, law: StoppedLaw) -> Optional[bool]:
        if law.coupled:
            return None
        mass = 0.
        for k in range(1, self.payoff.n + 1):
            for i in range(l.steps + 1):
                active = self.payoff.cap_activity(k, l.snapshot(i))
                mass += float(law.state_mass(k, i)[active].sum())
        return mass > CAP_BINDING_MASS

    def _monroe_certificate(self, l: Lattice) -> Dict:
        required = monroe_horizon(self.marginals[len(self.marginals) - 1], self.monroe_eps)
        return {'eps': self.monroe_eps, 'required_horizon': required, 'lattice_horizon': l.horizon,
                'certified': l.horizon >= required}

    def solve(self) -> SolveReport:
        """
        Run the pipeline

        :return: the report of the solve
        :rtype: SolveReport
        """
        timings = {}
        steps, horizon, solutions = self.steps, None, {}
        if self.stabilize_tolerance is not None:
            start = time.perf_counter()
            steps, horizon, solutions = self.stabilize_steps()
            timings['stabilization'] = time.perf_counter() - start
        start = time.perf_counter()
        l = self.build_lattice(steps)
        payoff = self.payoff.with_upper_bound(validate_boundedness(self.payoff, l))
        timings['lattice'] = time.perf_counter() - start
        instance = {'name': self.name, 'n': payoff.n, 'steps': l.steps, 'dt': l.dt, 'states': l.state_count,
                    'payoff': payoff.describe(), 'coupled': is_coupled(l, payoff),
                    'marginals': [m.atoms for m in self.marginals]}
        report = SolveReport(instance, l, payoff, timings=timings)
        if horizon is not None:
            report.certificates['horizon'] = horizon

        if self.run_primal:
            start = time.perf_counter()
            report.primal = solutions.get(steps) or self._solve_primal(l, payoff)
            report.cap_binding = self._cap_binding(l, report.primal.law)
            timings['primal'] = time.perf_counter() - start
            self.logger.info(f"primal value {report.primal.value!r} in {report.primal.iterations} pivots")
            if report.cap_binding:
                self.logger.warning("the optimal embedding puts mass where the cap or the floor of the payoff is "
                                    "active, the value depends on it")

        if self.run_dual:
            start = time.perf_counter()
            target = report.primal.value if report.primal is not None else None
            report.dual = self._solve_dual(l, payoff, target)
            timings['dual'] = time.perf_counter() - start

            if self.verify and l.level_bounds is None:
                start = time.perf_counter()
                report.hedge = extract_hedge(report.dual.best_evaluation.inner.grids, l)
                report.superhedge = verify_superhedge(report.dual.best_lambda, report.hedge, payoff, l,
                                                      mode=self.verification_mode,
                                                      samples=self.verification_samples, seed=self.seed,
                                                      show_progress=self.show_progress)
                report.certificates['superhedge'] = report.superhedge.to_dict()
                timings['verification'] = time.perf_counter() - start

        if report.primal is not None and report.dual is not None:
            report.gap = duality_gap_report(report.primal, report.dual.best_value, tolerance=self.gap_tolerance,
                                            weak_duality_tolerance=self.weak_duality_tolerance)
            report.certificates['weak_duality'] = True
            if not report.gap.passed:
                self.logger.warning(f"relative gap {report.gap.relative_gap!r} above {self.gap_tolerance}")
        report.certificates['monroe'] = self._monroe_certificate(l)
        if report.primal is not None:
            report.certificates['marginal_residual'] = report.primal.marginal_residual
            report.certificates['phase_one_residual'] = report.primal.infeasibility
        report.timings['total'] = float(np.sum(list(timings.values())))
        return report
