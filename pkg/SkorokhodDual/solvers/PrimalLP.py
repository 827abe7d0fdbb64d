import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from SkorokhodDual.lattice.Lattice import Lattice
from SkorokhodDual.measures.DiscreteMeasure import PeacockVector
from SkorokhodDual.payoffs.PayoffSpec import PayoffSpec
from SkorokhodDual.solvers.MultiStop import StoppedLaw, StoppingPolicy, is_coupled
from SkorokhodDual.solvers.RevisedSimplex import RevisedSimplex
from SkorokhodDual.utils.LoggerGenerator import LoggerGenerator
from SkorokhodDual.utils.errors import Infeasible, NegativeGap, UnrepresentableAtom

# variable key: (kind 's' or 'c', phase k, anchor global id, time index, index in slice)
VariableKey = Tuple[str, int, int, int, int]


@dataclass
class FlowLP:
    """
    Occupation measure program of the randomized ordered stopping rules: maximize sum reward * s subject to A x = b,
    x >= 0, x being the continuing masses c and the stopping masses s of every phase and state.

    Rows are the flow conservations (mass entering a state of phase k, from its parents or from the stop of phase
    k - 1 at the same state, leaves it by stopping or continuing) and one marginal row per support atom.
    """
    a: np.ndarray
    b: np.ndarray
    reward: np.ndarray
    variables: List[VariableKey]
    rows: List[Tuple]
    lattice: Lattice
    payoff: PayoffSpec
    marginals: PeacockVector
    coupled: bool

    @property
    def shape(self) -> Tuple[int, int]:
        return self.a.shape

    def variable_name(self, column: int) -> str:
        kind, k, anchor, i, index = self.variables[column]
        return f"{kind}_k{k}_a{anchor}_t{i}_x{index}"

    def row_name(self, row: int) -> str:
        key = self.rows[row]
        if key[0] == 'flow':
            return f"flow_k{key[1]}_a{key[2]}_t{key[3]}_x{key[4]}"
        return f"marginal_k{key[1]}_j{key[2]}"


@dataclass
class PrimalSolution:
    """
    Optimal embedding found by the flow program: value, stopped law and the randomized policy s / (s + c)
    """
    value: float
    law: StoppedLaw
    policy: StoppingPolicy
    x: np.ndarray
    infeasibility: float
    iterations: int
    basis: List[int]
    duals: np.ndarray
    marginal_residual: float
    reward_scale: float
    artificial_mass: float = 0.

    def to_dict(self) -> Dict:
        return {'value': self.value, 'infeasibility': self.infeasibility, 'iterations': self.iterations,
                'marginal_residual': self.marginal_residual, 'artificial_mass': self.artificial_mass}


@dataclass
class GapReport:
    primal: float
    dual: float
    gap: float
    relative_gap: float
    tolerance: float
    passed: bool

    def to_dict(self) -> Dict:
        return {'primal': self.primal, 'dual': self.dual, 'gap': self.gap, 'relative_gap': self.relative_gap,
                'tolerance': self.tolerance, 'pass': self.passed}


def _support_levels(l: Lattice, mu: PeacockVector, tol: float) -> List[Dict[int, float]]:
    supports = []
    for k, m in enumerate(mu):
        atoms = {}
        for x, w in m.atoms:
            if not l.is_lattice_value(x, tol):
                raise UnrepresentableAtom(k, x)
            atoms[int(l.to_level(x))] = w
        supports.append(atoms)
    return supports


def _reach(l: Lattice, starts: Dict[int, np.ndarray], lo: int, hi: int, first: int) -> Dict[int, np.ndarray]:
    """
    states of the slices >= first reachable from the start states by continuing strictly inside the band [lo, hi],
    as boolean masks per slice
    """
    reached = {}
    for i in range(first, l.steps + 1):
        levels = l.levels(i)
        mask = starts.get(i, np.zeros(len(levels), dtype=bool)).copy()
        if i > first:
            previous = reached[i - 1] & _continuing(l, i - 1, lo, hi)
            up, down = l.children(i - 1)
            mask[up[previous]] = True
            mask[down[previous]] = True
        reached[i] = mask & (levels >= lo) & (levels <= hi)
    return reached


def _continuing(l: Lattice, i: int, lo: int, hi: int) -> np.ndarray:
    levels = l.levels(i)
    return l.has_children(i) & (levels > lo) & (levels < hi)


def build_primal_lp(l: Lattice, p: PayoffSpec, mu: PeacockVector, representability_tolerance: float = 1e-9) -> FlowLP:
    """
    Build the flow program of the embedding problem on the lattice. The states of phase k are restricted to the
    convex hull of the support of mu_k: a martingale ending in that hull cannot leave it before its stop, so the
    restriction does not change the value.

    :param l: the lattice
    :type l: Lattice
    :param p: the payoff
    :type p: PayoffSpec
    :param mu: the marginals, every atom on a lattice value
    :type mu: PeacockVector
    :param representability_tolerance: tolerance on the atom positions, in levels
    :type representability_tolerance: float
    :return: the program
    :rtype: FlowLP
    """
    n = len(mu)
    if p.n != n:
        raise ValueError(f"the payoff has {p.n} stops for {n} marginals")
    coupled = is_coupled(l, p)
    supports = _support_levels(l, mu, representability_tolerance)
    hulls = [(min(s), max(s)) for s in supports]

    variables: List[VariableKey] = []
    rewards: List[float] = []
    slice_rewards = None if coupled else [[p.stop_reward(k, l.snapshot(i)) for i in range(l.steps + 1)]
                                          for k in range(1, n + 1)]

    def add_phase(k: int, anchor: int, reached: Dict[int, np.ndarray], reward_of):
        lo, hi = hulls[k - 1]
        next_hull = hulls[k] if k < n else None
        stop_entries = []
        for i in sorted(reached):
            levels = l.levels(i)
            continuing = reached[i] & _continuing(l, i, lo, hi)
            stopping = reached[i] & np.isin(levels, list(supports[k - 1]))
            if next_hull is not None:
                stopping &= (levels >= next_hull[0]) & (levels <= next_hull[1])
            slice_reward = reward_of(i) if stopping.any() else None
            for index in np.flatnonzero(reached[i]):
                if stopping[index]:
                    variables.append(('s', k, anchor, i, int(index)))
                    rewards.append(float(slice_reward[index]))
                    stop_entries.append((i, int(index)))
                if continuing[index]:
                    variables.append(('c', k, anchor, i, int(index)))
                    rewards.append(0.)
        return stop_entries

    if not coupled:
        starts = {0: np.ones(1, dtype=bool)}
        for k in range(1, n + 1):
            reached = _reach(l, starts, *hulls[k - 1], first=0)
            stops = add_phase(k, 0, reached, lambda i, k=k: slice_rewards[k - 1][i])
            starts = {}
            for i, index in stops:
                starts.setdefault(i, np.zeros(l.slice_size(i), dtype=bool))[index] = True
    else:
        reached = _reach(l, {0: np.ones(1, dtype=bool)}, *hulls[0], first=0)
        stops = add_phase(1, 0, reached, lambda i: np.zeros(l.slice_size(i)))
        for i1, index1 in stops:
            anchor = int(l.global_id(i1, index1))
            start = np.zeros(l.slice_size(i1), dtype=bool)
            start[index1] = True
            reached = _reach(l, {i1: start}, *hulls[1], first=i1)
            anchor_snap = l.snapshot(i1, np.array([index1]))
            add_phase(2, anchor, reached, lambda i, s=anchor_snap: p.joint_reward([s, l.snapshot(i)]))

    columns = {key: column for column, key in enumerate(variables)}
    row_index: Dict[Tuple, int] = {}
    entries: List[Tuple[int, int, float]] = []

    def row_of(key):
        if key not in row_index:
            row_index[key] = len(row_index)
        return row_index[key]

    for column, (kind, k, anchor, i, index) in enumerate(variables):
        entries.append((row_of(('flow', k, anchor, i, index)), column, 1.))
        if kind == 'c':
            up, down = l.children(i)
            for child in (up[index], down[index]):
                entries.append((row_of(('flow', k, anchor, i + 1, int(child))), column, -0.5))
        elif k < n:
            next_anchor = int(l.global_id(i, index)) if coupled else 0
            entries.append((row_of(('flow', k + 1, next_anchor, i, index)), column, -1.))
    root_row = row_of(('flow', 1, 0, 0, 0))
    for k, atoms in enumerate(supports, start=1):
        for level in sorted(atoms):
            row_of(('marginal', k, level))

    rows = [None] * len(row_index)
    for key, r in row_index.items():
        rows[r] = key
    a = np.zeros((len(rows), len(variables)))
    for r, column, value in entries:
        a[r, column] += value
    for column, (kind, k, anchor, i, index) in enumerate(variables):
        level = int(l.levels(i)[index])
        if kind == 's' and level in supports[k - 1]:
            a[row_index[('marginal', k, level)], column] = 1.
    b = np.zeros(len(rows))
    b[root_row] = 1.
    for k, atoms in enumerate(supports, start=1):
        for level, weight in atoms.items():
            b[row_index[('marginal', k, level)]] = weight

    LoggerGenerator.get_shared_logger("build_primal_lp").info(
        f"flow program built: {len(rows)} rows, {len(variables)} variables")
    return FlowLP(a, b, np.array(rewards), variables, rows, l, p, mu, coupled)


def _solution_grids(lp: FlowLP, x: np.ndarray) -> Tuple[StoppedLaw, StoppingPolicy]:
    l = lp.lattice
    n = len(lp.marginals)
    shapes = [(l.state_count if lp.coupled and k == 2 else 1) for k in range(1, n + 1)]
    stopped = [[np.zeros((shapes[k], l.slice_size(i))) for i in range(l.steps + 1)] for k in range(n)]
    continuing = [[np.zeros((shapes[k], l.slice_size(i))) for i in range(l.steps + 1)] for k in range(n)]
    for (kind, k, anchor, i, index), mass in zip(lp.variables, x):
        target = stopped if kind == 's' else continuing
        target[k - 1][i][anchor, index] = max(mass, 0.)
    probabilities = []
    for k in range(n):
        phase = []
        for s, c in zip(stopped[k], continuing[k]):
            total = s + c
            phase.append(np.where(total > 1e-300, s / np.where(total > 1e-300, total, 1.), 1.))
        probabilities.append(phase)
    return StoppedLaw(stopped, lp.coupled), StoppingPolicy(probabilities, lp.coupled)


def solve_lp(lp: FlowLP, max_iterations: int = 50000, pricing: str = "dantzig",
             feasibility_tolerance: float = 1e-8, refactor_every: int = 100) -> PrimalSolution:
    """
    Solve the flow program with the revised simplex

    :param lp: the program
    :type lp: FlowLP
    :param max_iterations: pivots allowed
    :type max_iterations: int
    :param pricing: 'dantzig' (with Bland's rule after degenerate runs) or 'bland'
    :type pricing: str
    :param feasibility_tolerance: artificial mass accepted at the end of phase one
    :type feasibility_tolerance: float
    :param refactor_every: pivots between two inversions of the basis
    :type refactor_every: int
    :return: the optimal embedding
    :rtype: PrimalSolution
    """
    simplex = RevisedSimplex(lp.a, lp.b, -lp.reward, max_iterations=max_iterations, pricing=pricing,
                             feasibility_tolerance=feasibility_tolerance, refactor_every=refactor_every)
    try:
        result = simplex.solve()
    except Infeasible as err:
        raise Infeasible(err.infeasibility, err.certificate, [lp.row_name(r) for r in range(len(lp.rows))]) from err
    law, policy = _solution_grids(lp, result.x)
    value = math.fsum(lp.reward * result.x)

    residual = 0.
    for k, m in enumerate(lp.marginals, start=1):
        masses = law.level_masses(k, lp.lattice)
        expected = np.zeros_like(masses)
        np.add.at(expected, lp.lattice.level_index(lp.lattice.to_level(m.positions)), m.weights)
        residual = max(residual, float(np.abs(masses - expected).sum()))
    reward_scale = float(np.abs(lp.reward).max(initial=0.))
    return PrimalSolution(value, law, policy, result.x, result.infeasibility, result.iterations, result.basis,
                          result.duals, residual, reward_scale, result.artificial_mass)


def duality_gap_report(ps: PrimalSolution, dual_best: float, tolerance: float = 1e-2,
                       weak_duality_tolerance: float = 1e-9) -> GapReport:
    """
    Compare the dual value with the primal value: the gap dual - primal must be nonnegative (weak duality, up to the
    tolerance widened by the truncation residual of the primal) and passes below the tolerance once divided by
    max(1, |primal|)

    :param ps: the primal solution
    :type ps: PrimalSolution
    :param dual_best: best dual value of the same instance
    :type dual_best: float
    :param tolerance: relative gap tolerance
    :type tolerance: float
    :param weak_duality_tolerance: accepted violation of weak duality
    :type weak_duality_tolerance: float
    :return: the gap report
    :rtype: GapReport
    """
    gap = dual_best - ps.value
    allowance = weak_duality_tolerance + ps.infeasibility * max(1., ps.reward_scale)
    if gap < -allowance:
        LoggerGenerator.get_shared_logger("duality_gap_report").error(f"weak duality broken: gap {gap!r}")
        raise NegativeGap(gap)
    relative = gap / max(1., abs(ps.value))
    return GapReport(ps.value, dual_best, gap, relative, tolerance, relative <= tolerance)


def _format_terms(terms: List[Tuple[float, str]]) -> List[str]:
    lines, current = [], []
    for coefficient, name in terms:
        sign = '-' if coefficient < 0 else '+'
        current.append(f"{sign} {abs(coefficient)!r} {name}")
        if len(current) == 8:
            lines.append(' '.join(current))
            current = []
    if current:
        lines.append(' '.join(current))
    return lines


def export_lp_format(lp: FlowLP) -> str:
    """
    Write the program in the CPLEX LP text format, for cross checks with external solvers
    """
    out = ["\\ flow program of the embedding problem", "Maximize"]
    objective = [(value, lp.variable_name(column)) for column, value in enumerate(lp.reward) if value != 0]
    if not objective and lp.variables:
        objective = [(0., lp.variable_name(0))]
    out.append(" obj: " + "\n      ".join(_format_terms(objective)))
    out.append("Subject To")
    for r in range(len(lp.rows)):
        columns = np.flatnonzero(lp.a[r])
        terms = [(float(lp.a[r, column]), lp.variable_name(column)) for column in columns]
        body = "\n      ".join(_format_terms(terms)) if terms else f"0 {lp.variable_name(0)}"
        out.append(f" {lp.row_name(r)}: {body} = {float(lp.b[r])!r}")
    out.append("End")
    return "\n".join(out) + "\n"
