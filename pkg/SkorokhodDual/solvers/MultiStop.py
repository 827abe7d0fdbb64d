import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from SkorokhodDual.lattice.Lattice import Lattice, Snapshot
from SkorokhodDual.payoffs.PayoffSpec import PayoffSpec
from SkorokhodDual.utils.LoggerGenerator import LoggerGenerator
from SkorokhodDual.utils.errors import ArityMismatch, DegenerateIncrement, UnsupportedPayoff
from SkorokhodDual.utils.io_utils import write_csv

TIE_TOLERANCE = 1e-12
MAX_COUPLED_STEPS = 20
MAX_EXHAUSTIVE_STEPS = 14

# Every grid below is a list over phases k = 1..n of lists over time slices i = 0..N of arrays of shape
# (anchors of phase k, states of slice i). Separable payoffs have a single anchor per phase. A coupled payoff
# over two stops indexes the phase 2 arrays by the global id of the state where the first stop happened.
Grid = List[List[np.ndarray]]


@dataclass
class ValueGrids:
    """
    Values to go v_k of the stopping problem: v_k at a state is the best expected reward still to be collected
    when k - 1 stops are already made, v_{n+1} being zero
    """
    values: Grid
    anchors: List[np.ndarray]
    coupled: bool

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def value(self) -> float:
        return float(self.values[0][0][0, 0])


@dataclass
class StoppingPolicy:
    """
    Probability to stop the current phase at every state: 1 to stop, 0 to continue, in between to randomize
    """
    stop_probability: Grid
    coupled: bool

    @property
    def n(self) -> int:
        return len(self.stop_probability)

    def action(self, k: int, i: int, index: int, anchor: int = 0) -> Union[str, float]:
        p = float(self.stop_probability[k - 1][i][anchor, index])
        if p >= 1.:
            return "stop"
        if p <= 0.:
            return "continue"
        return p


@dataclass
class HedgeTable:
    """
    Position H in the walk held at every state of phase k, between the stops k - 1 and k. ``cash`` is the initial
    capital of the hedge (the value of the stopping problem).
    """
    hedges: Grid
    cash: float
    coupled: bool

    @classmethod
    def zeros(cls, l: Lattice, n: int, coupled: bool = False, cash: float = 0.) -> 'HedgeTable':
        hedges = []
        for k in range(1, n + 1):
            anchors = l.state_count if coupled and k == 2 else 1
            hedges.append([np.zeros((anchors, l.slice_size(i))) for i in range(l.steps + 1)])
        return cls(hedges, cash, coupled)


@dataclass
class StoppedLaw:
    """
    Mass stopped by each phase at every state
    """
    masses: Grid
    coupled: bool

    def state_mass(self, k: int, i: int) -> np.ndarray:
        return self.masses[k - 1][i].sum(axis=0)

    def total_mass(self, k: int) -> float:
        return math.fsum(float(m.sum()) for m in self.masses[k - 1])

    def level_masses(self, k: int, l: Lattice) -> np.ndarray:
        """
        stopped mass of phase k aggregated by level, index j + N for the level j
        """
        masses = np.zeros(2 * l.steps + 1)
        for i in range(l.steps + 1):
            np.add.at(masses, l.level_index(l.levels(i)), self.state_mass(k, i))
        return masses

    def law(self, k: int, l: Lattice, tol: float = 0.) -> Tuple[np.ndarray, np.ndarray]:
        """
        law of the stopped value of phase k as (values, masses), restricted to masses above tol
        """
        masses = self.level_masses(k, l)
        values = (np.arange(-l.steps, l.steps + 1)) * l.sqrt_dt
        keep = masses > tol
        return values[keep], masses[keep]


@dataclass
class SnellResult:
    values: List[np.ndarray]
    policy: List[np.ndarray]

    @property
    def value(self) -> float:
        return float(self.values[0][0])


@dataclass
class MultiStopResult:
    value: float
    grids: ValueGrids
    policy: StoppingPolicy


@dataclass
class SuperhedgeReport:
    """
    Outcome of the pathwise check of a superhedge: the largest violation of
    cash + hedging gains + sum_k lambda_k(stopped values) >= Phi over the checked paths and ordered stop tuples
    """
    max_violation: float
    worst_path: List[int]
    worst_stops: Tuple[int, ...]
    mode: str
    checked: int

    def to_dict(self):
        return {'max_violation': self.max_violation, 'worst_path': self.worst_path,
                'worst_stops': list(self.worst_stops), 'mode': self.mode, 'checked': self.checked}


def _continuation(next_values: np.ndarray, up: np.ndarray, down: np.ndarray, aggregate: str) -> np.ndarray:
    """
    value of continuing from the states of a slice, -inf for the states without children
    """
    cont = np.full(next_values.shape[:-1] + up.shape, -np.inf)
    inner = up >= 0
    if inner.any():
        v_up = next_values[..., up[inner]]
        v_down = next_values[..., down[inner]]
        cont[..., inner] = 0.5 * (v_up + v_down) if aggregate == "mean" else np.maximum(v_up, v_down)
    return cont


def snell_envelope(l: Lattice, obstacle: Union[Callable[[Snapshot], np.ndarray], Sequence[np.ndarray]],
                   aggregate: str = "mean") -> SnellResult:
    """
    Smallest supermartingale of the walk dominating the obstacle, by backward induction.
    The policy stops where the obstacle attains the envelope (earliest stop on ties).

    :param l: the lattice
    :type l: Lattice
    :param obstacle: reward of stopping, as a function of a slice snapshot or as a list of arrays per slice
    :type obstacle: Union[Callable[[Snapshot], np.ndarray], Sequence[np.ndarray]]
    :param aggregate: 'mean' for the expectation over the children, 'max' for the pathwise maximum
    :type aggregate: str
    :return: envelope values and stop flags per slice
    :rtype: SnellResult
    """
    values = [None] * (l.steps + 1)
    policy = [None] * (l.steps + 1)
    for i in range(l.steps, -1, -1):
        reward = obstacle(l.snapshot(i)) if callable(obstacle) else obstacle[i]
        reward = np.broadcast_to(np.asarray(reward, dtype=float), (l.slice_size(i),))
        if i == l.steps:
            cont = np.full(l.slice_size(i), -np.inf)
        else:
            cont = _continuation(values[i + 1], *l.children(i), aggregate)
        stop = reward >= cont - TIE_TOLERANCE
        values[i] = np.where(stop, reward, cont)
        policy[i] = stop
    return SnellResult(values, policy)


def _potential_values(lam, k: int, x: np.ndarray) -> np.ndarray:
    if lam is None:
        return np.zeros(np.shape(x))
    return lam.evaluate(k, x)


def is_coupled(l: Lattice, p: PayoffSpec) -> bool:
    """
    Check if the payoff needs the anchored solver path, and if the anchored path can handle it
    """
    if p.is_separable:
        return False
    if p.n != 2:
        raise UnsupportedPayoff(f"coupled payoffs are limited to two stops, the {p.kind} payoff has {p.n}")
    if l.steps > MAX_COUPLED_STEPS:
        raise UnsupportedPayoff(f"coupled payoffs are limited to N <= {MAX_COUPLED_STEPS}, received N={l.steps}")
    return True


def _anchor_snapshot(l: Lattice) -> Snapshot:
    return l.global_snapshot().reshape((l.state_count, 1))


def _phase_reward(l: Lattice, p: PayoffSpec, lam, k: int, i: int, coupled: bool,
                  anchor_snap: Optional[Snapshot]) -> np.ndarray:
    """
    reward r_k collected by stopping phase k at the states of slice i, shape (anchors, states)
    """
    snap = l.snapshot(i)
    potential = _potential_values(lam, k, l.values(i))[None, :]
    if not coupled:
        return p.stop_reward(k, snap)[None, :] - potential
    if k == 1:
        return -potential
    current = snap.reshape((1, l.slice_size(i)))
    return p.joint_reward([anchor_snap, current]) - potential


def _check_arity(p: PayoffSpec, lam):
    if lam is not None and lam.n != p.n:
        raise ArityMismatch(p.n, lam.n)


def multi_stopping_value(l: Lattice, p: PayoffSpec, lam=None, aggregate: str = "mean") -> MultiStopResult:
    """
    Solve sup over ordered stopping rules of E[Phi - sum_k lambda_k(B_theta_k)] by backward induction over the
    slices. At every slice the phases are processed from n down to 1: stopping phase k collects r_k and hands over to
    phase k + 1 at the same state, so several stops may happen at the same node. Stopping is forced at the horizon.

    :param l: the lattice
    :type l: Lattice
    :param p: the payoff, separable or coupled over two stops (exact anchored path, N <= 20)
    :type p: PayoffSpec
    :param lam: the potentials lambda_k, None for zero potentials
    :type lam: DualPotential
    :param aggregate: 'mean' for the stopping problem, 'max' for the pathwise maximum of the reward
    :type aggregate: str
    :return: the value, the value grids and the optimal policy (earliest stop on ties)
    :rtype: MultiStopResult
    """
    _check_arity(p, lam)
    n = p.n
    coupled = is_coupled(l, p)
    anchor_snap = _anchor_snapshot(l) if coupled else None
    anchors = [np.arange(l.state_count) if coupled and k == 2 else np.zeros(1, dtype=np.int64)
               for k in range(1, n + 1)]
    values = [[None] * (l.steps + 1) for _ in range(n)]
    stops = [[None] * (l.steps + 1) for _ in range(n)]

    for i in range(l.steps, -1, -1):
        size = l.slice_size(i)
        up, down = l.children(i)
        for k in range(n, 0, -1):
            reward = _phase_reward(l, p, lam, k, i, coupled, anchor_snap)
            if k == n:
                following = 0.
            elif coupled:
                diagonal = values[1][i][l.offsets[i] + np.arange(size), np.arange(size)]
                following = diagonal[None, :]
            else:
                following = values[k][i]
            obstacle = reward + following
            if i == l.steps:
                cont = np.full(obstacle.shape, -np.inf)
            else:
                cont = _continuation(values[k - 1][i + 1], up, down, aggregate)
            stop = obstacle >= cont - TIE_TOLERANCE
            values[k - 1][i] = np.where(stop, obstacle, cont)
            stops[k - 1][i] = stop.astype(float)

    grids = ValueGrids(values, anchors, coupled)
    return MultiStopResult(grids.value, grids, StoppingPolicy(stops, coupled))


def extract_hedge(grids: ValueGrids, l: Lattice) -> HedgeTable:
    """
    Hedge ratios of the value grids: H = (v_k(up child) - v_k(down child)) / (value(up) - value(down)),
    NaN at the states without children

    :param grids: value grids of a multiple stopping solve
    :type grids: ValueGrids
    :param l: the lattice of the solve
    :type l: Lattice
    :return: the hedge table
    :rtype: HedgeTable
    """
    hedges = []
    for phase in grids.values:
        phase_hedges = []
        for i, v in enumerate(phase):
            h = np.full(v.shape, np.nan)
            up, down = l.children(i)
            inner = up >= 0
            if inner.any():
                next_values, next_x = phase[i + 1], l.values(i + 1)
                increment = next_x[up[inner]] - next_x[down[inner]]
                if np.any(increment == 0):
                    raise DegenerateIncrement(f"children with equal values at time index {i}")
                h[:, inner] = (next_values[:, up[inner]] - next_values[:, down[inner]]) / increment
            phase_hedges.append(h)
        hedges.append(phase_hedges)
    return HedgeTable(hedges, grids.value, grids.coupled)


def propagate(l: Lattice, policy: StoppingPolicy) -> StoppedLaw:
    """
    Push the unit mass of the root through the lattice under a (possibly randomized) policy

    :param l: the lattice
    :type l: Lattice
    :param policy: probability to stop every phase at every state, stopping is forced at the states without children
    :type policy: StoppingPolicy
    :return: mass stopped by every phase at every state
    :rtype: StoppedLaw
    """
    n = policy.n
    coupled = policy.coupled
    shapes = [[p.shape for p in phase] for phase in policy.stop_probability]
    mass = [[np.zeros(shape) for shape in phase] for phase in shapes]
    stopped = [[np.zeros(shape) for shape in phase] for phase in shapes]
    mass[0][0][0, 0] = 1.
    for i in range(l.steps + 1):
        size = l.slice_size(i)
        up, down = l.children(i)
        inner = up >= 0
        for k in range(1, n + 1):
            p = np.where(inner, policy.stop_probability[k - 1][i], 1.)
            stop = mass[k - 1][i] * p
            stopped[k - 1][i] = stop
            if k < n:
                if coupled:
                    mass[1][i][l.offsets[i] + np.arange(size), np.arange(size)] += stop[0]
                else:
                    mass[k][i] += stop
            if i < l.steps and inner.any():
                half = 0.5 * (mass[k - 1][i] - stop)[:, inner]
                target = mass[k - 1][i + 1]
                for child in (up[inner], down[inner]):
                    np.add.at(target, (slice(None), child), half)
    return StoppedLaw(stopped, coupled)


def _all_paths(steps: int) -> np.ndarray:
    codes = np.arange(2 ** steps)[:, None]
    return ((codes >> np.arange(steps)) & 1) * 2 - 1


def _suffix_max(a: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(a[:, ::-1], axis=1)[:, ::-1]


def _hedge_gains(l: Lattice, hedges: List[np.ndarray], indexes: np.ndarray, steps: np.ndarray,
                 anchors: Optional[np.ndarray] = None, start: int = 0) -> np.ndarray:
    """
    cumulative gains sum_{start <= s < t} H(s) (B_{s+1} - B_s) along the paths, shape (P, N + 1)
    """
    paths = len(indexes)
    gains = np.zeros((paths, l.steps + 1))
    rows = np.zeros(paths, dtype=np.int64) if anchors is None else anchors
    for t in range(start, l.steps):
        position = hedges[t][rows, indexes[:, t]]
        gains[:, t + 1] = gains[:, t] + position * steps[:, t] * l.sqrt_dt
    return gains


def _separable_violations(l: Lattice, p: PayoffSpec, lam, h: HedgeTable, steps: np.ndarray,
                          indexes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = p.n
    paths = len(steps)
    rewards = np.zeros((n, paths, l.steps + 1))
    for t in range(l.steps + 1):
        snap = l.snapshot(t, indexes[:, t])
        for k in range(1, n + 1):
            rewards[k - 1, :, t] = p.stop_reward(k, snap) - _potential_values(lam, k, snap.value)
    gains = [_hedge_gains(l, h.hedges[k], indexes, steps) for k in range(n)] + [np.zeros((paths, l.steps + 1))]
    w = [rewards[k] - gains[k] + gains[k + 1] for k in range(n)]

    # best[k] (path, t) = best total of the stops k..n when the stop k happens at t or later
    candidate = [None] * n
    candidate[n - 1] = w[n - 1]
    best = [None] * n
    best[n - 1] = _suffix_max(w[n - 1])
    for k in range(n - 2, -1, -1):
        candidate[k] = w[k] + best[k + 1]
        best[k] = _suffix_max(candidate[k])
    violations = best[0][:, 0] - h.cash

    tuples = np.zeros((paths, n), dtype=np.int64)
    earliest = np.zeros(paths, dtype=np.int64)
    times = np.arange(l.steps + 1)[None, :]
    for k in range(n):
        masked = np.where(times >= earliest[:, None], candidate[k], -np.inf)
        earliest = np.argmax(masked, axis=1)
        tuples[:, k] = earliest
    return violations, tuples


def _coupled_violations(l: Lattice, p: PayoffSpec, lam, h: HedgeTable, steps: np.ndarray,
                        indexes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    paths = len(steps)
    snaps = [l.snapshot(t, indexes[:, t]) for t in range(l.steps + 1)]
    gains_1 = _hedge_gains(l, h.hedges[0], indexes, steps)
    violations = np.full(paths, -np.inf)
    tuples = np.zeros((paths, 2), dtype=np.int64)
    for t1 in range(l.steps + 1):
        anchors = l.offsets[t1] + indexes[:, t1]
        gains_2 = _hedge_gains(l, h.hedges[1], indexes, steps, anchors=anchors, start=t1)
        first = -_potential_values(lam, 1, snaps[t1].value) - gains_1[:, t1]
        for t2 in range(t1, l.steps + 1):
            total = first + p.joint_reward([snaps[t1], snaps[t2]]) \
                - _potential_values(lam, 2, snaps[t2].value) - gains_2[:, t2]
            better = total > violations
            violations = np.where(better, total, violations)
            tuples[better] = (t1, t2)
    return violations - h.cash, tuples


def verify_superhedge(lam, h: HedgeTable, p: PayoffSpec, l: Lattice, mode: str = "auto", samples: int = 10 ** 6,
                      seed: int = 0, batch_size: int = 4096, show_progress: bool = False) -> SuperhedgeReport:
    """
    Largest violation of the superhedging inequality
    Phi(path, stops) - sum_k lambda_k(stopped values) - cash - sum_k sum of the phase k hedging gains
    over the paths of the walk and every ordered stop tuple of each path.

    :param lam: the potentials, None for zero potentials
    :type lam: DualPotential
    :param h: hedge table and initial capital
    :type h: HedgeTable
    :param p: the payoff
    :type p: PayoffSpec
    :param l: the lattice (without absorbing band)
    :type l: Lattice
    :param mode: 'exhaustive' (every path), 'sampled' (random paths) or 'auto' (exhaustive for N <= 14)
    :type mode: str
    :param samples: number of stop tuples to check in sampled mode
    :type samples: int
    :param seed: seed of the sampled paths
    :type seed: int
    :param batch_size: paths processed at once
    :type batch_size: int
    :param show_progress: display a progress bar
    :type show_progress: bool
    :return: the violation report
    :rtype: SuperhedgeReport
    """
    _check_arity(p, lam)
    if l.level_bounds is not None:
        raise ValueError("superhedges are verified on lattices without absorbing band")
    coupled = is_coupled(l, p)
    if mode == "auto":
        mode = "exhaustive" if l.steps <= MAX_EXHAUSTIVE_STEPS else "sampled"
    tuples_per_path = math.comb(l.steps + p.n, p.n)
    if mode == "exhaustive":
        if l.steps > MAX_EXHAUSTIVE_STEPS:
            raise ValueError(f"exhaustive verification is limited to N <= {MAX_EXHAUSTIVE_STEPS}")
        all_steps = _all_paths(l.steps)
        batches = [all_steps[start:start + batch_size] for start in range(0, len(all_steps), batch_size)]
    elif mode == "sampled":
        rng = np.random.default_rng(seed)
        path_count = max(1000, -(-samples // tuples_per_path))
        sizes = [min(batch_size, path_count - start) for start in range(0, path_count, batch_size)]
        batches = (rng.choice(np.array([-1, 1]), size=(size, l.steps)) for size in sizes)
    else:
        raise ValueError(f"unknown verification mode {mode!r}")

    worst, worst_path, worst_stops, checked = -np.inf, [], (), 0
    for batch in tqdm(batches, disable=not show_progress, desc="superhedge"):
        indexes = l.replay(batch)
        if coupled:
            violations, tuples = _coupled_violations(l, p, lam, h, batch, indexes)
        else:
            violations, tuples = _separable_violations(l, p, lam, h, batch, indexes)
        checked += len(batch) * tuples_per_path
        position = int(np.argmax(violations))
        if violations[position] > worst:
            worst = float(violations[position])
            worst_path = [int(s) for s in batch[position]]
            worst_stops = tuple(int(t) for t in tuples[position])
    LoggerGenerator.get_shared_logger("verify_superhedge").info(
        f"superhedge checked on {checked} stop tuples ({mode}), max violation {worst:.3e}")
    return SuperhedgeReport(worst, worst_path, worst_stops, mode, checked)


def grid_rows(l: Lattice, grid: Grid, anchors: Optional[List[np.ndarray]] = None):
    """
    Rows phase, anchor, time_index, level, max_level, min_level, zero_visits, value of a grid,
    untracked statistics are left empty
    """
    for k, phase in enumerate(grid, start=1):
        for i, array in enumerate(phase):
            for a in range(array.shape[0]):
                anchor = int(anchors[k - 1][a]) if anchors is not None else a
                for index in range(array.shape[1]):
                    state = l.path_state(i, index)
                    yield (k, anchor, i, state.level, '' if state.max_level is None else state.max_level,
                           '' if state.min_level is None else state.min_level,
                           '' if state.zero_visits is None else state.zero_visits, float(array[a, index]))


GRID_HEADER = ('phase', 'anchor', 'time_index', 'level', 'max_level', 'min_level', 'zero_visits', 'value')


def export_grid_csv(path: Union[str, Path], l: Lattice, grid: Grid, anchors: Optional[List[np.ndarray]] = None,
                    skip_nan: bool = True):
    """
    Write a value, policy, hedge or stopped law grid as a CSV artifact
    """
    rows = (row for row in grid_rows(l, grid, anchors) if not (skip_nan and math.isnan(row[-1])))
    write_csv(path, GRID_HEADER, rows)
