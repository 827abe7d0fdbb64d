import math
from dataclasses import dataclass
from typing import Callable, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from SkorokhodDual.measures.DiscreteMeasure import DiscreteMeasure
from SkorokhodDual.utils.LoggerGenerator import LoggerGenerator
from SkorokhodDual.utils.errors import BudgetExceeded, MissingAugmentation

AUGMENTATIONS = frozenset({'max', 'min', 'localtime'})
DEFAULT_STATE_BUDGET = 5_000_000

# columns of the state key arrays
LEVEL, MAX_LEVEL, MIN_LEVEL, ZERO_VISITS = range(4)


@dataclass(frozen=True)
class PathState:
    """
    Augmented state of the walk at one stop: statistics which are not tracked by the lattice are None
    """
    time_index: int
    level: int
    max_level: Optional[int]
    min_level: Optional[int]
    zero_visits: Optional[int]
    phase: int
    dt: float

    @property
    def value(self) -> float:
        return self.level * math.sqrt(self.dt)

    @property
    def time(self) -> float:
        return self.time_index * self.dt


class Snapshot:
    """
    Vectorized view of a batch of lattice states: every field is a numpy array and all the fields broadcast together.
    Payoffs are evaluated on snapshots, the statistics that the lattice does not track raise
    :class:`MissingAugmentation` when they are read.
    """

    def __init__(self, time_index, level, max_level, min_level, zero_visits, dt: float, augment: FrozenSet[str]):
        self.time_index = np.asarray(time_index)
        self.level = np.asarray(level)
        self._max_level = np.asarray(max_level)
        self._min_level = np.asarray(min_level)
        self._zero_visits = np.asarray(zero_visits)
        self.dt = dt
        self.sqrt_dt = math.sqrt(dt)
        self.augment = augment

    @classmethod
    def from_keys(cls, time_index, keys: np.ndarray, dt: float, augment: FrozenSet[str]) -> 'Snapshot':
        keys = np.asarray(keys)
        return cls(time_index, keys[..., LEVEL], keys[..., MAX_LEVEL], keys[..., MIN_LEVEL], keys[..., ZERO_VISITS],
                   dt, augment)

    @classmethod
    def from_path_states(cls, states: Iterable[PathState]) -> List['Snapshot']:
        snapshots = []
        for s in states:
            augment = frozenset(name for name, stat in (('max', s.max_level), ('min', s.min_level),
                                                        ('localtime', s.zero_visits)) if stat is not None)
            snapshots.append(cls(s.time_index, s.level, s.max_level or 0, s.min_level or 0, s.zero_visits or 0,
                                 s.dt, augment))
        return snapshots

    def _require(self, statistic: str):
        if statistic not in self.augment:
            raise MissingAugmentation(statistic)

    def take(self, index) -> 'Snapshot':
        """
        sub-batch of the snapshot, index is applied to every field
        """
        return Snapshot(self.time_index[index] if self.time_index.ndim else self.time_index,
                        self.level[index], self._max_level[index], self._min_level[index],
                        self._zero_visits[index], self.dt, self.augment)

    def reshape(self, shape) -> 'Snapshot':
        def _reshaped(a):
            return np.broadcast_to(a, self.level.shape).reshape(shape)
        return Snapshot(_reshaped(self.time_index), _reshaped(self.level), _reshaped(self._max_level),
                        _reshaped(self._min_level), _reshaped(self._zero_visits), self.dt, self.augment)

    @property
    def shape(self):
        return self.level.shape

    @property
    def value(self) -> np.ndarray:
        return self.level * self.sqrt_dt

    @property
    def time(self) -> np.ndarray:
        return self.time_index * self.dt

    @property
    def max_level(self) -> np.ndarray:
        self._require('max')
        return self._max_level

    @property
    def min_level(self) -> np.ndarray:
        self._require('min')
        return self._min_level

    @property
    def zero_visits(self) -> np.ndarray:
        self._require('localtime')
        return self._zero_visits

    @property
    def max_value(self) -> np.ndarray:
        return self.max_level * self.sqrt_dt

    @property
    def min_value(self) -> np.ndarray:
        return self.min_level * self.sqrt_dt

    @property
    def local_time(self) -> np.ndarray:
        return self.zero_visits * self.sqrt_dt


def advance_keys(keys: np.ndarray, augment: FrozenSet[str], max_level_cap: Optional[int] = None,
                 min_level_floor: Optional[int] = None,
                 level_bounds: Optional[Tuple[int, int]] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Compute the next time slice of the walk from the state keys of the current one

    :param keys: state keys (level, max level, min level, zero visits) of the current slice, shape (S, 4)
    :type keys: np.ndarray
    :param augment: tracked statistics
    :type augment: FrozenSet[str]
    :param max_level_cap: level at which the running max saturates
    :type max_level_cap: Optional[int]
    :param min_level_floor: level at which the running min saturates
    :type min_level_floor: Optional[int]
    :param level_bounds: absorbing levels (lo, hi), states on or beyond them have no children
    :type level_bounds: Optional[Tuple[int, int]]
    :return: sorted keys of the next slice, index of the up child and of the down child of every state (-1 when the
        state is absorbed)
    :rtype: Tuple[np.ndarray, np.ndarray, np.ndarray]
    """
    count = len(keys)
    active = np.ones(count, dtype=bool)
    if level_bounds is not None:
        active = (keys[:, LEVEL] > level_bounds[0]) & (keys[:, LEVEL] < level_bounds[1])
    parents = keys[active]
    children = []
    for step in (1, -1):
        child = np.zeros_like(parents)
        child[:, LEVEL] = parents[:, LEVEL] + step
        if 'max' in augment:
            child[:, MAX_LEVEL] = np.maximum(parents[:, MAX_LEVEL], child[:, LEVEL])
            if max_level_cap is not None:
                child[:, MAX_LEVEL] = np.minimum(child[:, MAX_LEVEL], max_level_cap)
        if 'min' in augment:
            child[:, MIN_LEVEL] = np.minimum(parents[:, MIN_LEVEL], child[:, LEVEL])
            if min_level_floor is not None:
                child[:, MIN_LEVEL] = np.maximum(child[:, MIN_LEVEL], min_level_floor)
        if 'localtime' in augment:
            child[:, ZERO_VISITS] = parents[:, ZERO_VISITS] + (child[:, LEVEL] == 0)
        children.append(child)

    next_keys, inverse = np.unique(np.concatenate(children), axis=0, return_inverse=True)
    inverse = inverse.ravel()
    up = np.full(count, -1, dtype=np.int64)
    down = np.full(count, -1, dtype=np.int64)
    up[active] = inverse[:len(parents)]
    down[active] = inverse[len(parents):]
    return next_keys, up, down


def root_keys(augment: FrozenSet[str]) -> np.ndarray:
    return np.array([[0, 0, 0, 1 if 'localtime' in augment else 0]], dtype=np.int64)


class Lattice:
    """
    Recombining binomial grid of the walk B_i = j * sqrt(dt), time index i in [0, N], augmented with the path
    statistics needed by the payoffs (running max, running min, number of visits to zero).

    States are enumerated slice by slice, each slice sorted by its keys, which gives a deterministic node ordering.
    A state is addressed either by (time index, index in slice) or by its global id ``offsets[i] + index``.
    """

    def __init__(self, steps: int, dt: float, augment: Iterable[str] = (), budget: int = DEFAULT_STATE_BUDGET,
                 max_level_cap: Optional[int] = None, min_level_floor: Optional[int] = None,
                 level_bounds: Optional[Tuple[int, int]] = None):
        """
        Enumerate the states of the lattice

        :param steps: horizon N, number of steps of the walk
        :type steps: int
        :param dt: time step, the walk moves by +/- sqrt(dt)
        :type dt: float
        :param augment: statistics to track among 'max', 'min' and 'localtime'
        :type augment: Iterable[str]
        :param budget: maximum number of states
        :type budget: int
        :param max_level_cap: saturation level of the running max (None for no saturation)
        :type max_level_cap: Optional[int]
        :param min_level_floor: saturation level of the running min (None for no saturation)
        :type min_level_floor: Optional[int]
        :param level_bounds: absorbing band (lo, hi) in levels
        :type level_bounds: Optional[Tuple[int, int]]
        """
        augment = frozenset(augment)
        unknown = augment - AUGMENTATIONS
        if unknown:
            raise ValueError(f"unknown augmentations {sorted(unknown)}, expected a subset of {sorted(AUGMENTATIONS)}")
        if steps < 1 or not dt > 0:
            raise ValueError(f"a lattice needs steps >= 1 and dt > 0, received steps={steps}, dt={dt}")
        if max_level_cap is not None and max_level_cap < 0:
            raise ValueError("the running max cap must be a nonnegative level")
        if min_level_floor is not None and min_level_floor > 0:
            raise ValueError("the running min floor must be a nonpositive level")
        if level_bounds is not None and not level_bounds[0] < 0 < level_bounds[1]:
            raise ValueError(f"the absorbing band {level_bounds} must contain the level 0")

        self.steps = int(steps)
        self.dt = float(dt)
        self.sqrt_dt = math.sqrt(self.dt)
        self.augment = augment
        self.budget = budget
        self.max_level_cap = max_level_cap
        self.min_level_floor = min_level_floor
        self.level_bounds = level_bounds
        self.logger = LoggerGenerator.get_shared_logger("Lattice")

        self._keys: List[np.ndarray] = [root_keys(augment)]
        self._up: List[np.ndarray] = []
        self._down: List[np.ndarray] = []
        total = 1
        for i in range(self.steps):
            next_keys, up, down = advance_keys(self._keys[i], augment, max_level_cap, min_level_floor, level_bounds)
            total += len(next_keys)
            if total > budget:
                raise BudgetExceeded(total, budget)
            self._keys.append(next_keys)
            self._up.append(up)
            self._down.append(down)
        self._offsets = np.concatenate(([0], np.cumsum([len(k) for k in self._keys])))
        self.logger.info(f"lattice built: N={self.steps}, dt={self.dt}, augment={sorted(augment)},"
                         f" {self.state_count} states")

    @property
    def state_count(self) -> int:
        return int(self._offsets[-1])

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    @property
    def offsets(self) -> np.ndarray:
        return self._offsets

    def slice_size(self, i: int) -> int:
        return len(self._keys[i])

    def keys(self, i: int) -> np.ndarray:
        return self._keys[i]

    def levels(self, i: int) -> np.ndarray:
        return self._keys[i][:, LEVEL]

    def values(self, i: int) -> np.ndarray:
        return self._keys[i][:, LEVEL] * self.sqrt_dt

    def children(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        index in slice i+1 of the up and down child of every state of slice i, -1 for states without children
        """
        if i >= self.steps:
            size = self.slice_size(i)
            return np.full(size, -1, dtype=np.int64), np.full(size, -1, dtype=np.int64)
        return self._up[i], self._down[i]

    def has_children(self, i: int) -> np.ndarray:
        return self.children(i)[0] >= 0

    def parents(self, i: int) -> List[np.ndarray]:
        """
        parents of every state of slice i > 0, as a list of index arrays into slice i-1
        """
        up, down = self._up[i - 1], self._down[i - 1]
        found = [[] for _ in range(self.slice_size(i))]
        for parent, (u, d) in enumerate(zip(up, down)):
            if u >= 0:
                found[u].append(parent)
                found[d].append(parent)
        return [np.array(sorted(set(p)), dtype=np.int64) for p in found]

    def global_id(self, i: int, index):
        return self._offsets[i] + index

    def locate(self, global_id: int) -> Tuple[int, int]:
        i = int(np.searchsorted(self._offsets, global_id, side='right') - 1)
        return i, int(global_id - self._offsets[i])

    def snapshot(self, i: int, index=None) -> Snapshot:
        """
        vectorized view of slice i (or of the states ``index`` of slice i)
        """
        keys = self._keys[i] if index is None else self._keys[i][index]
        return Snapshot.from_keys(np.full(keys.shape[:-1], i), keys, self.dt, self.augment)

    def global_snapshot(self) -> Snapshot:
        """
        vectorized view of every state of the lattice, ordered by global id
        """
        keys = np.concatenate(self._keys)
        times = np.repeat(np.arange(self.steps + 1), np.diff(self._offsets))
        return Snapshot.from_keys(times, keys, self.dt, self.augment)

    def path_state(self, i: int, index: int, phase: int = 0) -> PathState:
        level, max_level, min_level, zero_visits = (int(v) for v in self._keys[i][index])
        return PathState(time_index=i, level=level,
                         max_level=max_level if 'max' in self.augment else None,
                         min_level=min_level if 'min' in self.augment else None,
                         zero_visits=zero_visits if 'localtime' in self.augment else None,
                         phase=phase, dt=self.dt)

    def replay(self, steps: np.ndarray) -> np.ndarray:
        """
        Follow a batch of paths through the lattice

        :param steps: +1 / -1 increments, shape (P, T) with T <= N
        :type steps: np.ndarray
        :return: index in slice of the state visited by every path at every time, shape (P, T + 1)
        :rtype: np.ndarray
        """
        steps = np.atleast_2d(steps)
        indexes = np.zeros((steps.shape[0], steps.shape[1] + 1), dtype=np.int64)
        for i in range(steps.shape[1]):
            up, down = self.children(i)
            current = indexes[:, i]
            indexes[:, i + 1] = np.where(steps[:, i] > 0, up[current], down[current])
        return indexes

    def level_index(self, level) -> np.ndarray:
        """
        position of a level in the list of horizon levels -N..N
        """
        return np.asarray(level) + self.steps

    def is_lattice_value(self, x: float, tol: float = 1e-9) -> bool:
        scaled = x / self.sqrt_dt
        return abs(scaled - round(scaled)) <= tol and abs(round(scaled)) <= self.steps

    def to_level(self, x) -> np.ndarray:
        return np.rint(np.asarray(x) / self.sqrt_dt).astype(np.int64)

    def __repr__(self):
        return f"Lattice(steps={self.steps}, dt={self.dt}, augment={sorted(self.augment)}, states={self.state_count})"


def build_lattice(steps: int, dt: float, augment: Iterable[str] = (), budget: int = DEFAULT_STATE_BUDGET,
                  **kwargs) -> Lattice:
    """
    Build the augmented lattice of the walk

    :param steps: horizon N
    :type steps: int
    :param dt: time step
    :type dt: float
    :param augment: tracked statistics among 'max', 'min' and 'localtime'
    :type augment: Iterable[str]
    :param budget: maximum number of states
    :type budget: int
    :return: the lattice
    :rtype: Lattice
    """
    return Lattice(steps, dt, augment, budget, **kwargs)


def monroe_horizon(mu_n: DiscreteMeasure, eps: float) -> float:
    """
    Horizon certificate from the tail bound P[T >= C] <= C^(-1/3) (1 + m1^2) of uniformly integrable embeddings,
    m1 being the first absolute moment of the last marginal: smallest C making the bound lower than eps.

    :param mu_n: last marginal
    :type mu_n: DiscreteMeasure
    :param eps: tail probability, in (0, 1]
    :type eps: float
    :return: the time C
    :rtype: float
    """
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], received {eps}")
    m1 = mu_n.first_absolute_moment
    return ((1. + m1 * m1) / eps) ** 3


def stabilize_horizon(evaluate: Callable[[int], float], start_steps: int, tol: float, max_steps: int,
                      show_progress: bool = False) -> Tuple[int, float, List[Tuple[int, float]]]:
    """
    Double the horizon until the evaluated value moves by less than tol

    :param evaluate: value of the problem for a given number of steps
    :type evaluate: Callable[[int], float]
    :param start_steps: first horizon tried
    :type start_steps: int
    :param tol: stabilization tolerance
    :type tol: float
    :param max_steps: largest horizon tried
    :type max_steps: int
    :param show_progress: display a progress bar
    :type show_progress: bool
    :return: retained horizon, its value and the trace of (steps, value)
    :rtype: Tuple[int, float, List[Tuple[int, float]]]
    """
    logger = LoggerGenerator.get_shared_logger("stabilize_horizon")
    steps = start_steps
    trace = [(steps, evaluate(steps))]
    max_doublings = max(0, int(math.floor(math.log2(max_steps / start_steps)))) if max_steps >= start_steps else 0
    pbar = tqdm(total=max_doublings, disable=not show_progress, desc="horizon")
    while steps * 2 <= max_steps:
        steps *= 2
        trace.append((steps, evaluate(steps)))
        pbar.update()
        if abs(trace[-1][1] - trace[-2][1]) < tol:
            pbar.close()
            return steps, trace[-1][1], trace
    pbar.close()
    logger.warning(f"horizon not stabilized within {max_steps} steps, last values {trace[-2:]}")
    return trace[-1][0], trace[-1][1], trace
