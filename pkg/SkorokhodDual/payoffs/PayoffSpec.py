import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from SkorokhodDual.lattice.Lattice import Lattice, PathState, Snapshot
from SkorokhodDual.utils.errors import ArityMismatch, PayoffError, UnboundedAbove, UnsupportedPayoff
from SkorokhodDual.utils.io_utils import read_csv_rows


class PayoffComponent:
    """
    Base class of the reward components. A separable component adds up rewards collected at individual stops
    (:meth:`stop_reward`), a coupled one only has a joint reward over all the stops (:meth:`joint_reward`).
    Components which act on a single stop hold it in ``stop`` (1-based, None for the last stop).
    """
    kind = "component"
    separable = True
    stop: Optional[int] = None

    def arity(self) -> int:
        return self.stop or 1

    def target_stop(self, n: int) -> int:
        return self.stop or n

    def required_augment(self) -> FrozenSet[str]:
        return frozenset()

    def level_caps(self, sqrt_dt: float) -> Tuple[Optional[int], Optional[int]]:
        """
        levels beyond which the running max (and running min) no longer change the reward,
        None when the reward depends on the whole range
        """
        return None, None

    def single_stop_reward(self, snap: Snapshot) -> np.ndarray:
        raise NotImplementedError

    def stop_reward(self, k: int, snap: Snapshot, n: int) -> np.ndarray:
        if k != self.target_stop(n):
            return np.zeros(snap.shape)
        return self.single_stop_reward(snap)

    def joint_reward(self, snaps: Sequence[Snapshot], n: int) -> np.ndarray:
        return sum(self.stop_reward(k + 1, s, n) for k, s in enumerate(snaps))

    def cap_active(self, k: int, snap: Snapshot, n: int) -> np.ndarray:
        return np.zeros(snap.shape, dtype=bool)

    def bounded_above(self) -> bool:
        return True

    def declared_cap(self) -> Optional[float]:
        """
        upper bound known from the parameters, None if it has to be computed on the lattice
        """
        return None

    def natural_lower_bound(self) -> Optional[float]:
        return None

    def describe(self) -> Dict:
        return {'kind': self.kind}


def _cap(x, cap):
    return x if cap is None else np.minimum(x, cap)


def _ceil_level(x: float, sqrt_dt: float) -> int:
    return int(math.ceil(x / sqrt_dt - 1e-9))


@dataclass(frozen=True)
class Lookback(PayoffComponent):
    """
    weight * min(running max, cap), or weight * max(running min, floor) with side='min'
    """
    weight: float = 1.
    cap: Optional[float] = None
    side: str = "max"
    floor: Optional[float] = None
    stop: Optional[int] = None
    kind = "lookback"

    def __post_init__(self):
        if self.side not in ("max", "min"):
            raise PayoffError(f"lookback side must be 'max' or 'min', received {self.side!r}")

    def required_augment(self):
        return frozenset({self.side})

    def level_caps(self, sqrt_dt):
        if self.side == "max" and self.cap is not None:
            return max(0, _ceil_level(self.cap, sqrt_dt)), None
        if self.side == "min" and self.floor is not None:
            return None, min(0, -_ceil_level(-self.floor, sqrt_dt))
        return None, None

    def single_stop_reward(self, snap):
        if self.side == "max":
            return self.weight * _cap(snap.max_value, self.cap)
        extreme = snap.min_value if self.floor is None else np.maximum(snap.min_value, self.floor)
        return self.weight * extreme

    def cap_active(self, k, snap, n):
        if k != self.target_stop(n):
            return super().cap_active(k, snap, n)
        if self.side == "max" and self.cap is not None:
            return snap.max_value >= self.cap - 1e-12
        if self.side == "min" and self.floor is not None:
            return snap.min_value <= self.floor + 1e-12
        return super().cap_active(k, snap, n)

    def bounded_above(self):
        if self.side == "max":
            return self.weight <= 0 or self.cap is not None
        return self.weight >= 0 or self.floor is not None

    def declared_cap(self):
        if self.side == "max" and self.cap is not None and self.weight > 0:
            return self.weight * self.cap
        return None

    def natural_lower_bound(self):
        # running max >= 0 >= running min
        if self.side == "max":
            return 0. if self.weight >= 0 and (self.cap is None or self.cap >= 0) else None
        if self.weight <= 0:
            return 0.
        return None if self.floor is None else self.weight * min(self.floor, 0.)

    def describe(self):
        return {'kind': self.kind, 'weight': self.weight, 'cap': self.cap, 'side': self.side, 'floor': self.floor,
                'stop': self.stop}


@dataclass(frozen=True)
class Barrier(PayoffComponent):
    """
    payout if the running max reached ``upper`` or the running min reached ``lower`` (knock='in'),
    payout if none of the given barriers was reached (knock='out')
    """
    payout: float = 1.
    upper: Optional[float] = None
    lower: Optional[float] = None
    knock: str = "in"
    stop: Optional[int] = None
    kind = "barrier"

    def __post_init__(self):
        if self.upper is None and self.lower is None:
            raise PayoffError("a barrier needs an upper or a lower level")
        if self.knock not in ("in", "out"):
            raise PayoffError(f"knock must be 'in' or 'out', received {self.knock!r}")

    def required_augment(self):
        return frozenset(side for side, level in (('max', self.upper), ('min', self.lower)) if level is not None)

    def level_caps(self, sqrt_dt):
        max_cap = None if self.upper is None else max(0, _ceil_level(self.upper, sqrt_dt))
        min_floor = None if self.lower is None else min(0, -_ceil_level(-self.lower, sqrt_dt))
        return max_cap, min_floor

    def single_stop_reward(self, snap):
        hit = np.zeros(snap.shape, dtype=bool)
        if self.upper is not None:
            hit = hit | (snap.max_value >= self.upper - 1e-12)
        if self.lower is not None:
            hit = hit | (snap.min_value <= self.lower + 1e-12)
        active = hit if self.knock == "in" else ~hit
        return self.payout * active.astype(float)

    def declared_cap(self):
        return max(self.payout, 0.)

    def natural_lower_bound(self):
        return min(self.payout, 0.)

    def describe(self):
        return {'kind': self.kind, 'payout': self.payout, 'upper': self.upper, 'lower': self.lower,
                'knock': self.knock, 'stop': self.stop}


@dataclass(frozen=True)
class StopTimeFunction(PayoffComponent):
    """
    sum_k c_k f(theta_k) with f linear, call (theta - K)+ or put (K - theta)+, optionally capped as a whole.
    A cap over several nonzero coefficients couples the stops.
    """
    coefficients: Tuple[float, ...] = (1.,)
    shape: str = "linear"
    strike: float = 0.
    cap: Optional[float] = None
    kind = "stop_time"

    def __post_init__(self):
        if self.shape not in ("linear", "call", "put"):
            raise PayoffError(f"shape must be 'linear', 'call' or 'put', received {self.shape!r}")
        object.__setattr__(self, 'coefficients', tuple(float(c) for c in self.coefficients))

    @property
    def separable(self):
        return self.cap is None or sum(c != 0 for c in self.coefficients) <= 1

    def arity(self):
        return len(self.coefficients)

    def _f(self, theta):
        if self.shape == "linear":
            return theta
        if self.shape == "call":
            return np.maximum(theta - self.strike, 0.)
        return np.maximum(self.strike - theta, 0.)

    def stop_reward(self, k, snap, n):
        if not self.separable:
            raise UnsupportedPayoff("a capped stop time function over several stops is not separable")
        coefficient = self.coefficients[k - 1] if k <= len(self.coefficients) else 0.
        return _cap(coefficient * self._f(snap.time), self.cap) if coefficient else np.zeros(snap.shape)

    def joint_reward(self, snaps, n):
        total = sum(c * self._f(s.time) for c, s in zip(self.coefficients, snaps))
        return _cap(total, self.cap)

    def cap_active(self, k, snap, n):
        if self.cap is None or not self.separable or self.coefficients[k - 1] == 0:
            return super().cap_active(k, snap, n)
        return self.coefficients[k - 1] * self._f(snap.time) >= self.cap - 1e-12

    def bounded_above(self):
        if self.cap is not None:
            return True
        return all(c <= 0 or self.shape == "put" for c in self.coefficients)

    def declared_cap(self):
        return self.cap

    def natural_lower_bound(self):
        # f >= 0 for every shape, only a put is bounded above (by the strike)
        total = 0.
        for c in self.coefficients:
            if c >= 0:
                continue
            if self.shape != "put":
                return None
            total += c * max(self.strike, 0.)
        return total if self.cap is None else min(total, self.cap)

    def describe(self):
        return {'kind': self.kind, 'coefficients': list(self.coefficients), 'shape': self.shape,
                'strike': self.strike, 'cap': self.cap}


@dataclass(frozen=True)
class LocalTime(PayoffComponent):
    """
    min(coefficient * L, cap), L being sqrt(dt) times the number of visits to zero
    """
    coefficient: float = 1.
    cap: Optional[float] = None
    stop: Optional[int] = None
    kind = "local_time"

    def required_augment(self):
        return frozenset({'localtime'})

    def single_stop_reward(self, snap):
        return _cap(self.coefficient * snap.local_time, self.cap)

    def cap_active(self, k, snap, n):
        if k != self.target_stop(n) or self.cap is None:
            return super().cap_active(k, snap, n)
        return self.coefficient * snap.local_time >= self.cap - 1e-12

    def bounded_above(self):
        return self.coefficient <= 0 or self.cap is not None

    def declared_cap(self):
        return self.cap

    def natural_lower_bound(self):
        return 0. if self.coefficient >= 0 else None

    def describe(self):
        return {'kind': self.kind, 'coefficient': self.coefficient, 'cap': self.cap, 'stop': self.stop}


@dataclass(frozen=True)
class StopIndicator(PayoffComponent):
    """
    payout * 1{theta_k = time}
    """
    payout: float = 1.
    time: float = 0.
    stop: Optional[int] = None
    kind = "stop_indicator"

    def single_stop_reward(self, snap):
        return self.payout * (np.abs(snap.time - self.time) <= 1e-12 * max(1., abs(self.time))).astype(float)

    def declared_cap(self):
        return max(self.payout, 0.)

    def natural_lower_bound(self):
        return min(self.payout, 0.)

    def describe(self):
        return {'kind': self.kind, 'payout': self.payout, 'time': self.time, 'stop': self.stop}


@dataclass(frozen=True)
class ForwardStart(PayoffComponent):
    """
    weight * min(|omega_theta2 - omega_theta1|, cap), couples the two stops
    """
    weight: float = 1.
    cap: Optional[float] = None
    kind = "forward_start"
    separable = False

    def arity(self):
        return 2

    def stop_reward(self, k, snap, n):
        raise UnsupportedPayoff("a forward start payoff has no per stop reward")

    def joint_reward(self, snaps, n):
        if len(snaps) != 2:
            raise ArityMismatch(2, len(snaps))
        return self.weight * _cap(np.abs(snaps[1].value - snaps[0].value), self.cap)

    def bounded_above(self):
        return self.weight <= 0 or self.cap is not None

    def declared_cap(self):
        return None if self.cap is None or self.weight <= 0 else self.weight * self.cap

    def natural_lower_bound(self):
        return 0. if self.weight >= 0 else None

    def describe(self):
        return {'kind': self.kind, 'weight': self.weight, 'cap': self.cap}


@dataclass(frozen=True)
class CustomTable(PayoffComponent):
    """
    Reward read in a table keyed by the per stop (time index, level) pairs, ``default`` for missing keys
    """
    n: int = 1
    table: Dict[Tuple[int, ...], float] = field(default_factory=dict)
    default: float = 0.
    kind = "custom_table"

    def __post_init__(self):
        if self.n not in (1, 2):
            raise UnsupportedPayoff(f"custom tables are limited to one or two stops, received {self.n}")
        for key in self.table:
            if len(key) != 2 * self.n:
                raise PayoffError(f"table key {key} does not hold {self.n} (time index, level) pairs")

    def __hash__(self):
        return hash((self.n, tuple(sorted(self.table.items())), self.default))

    @property
    def separable(self):
        return self.n == 1

    def arity(self):
        return self.n

    def _lookup(self, columns: List[np.ndarray]) -> np.ndarray:
        columns = np.broadcast_arrays(*columns)
        flat = [c.ravel().tolist() for c in columns]
        values = [self.table.get(key, self.default) for key in zip(*flat)]
        return np.array(values, dtype=float).reshape(columns[0].shape)

    def stop_reward(self, k, snap, n):
        if self.n != 1:
            raise UnsupportedPayoff("a two stop custom table has no per stop reward")
        if k != n:
            return np.zeros(snap.shape)
        return self._lookup([np.broadcast_to(snap.time_index, snap.shape), snap.level])

    def joint_reward(self, snaps, n):
        if len(snaps) != self.n:
            raise ArityMismatch(self.n, len(snaps))
        columns = []
        for s in snaps:
            columns += [np.broadcast_to(s.time_index, s.shape), s.level]
        return self._lookup(columns)

    def declared_cap(self):
        return None

    def natural_lower_bound(self):
        return min([self.default, *self.table.values()])

    def describe(self):
        return {'kind': self.kind, 'n': self.n, 'entries': len(self.table), 'default': self.default}

    @classmethod
    def from_csv(cls, path: Union[str, Path], default: float = 0.) -> 'CustomTable':
        """
        Load a table from a CSV file with a header line and the rows ``i1,j1[,i2,j2],value``

        :param path: path of the CSV file
        :type path: Union[str, Path]
        :param default: value of the keys missing from the file
        :type default: float
        :return: the table payoff
        :rtype: CustomTable
        """
        table = {}
        for row in read_csv_rows(path):
            if not row:
                continue
            *key, value = row
            table[tuple(int(v) for v in key)] = float(value)
        if not table:
            raise PayoffError(f"the custom table {path} is empty")
        n = len(next(iter(table))) // 2
        return cls(n=n, table=table, default=default)


@dataclass(frozen=True)
class SeparableSum(PayoffComponent):
    """
    Sum of components, each one bound to its own stop
    """
    components: Tuple[PayoffComponent, ...] = ()
    kind = "separable_sum"

    def __post_init__(self):
        if not self.components:
            raise PayoffError("a separable sum needs at least one component")
        object.__setattr__(self, 'components', tuple(self.components))

    @property
    def separable(self):
        return all(c.separable for c in self.components)

    def arity(self):
        return max(c.arity() for c in self.components)

    def required_augment(self):
        return frozenset().union(*(c.required_augment() for c in self.components))

    def level_caps(self, sqrt_dt):
        caps = [(c.level_caps(sqrt_dt), c.required_augment()) for c in self.components]
        max_caps = [levels[0] for levels, augment in caps if 'max' in augment]
        min_floors = [levels[1] for levels, augment in caps if 'min' in augment]
        max_cap = None if not max_caps or None in max_caps else max(max_caps)
        min_floor = None if not min_floors or None in min_floors else min(min_floors)
        return max_cap, min_floor

    def stop_reward(self, k, snap, n):
        return sum(c.stop_reward(k, snap, n) for c in self.components)

    def joint_reward(self, snaps, n):
        return sum(c.joint_reward(snaps, n) for c in self.components)

    def cap_active(self, k, snap, n):
        active = np.zeros(snap.shape, dtype=bool)
        for c in self.components:
            active = active | c.cap_active(k, snap, n)
        return active

    def bounded_above(self):
        return all(c.bounded_above() for c in self.components)

    def natural_lower_bound(self):
        bounds = [c.natural_lower_bound() for c in self.components]
        return None if None in bounds else sum(bounds)

    def describe(self):
        return {'kind': self.kind, 'components': [c.describe() for c in self.components]}


@dataclass(frozen=True)
class PayoffSpec:
    """
    Reward Phi of the stopping problem: ``sign * max(raw, floor)`` where raw is the reward of the component.
    The arity n is the number of ordered stops, ``upper_bound`` is filled by :func:`validate_boundedness`.
    """
    component: PayoffComponent
    n: int = 1
    sign: int = 1
    floor: Optional[float] = None
    upper_bound: Optional[float] = None

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise PayoffError(f"sign must be +1 or -1, received {self.sign}")
        if self.n < self.component.arity():
            raise ArityMismatch(self.component.arity(), self.n)

    @property
    def kind(self) -> str:
        return self.component.kind

    @property
    def is_separable(self) -> bool:
        return self.component.separable and (self.floor is None or self.n == 1)

    def required_augment(self) -> FrozenSet[str]:
        return self.component.required_augment()

    def level_caps(self, sqrt_dt: float) -> Tuple[Optional[int], Optional[int]]:
        return self.component.level_caps(sqrt_dt)

    def _finish(self, raw: np.ndarray) -> np.ndarray:
        if self.floor is not None:
            raw = np.maximum(raw, self.floor)
        return self.sign * raw

    def stop_reward(self, k: int, snap: Snapshot) -> np.ndarray:
        """
        reward collected when the k-th stop (1-based) happens at the states of the snapshot, separable payoffs only
        """
        if not self.is_separable:
            raise UnsupportedPayoff(f"the {self.kind} payoff couples the stops")
        reward = np.broadcast_to(self.component.stop_reward(k, snap, self.n), snap.shape).astype(float)
        return self._finish(reward)

    def joint_reward(self, snaps: Sequence[Snapshot]) -> np.ndarray:
        """
        reward of the stops at the given snapshots, which broadcast together
        """
        if len(snaps) != self.n:
            raise ArityMismatch(self.n, len(snaps))
        return self._finish(np.asarray(self.component.joint_reward(snaps, self.n), dtype=float))

    def cap_activity(self, k: int, snap: Snapshot) -> np.ndarray:
        active = self.component.cap_active(k, snap, self.n)
        if self.floor is not None and self.n == 1:
            active = active | (self.component.stop_reward(k, snap, self.n) <= self.floor + 1e-12)
        return np.broadcast_to(active, snap.shape)

    def bounded_above(self) -> bool:
        if self.sign > 0:
            return self.component.bounded_above()
        return self.floor is not None or self.component.natural_lower_bound() is not None

    def negated(self) -> 'PayoffSpec':
        return replace(self, sign=-self.sign, upper_bound=None)

    def with_upper_bound(self, bound: float) -> 'PayoffSpec':
        return replace(self, upper_bound=float(bound))

    def describe(self) -> Dict:
        return {'component': self.component.describe(), 'n': self.n, 'sign': self.sign, 'floor': self.floor,
                'upper_bound': self.upper_bound}


def evaluate(p: PayoffSpec, states: Sequence[PathState]) -> float:
    """
    Evaluate the payoff at the stop states

    :param p: the payoff
    :type p: PayoffSpec
    :param states: one PathState per stop, ordered by time index
    :type states: Sequence[PathState]
    :return: the reward
    :rtype: float
    """
    if len(states) != p.n:
        raise ArityMismatch(p.n, len(states))
    if any(a.time_index > b.time_index for a, b in zip(states[:-1], states[1:])):
        raise PayoffError("the stop states must be ordered by time index")
    return float(p.joint_reward(Snapshot.from_path_states(states)))


def cap_activity(p: PayoffSpec, k: int, snap: Snapshot) -> np.ndarray:
    """
    Flags of the states where the cap or the floor of the payoff is active for the k-th stop
    """
    return p.cap_activity(k, snap)


def validate_boundedness(p: PayoffSpec, l: Lattice) -> float:
    """
    Upper bound of the payoff: the declared cap when the payoff is a single capped kind, otherwise the exact maximum
    over every lattice path and ordered stop tuple

    :param p: the payoff
    :type p: PayoffSpec
    :param l: the lattice
    :type l: Lattice
    :return: the upper bound, to be stored with :meth:`PayoffSpec.with_upper_bound`
    :rtype: float
    """
    if not p.bounded_above():
        raise UnboundedAbove(f"the {p.kind} payoff is not bounded above, declare a cap"
                             + (" or a floor" if p.sign < 0 else ""))
    cap = p.component.declared_cap()
    if p.sign > 0 and cap is not None and not isinstance(p.component, SeparableSum):
        return cap if p.floor is None else max(cap, p.floor)
    from SkorokhodDual.solvers.MultiStop import multi_stopping_value
    return multi_stopping_value(l, p, None, aggregate="max").value


COMPONENT_KINDS = {
    'lookback': Lookback,
    'barrier': Barrier,
    'stop_time': StopTimeFunction,
    'local_time': LocalTime,
    'stop_indicator': StopIndicator,
    'forward_start': ForwardStart,
}


def component_from_dict(description: Dict, base_path: Optional[Path] = None) -> PayoffComponent:
    """
    Build a component from its configuration dictionary: a 'kind' tag and the parameters of the kind

    :param description: configuration of the component
    :type description: Dict
    :param base_path: folder against which the relative table paths are resolved
    :type base_path: Optional[Path]
    :return: the component
    :rtype: PayoffComponent
    """
    params = dict(description)
    kind = params.pop('kind', None)
    if kind == 'separable_sum':
        return SeparableSum(tuple(component_from_dict(c, base_path) for c in params.pop('components', [])))
    if kind == 'custom_table':
        path = Path(params.pop('path'))
        if base_path is not None and not path.is_absolute():
            path = base_path / path
        return CustomTable.from_csv(path, default=float(params.pop('default', 0.)))
    if kind not in COMPONENT_KINDS:
        raise PayoffError(f"unknown payoff kind {kind!r}")
    try:
        return COMPONENT_KINDS[kind](**params)
    except TypeError as err:
        raise PayoffError(f"invalid parameters for the {kind} payoff: {err}") from err


def payoff_from_dict(description: Dict, base_path: Optional[Path] = None) -> PayoffSpec:
    """
    Build a payoff from its configuration: the component description plus the optional keys 'n', 'sign' and 'floor'
    """
    params = dict(description)
    n = params.pop('n', None)
    sign = params.pop('sign', 1)
    floor = params.pop('floor', None)
    component = component_from_dict(params, base_path)
    return PayoffSpec(component, n=n or component.arity(), sign=sign, floor=floor)
