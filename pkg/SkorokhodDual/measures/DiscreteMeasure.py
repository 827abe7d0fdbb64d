import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from SkorokhodDual.utils.errors import EmptyMeasure, MeanMismatch, MeasureError, NonFiniteValue, NotAPeacock, \
    WeightSumMismatch

ORDER_TOLERANCE = 1e-12
CENTERING_TOLERANCE = 1e-10
WEIGHT_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DiscreteMeasure:
    """
    Finite atomic probability measure on the real line. Positions are sorted strictly increasing and every weight is
    positive. Instances are immutable and should be created with :func:`make_discrete_measure`.
    """
    positions: np.ndarray
    weights: np.ndarray
    mean: float = field(init=False)

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float)
        weights = np.array(self.weights, dtype=float)
        positions.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, 'positions', positions)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'mean', math.fsum(positions * weights))

    def __len__(self):
        return len(self.positions)

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return np.array_equal(self.positions, other.positions) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash((self.positions.tobytes(), self.weights.tobytes()))

    @property
    def atoms(self) -> List[Tuple[float, float]]:
        return [(float(x), float(w)) for x, w in zip(self.positions, self.weights)]

    @property
    def first_absolute_moment(self) -> float:
        return math.fsum(np.abs(self.positions) * self.weights)

    def potential(self, x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """
        Potential function U(x) = sum of w |x - y| over the atoms (y, w)

        :param x: evaluation point(s)
        :type x: Union[float, np.ndarray]
        :return: potential value(s)
        :rtype: Union[float, np.ndarray]
        """
        x_arr = np.asarray(x, dtype=float)
        values = np.abs(x_arr[..., None] - self.positions) @ self.weights
        return float(values) if np.ndim(x) == 0 else values

    def cdf(self, x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        cumulative = np.concatenate(([0.], np.cumsum(self.weights)))
        values = cumulative[np.searchsorted(self.positions, x, side='right')]
        return float(values) if np.ndim(x) == 0 else values

    def mass_at(self, x: float, tol: float = 1e-12) -> float:
        hits = np.abs(self.positions - x) <= tol
        return float(self.weights[hits].sum())

    def to_json(self) -> str:
        return json.dumps([[float(x), float(w)] for x, w in self.atoms])


@dataclass(frozen=True)
class PeacockVector:
    """
    Vector of marginals increasing in convex order; centered if every mean is zero.
    Build it with :func:`make_peacock` which performs the validation.
    """
    measures: Tuple[DiscreteMeasure, ...]
    centered: bool = True

    def __len__(self):
        return len(self.measures)

    def __getitem__(self, item) -> DiscreteMeasure:
        return self.measures[item]

    def __iter__(self):
        return iter(self.measures)


@dataclass(frozen=True)
class ConvexOrderResult:
    """
    Outcome of a convex order check: margin is the minimum of U_hi - U_lo over the check points
    """
    ordered: bool
    witness: Optional[float]
    margin: float


def make_discrete_measure(atoms: Iterable[Sequence[float]]) -> DiscreteMeasure:
    """
    Build a measure from (position, weight) pairs: duplicated positions are merged, zero weights dropped and the
    weights renormalized when they sum to one within 1e-9

    :param atoms: pairs (position, weight)
    :type atoms: Iterable[Sequence[float]]
    :return: the measure
    :rtype: DiscreteMeasure
    """
    pairs = np.array([(float(x), float(w)) for x, w in atoms], dtype=float).reshape(-1, 2)
    if not len(pairs):
        raise EmptyMeasure("a measure needs at least one atom")
    if not np.all(np.isfinite(pairs)):
        raise NonFiniteValue("atoms must have finite positions and weights")
    if np.any(pairs[:, 1] < 0):
        raise MeasureError("weights must be nonnegative")
    pairs = pairs[pairs[:, 1] > 0]
    if not len(pairs):
        raise EmptyMeasure("a measure needs at least one positive weight")
    total = math.fsum(pairs[:, 1])
    if abs(total - 1.) > WEIGHT_SUM_TOLERANCE:
        raise WeightSumMismatch(total)
    positions, inverse = np.unique(pairs[:, 0], return_inverse=True)
    weights = np.bincount(inverse.ravel(), weights=pairs[:, 1], minlength=len(positions)) / total
    return DiscreteMeasure(positions, weights)


def dirac(x: float = 0.) -> DiscreteMeasure:
    return make_discrete_measure([(x, 1.)])


def load_measure(path: Union[str, Path]) -> DiscreteMeasure:
    """
    Load a measure saved as a JSON array of [position, weight] pairs
    """
    with open(path, encoding='utf-8') as f:
        return make_discrete_measure(json.load(f))


def quantize_uniform(low: float, high: float, count: int) -> DiscreteMeasure:
    """
    Equal weight quantization of the uniform law on [low, high]: each atom is the mean of its quantile bin

    :param low: lower end of the interval
    :type low: float
    :param high: upper end of the interval
    :type high: float
    :param count: number of atoms
    :type count: int
    :return: the quantized measure
    :rtype: DiscreteMeasure
    """
    if count < 1 or not high > low:
        raise MeasureError("quantization needs count >= 1 and high > low")
    positions = low + (high - low) * (np.arange(count) + 0.5) / count
    return make_discrete_measure(zip(positions, np.full(count, 1. / count)))


def integrate(m: DiscreteMeasure, f: Callable[[float], float]) -> float:
    """
    Integral of f against the measure, computed exactly as a weighted sum over the atoms

    :param m: the measure
    :type m: DiscreteMeasure
    :param f: test function, evaluated at each atom
    :type f: Callable[[float], float]
    :return: sum of weight * f(position)
    :rtype: float
    """
    values = np.array([f(float(x)) for x in m.positions], dtype=float)
    if not np.all(np.isfinite(values)):
        bad = m.positions[~np.isfinite(values)][0]
        raise NonFiniteValue(f"test function is not finite at the atom {bad!r}")
    return math.fsum(values * m.weights)


def check_convex_order(lo: DiscreteMeasure, hi: DiscreteMeasure) -> ConvexOrderResult:
    """
    Check lo <= hi in convex order through the potential functions: for measures of equal mean the order holds iff
    U_lo <= U_hi everywhere, and both potentials are piecewise linear with kinks on the supports, so the union of the
    supports is a sufficient set of check points

    :param lo: the measure expected to be smaller
    :type lo: DiscreteMeasure
    :param hi: the measure expected to be larger
    :type hi: DiscreteMeasure
    :return: ordered flag, violating point if any and smallest margin U_hi - U_lo
    :rtype: ConvexOrderResult
    """
    if abs(lo.mean - hi.mean) > CENTERING_TOLERANCE:
        raise MeanMismatch(lo.mean, hi.mean)
    points = np.union1d(lo.positions, hi.positions)
    margins = hi.potential(points) - lo.potential(points)
    worst = int(np.argmin(margins))
    if margins[worst] < -ORDER_TOLERANCE:
        return ConvexOrderResult(False, float(points[worst]), float(margins[worst]))
    return ConvexOrderResult(True, None, float(margins[worst]))


def peacock_margins(measures: Sequence[DiscreteMeasure]) -> List[ConvexOrderResult]:
    """
    Convex order check of every consecutive pair of marginals
    """
    return [check_convex_order(measures[k], measures[k + 1]) for k in range(len(measures) - 1)]


def make_peacock(measures: Sequence[DiscreteMeasure], centered: bool = True) -> PeacockVector:
    """
    Validate a vector of marginals: every mean is zero (when centered) and consecutive pairs are in convex order

    :param measures: the marginals mu_1, ..., mu_n
    :type measures: Sequence[DiscreteMeasure]
    :param centered: if the means must vanish
    :type centered: bool
    :return: the validated peacock
    :rtype: PeacockVector
    """
    if not len(measures):
        raise EmptyMeasure("a peacock needs at least one marginal")
    if centered:
        for k, m in enumerate(measures):
            if abs(m.mean) > CENTERING_TOLERANCE:
                raise NotAPeacock(k, None, f"marginal {k + 1} has mean {m.mean!r}, expected 0")
    for k in range(len(measures) - 1):
        try:
            result = check_convex_order(measures[k], measures[k + 1])
        except MeanMismatch as err:
            raise NotAPeacock(k, None, str(err)) from err
        if not result.ordered:
            raise NotAPeacock(k, result.witness)
    return PeacockVector(tuple(measures), centered)


def quantile(m: DiscreteMeasure, u: np.ndarray) -> np.ndarray:
    """
    Left continuous quantile function F^{-1}(u) = inf {x : F(x) >= u}
    """
    cumulative = np.cumsum(m.weights)
    cumulative[-1] = 1.
    idx = np.searchsorted(cumulative, u, side='left')
    return m.positions[np.minimum(idx, len(m) - 1)]


def wasserstein1(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """
    Wasserstein-1 distance as the integral of |F_a^{-1}(u) - F_b^{-1}(u)| over u in (0, 1): both quantile functions are
    step functions, constant between the merged cumulative weights

    :param a: first measure
    :type a: DiscreteMeasure
    :param b: second measure
    :type b: DiscreteMeasure
    :return: the distance
    :rtype: float
    """
    cuts = np.union1d(np.cumsum(a.weights), np.cumsum(b.weights))
    cuts = np.unique(np.clip(np.concatenate(([0.], cuts, [1.])), 0., 1.))
    widths = np.diff(cuts)
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    keep = widths > 0
    gaps = np.abs(quantile(a, mids[keep]) - quantile(b, mids[keep]))
    return math.fsum(gaps * widths[keep])


def snap_to_lattice(m: DiscreteMeasure, sqrt_dt: float) -> Tuple[DiscreteMeasure, float]:
    """
    Move every atom onto the lattice values j * sqrt_dt: an atom x between two consecutive lattice values a <= x <= b is
    split in weights (b - x) / (b - a) at a and (x - a) / (b - a) at b. The mean is preserved and so is the convex order
    between snapped marginals.

    :param m: the measure to snap
    :type m: DiscreteMeasure
    :param sqrt_dt: lattice spacing
    :type sqrt_dt: float
    :return: snapped measure and its W1 distance to the input
    :rtype: Tuple[DiscreteMeasure, float]
    """
    scaled = m.positions / sqrt_dt
    nearest = np.round(scaled)
    exact = np.abs(scaled - nearest) <= 1e-9
    lower = np.where(exact, nearest, np.floor(scaled))
    frac = np.where(exact, 0., scaled - lower)
    atoms = list(zip(lower * sqrt_dt, m.weights * (1. - frac)))
    atoms += list(zip((lower + 1) * sqrt_dt, m.weights * frac))
    snapped = make_discrete_measure(atoms)
    return snapped, wasserstein1(m, snapped)
