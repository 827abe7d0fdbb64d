import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from SkorokhodDual.lattice.Lattice import Lattice, Snapshot, advance_keys, root_keys
from SkorokhodDual.measures.DiscreteMeasure import DiscreteMeasure, PeacockVector, dirac, integrate, \
    make_discrete_measure, wasserstein1
from SkorokhodDual.payoffs.PayoffSpec import PayoffSpec
from SkorokhodDual.solvers.MultiStop import StoppingPolicy
from SkorokhodDual.utils.LoggerGenerator import LoggerGenerator
from SkorokhodDual.utils.errors import AtomTooLarge, HorizonTooShort, MeasureError, UnrepresentableAtom

HORIZON_LEAK_TOLERANCE = 1e-9
MAX_ATOM_WEIGHT = 0.05
MIN_MC_SAMPLES = 10 ** 4


def hitting_time_value(p: PayoffSpec, levels: Tuple[float, float], dt: float, steps: int,
                       leak_tolerance: float = HORIZON_LEAK_TOLERANCE) -> float:
    """
    Expected payoff of the walk stopped when it leaves (-a, b). The slices are generated one after the other over the
    absorbing band, only the current slice is kept in memory.

    :param p: payoff of a single stop
    :type p: PayoffSpec
    :param levels: the values (a, b) of the exit levels -a and b
    :type levels: Tuple[float, float]
    :param dt: time step
    :type dt: float
    :param steps: horizon N
    :type steps: int
    :param leak_tolerance: largest mass allowed to be still inside the band at the horizon
    :type leak_tolerance: float
    :return: the expectation
    :rtype: float
    """
    if p.n != 1:
        raise ValueError(f"the hitting time embeds a single marginal, the payoff has {p.n} stops")
    sqrt_dt = math.sqrt(dt)
    bounds = []
    for position, x in enumerate((-levels[0], levels[1])):
        scaled = x / sqrt_dt
        if abs(scaled - round(scaled)) > 1e-9 or round(scaled) == 0:
            raise UnrepresentableAtom(position, x)
        bounds.append(int(round(scaled)))
    lo, hi = bounds

    augment = p.required_augment()
    max_cap, min_floor = p.level_caps(sqrt_dt)
    keys = root_keys(augment)
    mass = np.ones(1)
    value = 0.
    for i in range(steps + 1):
        absorbed = (keys[:, 0] <= lo) | (keys[:, 0] >= hi)
        if absorbed.any():
            snap = Snapshot.from_keys(np.full(absorbed.sum(), i), keys[absorbed], dt, augment)
            value += math.fsum(mass[absorbed] * p.stop_reward(1, snap))
        if i == steps:
            break
        keys, up, down = advance_keys(keys, augment, max_cap, min_floor, (lo, hi))
        inner = up >= 0
        next_mass = np.zeros(len(keys))
        np.add.at(next_mass, up[inner], 0.5 * mass[inner])
        np.add.at(next_mass, down[inner], 0.5 * mass[inner])
        mass = next_mass

    remaining = float(mass[(keys[:, 0] > lo) & (keys[:, 0] < hi)].sum())
    if remaining > leak_tolerance:
        raise HorizonTooShort(remaining)
    return value


@dataclass(frozen=True)
class MaxLaw:
    """
    Law of the running maximum at the stop of the embedding which stops when the maximum reaches the barycenter
    b(x) = E[X | X >= x]
    """
    measure: DiscreteMeasure

    @property
    def mean(self) -> float:
        return self.measure.mean

    def expectation(self, f: Callable[[float], float]) -> float:
        return integrate(self.measure, f)

    def call(self, strike: float) -> float:
        return math.fsum(np.maximum(self.measure.positions - strike, 0.) * self.measure.weights)

    def capped_mean(self, cap: float) -> float:
        return math.fsum(np.minimum(self.measure.positions, cap) * self.measure.weights)


def azema_yor_law_of_max(mu: DiscreteMeasure, max_atom: float = MAX_ATOM_WEIGHT) -> MaxLaw:
    """
    Law of the maximum of the Azema-Yor embedding of a centered, finely quantized measure: the maximum is b(X) with
    X ~ mu, so P[M >= b(x)] = mu([x, inf))

    :param mu: centered measure, no atom heavier than max_atom (apart from the point mass at 0)
    :type mu: DiscreteMeasure
    :param max_atom: heaviest atom accepted
    :type max_atom: float
    :return: the law of the maximum
    :rtype: MaxLaw
    """
    if len(mu) == 1 and abs(mu.positions[0]) <= 1e-12:
        return MaxLaw(dirac(0.))
    if abs(mu.mean) > 1e-10:
        raise MeasureError(f"the measure must be centered, its mean is {mu.mean!r}")
    if mu.weights.max() > max_atom:
        raise AtomTooLarge(f"an atom of weight {mu.weights.max():.3g} exceeds {max_atom}: the barycenter transform"
                           f" needs a quantization with more atoms")
    tail_mass = np.cumsum(mu.weights[::-1])[::-1]
    tail_moment = np.cumsum((mu.weights * mu.positions)[::-1])[::-1]
    barycenters = np.maximum(tail_moment / tail_mass, 0.)
    return MaxLaw(make_discrete_measure(zip(barycenters, mu.weights)))


@dataclass
class MarginalCheck:
    w1: float
    band: float

    @property
    def within(self) -> bool:
        return self.w1 <= self.band + 1e-15

    def to_dict(self) -> Dict:
        return {'w1': self.w1, 'band': self.band, 'within': self.within}


@dataclass
class EmbeddingCheck:
    marginals: List[MarginalCheck]
    samples: int
    seed: int

    @property
    def passed(self) -> bool:
        return all(m.within for m in self.marginals)

    def to_dict(self) -> Dict:
        return {'samples': self.samples, 'seed': self.seed, 'pass': self.passed,
                'marginals': [m.to_dict() for m in self.marginals]}


def simulate_stops(policy: StoppingPolicy, l: Lattice, samples: int, rng: np.random.Generator) -> np.ndarray:
    """
    Simulate the walk under a randomized policy

    :return: stopped values, shape (samples, n)
    :rtype: np.ndarray
    """
    n = policy.n
    index = np.zeros(samples, dtype=np.int64)
    phase = np.ones(samples, dtype=np.int64)
    anchor = np.zeros(samples, dtype=np.int64)
    stopped = np.full((samples, n), np.nan)
    for i in range(l.steps + 1):
        inner = l.has_children(i)
        values = l.values(i)
        for k in range(1, n + 1):
            active = np.flatnonzero(phase == k)
            if not len(active):
                continue
            rows = anchor[active] if policy.coupled and k == 2 else 0
            probability = policy.stop_probability[k - 1][i][rows, index[active]]
            probability = np.where(inner[index[active]], probability, 1.)
            stops = active[rng.random(len(active)) < probability]
            stopped[stops, k - 1] = values[index[stops]]
            phase[stops] += 1
            if policy.coupled and k == 1:
                anchor[stops] = l.global_id(i, index[stops])
        if i == l.steps:
            break
        moving = np.flatnonzero(phase <= n)
        up, down = l.children(i)
        steps = rng.random(len(moving)) < 0.5
        index[moving] = np.where(steps, up[index[moving]], down[index[moving]])
    return stopped


def _empirical(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    positions, counts = np.unique(values, return_counts=True)
    return positions, counts / len(values)


def mc_embedding_check(policy: StoppingPolicy, l: Lattice, mu: PeacockVector, samples: int = 10 ** 4,
                       seed: int = 0, bootstrap: int = 200, batch_size: int = 10 ** 4,
                       show_progress: bool = False) -> EmbeddingCheck:
    """
    Simulate the walk under the policy and compare the empirical stopped marginals with mu. The band of each
    marginal is three times the root mean square W1 distance between bootstrap resamples and the empirical law.

    :param policy: the (randomized) stopping policy
    :type policy: StoppingPolicy
    :param l: the lattice of the policy
    :type l: Lattice
    :param mu: the target marginals
    :type mu: PeacockVector
    :param samples: number of simulated paths, at least MIN_MC_SAMPLES
    :type samples: int
    :param seed: root seed, every batch and the bootstrap get their own generator spawned from it
    :type seed: int
    :param bootstrap: number of bootstrap resamples
    :type bootstrap: int
    :param batch_size: paths simulated at once
    :type batch_size: int
    :param show_progress: display a progress bar
    :type show_progress: bool
    :return: per marginal W1 distance and band
    :rtype: EmbeddingCheck
    """
    if samples < MIN_MC_SAMPLES:
        raise ValueError(f"the embedding check needs at least {MIN_MC_SAMPLES} paths, received {samples}")
    sizes = [min(batch_size, samples - start) for start in range(0, samples, batch_size)]
    children = np.random.SeedSequence(seed).spawn(len(sizes) + 1)
    batches = [simulate_stops(policy, l, size, np.random.default_rng(child))
               for size, child in tqdm(list(zip(sizes, children)), disable=not show_progress, desc="monte carlo")]
    stopped = np.concatenate(batches)
    bootstrap_rng = np.random.default_rng(children[-1])

    checks = []
    for k, m in enumerate(mu):
        positions, weights = _empirical(stopped[:, k])
        empirical = make_discrete_measure(zip(positions, weights))
        distances = []
        for _ in range(bootstrap):
            counts = bootstrap_rng.multinomial(samples, weights)
            resample = make_discrete_measure(zip(positions, counts / samples))
            distances.append(wasserstein1(resample, empirical))
        band = 3. * math.sqrt(np.mean(np.square(distances)))
        checks.append(MarginalCheck(wasserstein1(empirical, m), band))
    report = EmbeddingCheck(checks, samples, seed)
    if not report.passed:
        LoggerGenerator.get_shared_logger("mc_embedding_check").warning(
            f"simulated marginals outside their bands: {[c.to_dict() for c in checks]}")
    return report


def mc_convergence_slope(policy: StoppingPolicy, l: Lattice, mu: PeacockVector, sizes: Sequence[int],
                         seed: int = 0) -> float:
    """
    Slope of log(mean W1 distance between simulated and target marginals) against log(samples),
    close to -1/2 for a policy embedding mu
    """
    distances = []
    for position, size in enumerate(sizes):
        rng = np.random.default_rng(np.random.SeedSequence([seed, position]))
        stopped = simulate_stops(policy, l, size, rng)
        w1 = [wasserstein1(make_discrete_measure(zip(*_empirical(stopped[:, k]))), m) for k, m in enumerate(mu)]
        distances.append(float(np.mean(w1)))
    if min(distances) <= 0:
        raise ValueError("the simulated marginals match exactly, the convergence slope is undefined")
    return float(np.polyfit(np.log(sizes), np.log(distances), 1)[0])
