"""
helpers shared by the test modules: random instances and independent reference values
"""
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from SkorokhodDual.lattice.Lattice import Lattice, PathState, build_lattice
from SkorokhodDual.measures.DiscreteMeasure import PeacockVector, make_discrete_measure, make_peacock
from SkorokhodDual.payoffs.PayoffSpec import PayoffSpec, evaluate
from SkorokhodDual.solvers.DualOptimizer import DualPotential
from SkorokhodDual.solvers.MultiStop import StoppingPolicy, propagate

ONE_THIRD_ATOMS = [(-1., 1. / 3), (0., 1. / 3), (1., 1. / 3)]
TWO_POINT_ATOMS = [(-1., 0.5), (1., 0.5)]


def solver_lattice(p: PayoffSpec, steps: int, dt: float, **kwargs) -> Lattice:
    """
    lattice built the way the solver builds it for the payoff p
    """
    max_cap, min_floor = p.level_caps(math.sqrt(dt))
    return build_lattice(steps, dt, p.required_augment(), max_level_cap=max_cap, min_level_floor=min_floor, **kwargs)


def random_policy(rng: np.random.Generator, l: Lattice, n: int, low: float = 0.2,
                  high: float = 0.8) -> StoppingPolicy:
    probabilities = [[rng.uniform(low, high, size=(1, l.slice_size(i))) for i in range(l.steps + 1)]
                     for _ in range(n)]
    return StoppingPolicy(probabilities, coupled=False)


def random_peacock(rng: np.random.Generator, n: int, steps: int, dt: float = 1.) -> PeacockVector:
    """
    Marginals of the walk stopped by a random randomized policy within the horizon: they are centered, increasing
    in convex order, on lattice values and embeddable on the lattice (steps, dt)
    """
    l = Lattice(steps, dt)
    law = propagate(l, random_policy(rng, l, n))
    measures = [make_discrete_measure(zip(*law.law(k, l))) for k in range(1, n + 1)]
    return make_peacock(measures)


def random_potential(rng: np.random.Generator, l: Lattice, n: int, scale: float = 1.) -> DualPotential:
    strikes = [np.arange(-l.steps, l.steps + 1) * l.sqrt_dt for _ in range(n)]
    return DualPotential(strikes, [scale * rng.normal(size=len(s)) for s in strikes])


def _child(state: PathState, step: int) -> PathState:
    level = state.level + step
    return PathState(time_index=state.time_index + 1, level=level, max_level=max(state.max_level, level),
                     min_level=min(state.min_level, level), zero_visits=state.zero_visits + (level == 0),
                     phase=state.phase, dt=state.dt)


def path_tree_value(p: PayoffSpec, steps: int, dt: float, lam: Optional[DualPotential] = None) -> float:
    """
    Value of the multiple stopping problem sup E[Phi - sum_k lambda_k(B_theta_k)] computed on the tree of paths,
    every path statistic being tracked exactly, without recombination nor saturation
    """
    n = p.n

    def potential(k: int, state: PathState) -> float:
        return 0. if lam is None else float(lam.evaluate(k, np.array([state.value]))[0])

    def value(state: PathState, stops: Tuple[PathState, ...]) -> float:
        done = stops + (state,)
        if len(done) == n:
            best = evaluate(p, done) - sum(potential(k, s) for k, s in enumerate(done, start=1))
        else:
            best = value(state, done)
        if state.time_index < steps:
            best = max(best, 0.5 * (value(_child(state, 1), stops) + value(_child(state, -1), stops)))
        return best

    root = PathState(time_index=0, level=0, max_level=0, min_level=0, zero_visits=1, phase=0, dt=dt)
    return value(root, ())


def upper_hull_at(xs: Sequence[float], ys: Sequence[float], x0: float) -> float:
    """
    Smallest concave function above the points (xs, ys), evaluated at x0 inside [min xs, max xs]
    """
    points = sorted(zip(xs, ys))
    hull: List[Tuple[float, float]] = []
    for p in points:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    for (x1, y1), (x2, y2) in zip(hull[:-1], hull[1:]):
        if x1 <= x0 <= x2:
            return y1 + (y2 - y1) * (x0 - x1) / (x2 - x1)
    return max(y for x, y in hull if x == x0)


def harmonic(k: int) -> float:
    return math.fsum(1. / j for j in range(1, k + 1))
