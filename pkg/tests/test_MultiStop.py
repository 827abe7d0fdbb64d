import dataclasses
import math
import os
import tempfile

import numpy as np

from SkorokhodDual.lattice.Lattice import Lattice
from SkorokhodDual.payoffs.PayoffSpec import Barrier, ForwardStart, LocalTime, Lookback, PayoffSpec, SeparableSum, \
    StopIndicator, StopTimeFunction
from SkorokhodDual.solvers.DualOptimizer import DualPotential
from SkorokhodDual.solvers.MultiStop import GRID_HEADER, StoppingPolicy, export_grid_csv, extract_hedge, is_coupled, \
    multi_stopping_value, propagate, snell_envelope, verify_superhedge
from SkorokhodDual.utils.errors import ArityMismatch, UnsupportedPayoff
from SkorokhodDual.utils.io_utils import read_csv_rows
from tests.fixtures import path_tree_value, random_policy, random_potential, solver_lattice, upper_hull_at


def test_snell_envelope(verbose=0, **kwargs):
    l = Lattice(4, 1.)
    result = snell_envelope(l, lambda snap: np.maximum(snap.value, 0.))
    if verbose:
        print(result.values[0])
    # the call is a submartingale: waiting until the horizon is optimal
    assert math.isclose(result.value, 0.75)
    assert result.policy[4].all() and not result.policy[0].any()

    pathwise = snell_envelope(l, lambda snap: np.maximum(snap.value, 0.), aggregate="max")
    assert pathwise.value == 4.


def test_snell_examples(verbose=0, **kwargs):
    # |x| over one step: continue at the root, stop at +/-1
    absolute = snell_envelope(Lattice(1, 1.), lambda snap: np.abs(snap.value))
    assert absolute.value == 1.
    assert not absolute.policy[0].any() and absolute.policy[1].all()

    l = Lattice(6, 0.25)
    martingale = snell_envelope(l, lambda snap: snap.value)
    assert abs(martingale.value) <= 1e-12
    concave = snell_envelope(l, lambda snap: 1. - snap.value ** 2)
    if verbose:
        print(martingale.value, concave.value)
    assert concave.value == 1.
    for i in range(l.steps):
        up, down = l.children(i)
        mean = 0.5 * (concave.values[i + 1][up] + concave.values[i + 1][down])
        assert (concave.values[i] >= mean - 1e-12).all()


def test_concave_envelope(verbose=0, **kwargs):
    rng = np.random.default_rng(11)
    xs = np.arange(-4, 5) / 4.
    l = Lattice(400, 1. / 16, level_bounds=(-4, 4))
    p = PayoffSpec(StopTimeFunction((0.,)))
    for _ in range(50):
        lam = DualPotential([xs], [rng.normal(size=len(xs))])
        value = multi_stopping_value(l, p, lam).value
        expected = upper_hull_at(xs, -lam.values[0], 0.)
        if verbose:
            print(value, expected)
        assert abs(value - expected) <= 1e-9


def _random_payoff(rng: np.random.Generator, dt: float) -> PayoffSpec:
    sqrt_dt = math.sqrt(dt)
    cap = float(rng.integers(1, 4)) * sqrt_dt
    barrier = float(rng.integers(1, 4)) * sqrt_dt
    family = int(rng.integers(7))
    if family == 0:
        return PayoffSpec(Lookback(cap=cap))
    if family == 1:
        return PayoffSpec(Lookback(side="min", floor=-cap))
    if family == 2:
        return PayoffSpec(Barrier(upper=barrier, knock=str(rng.choice(["in", "out"]))))
    if family == 3:
        return PayoffSpec(LocalTime(cap=cap))
    if family == 4:
        return PayoffSpec(SeparableSum((Lookback(cap=cap, stop=1), StopTimeFunction((0., -rng.uniform(0.1, 1.))))),
                          n=2)
    if family == 5:
        return PayoffSpec(SeparableSum((LocalTime(cap=cap, stop=1), Barrier(lower=-barrier, stop=2))), n=2)
    return PayoffSpec(ForwardStart(cap=cap), n=2)


def test_brute_force(verbose=0, **kwargs):
    rng = np.random.default_rng(5)
    for case in range(20):
        steps = int(rng.choice([6, 8, 10]))
        dt = float(rng.choice([0.25, 1.]))
        p = _random_payoff(rng, dt)
        l = solver_lattice(p, steps, dt)
        lam = None if case % 2 == 0 else random_potential(rng, l, p.n, 0.3)
        value = multi_stopping_value(l, p, lam).value
        expected = path_tree_value(p, steps, dt, lam)
        if verbose:
            print(p.describe(), steps, dt, value, expected)
        assert abs(value - expected) <= 1e-10


def test_several_stops_at_one_node(verbose=0, **kwargs):
    # stopping both phases at the root collects 1 + 1
    p = PayoffSpec(SeparableSum((StopIndicator(stop=1), StopIndicator(stop=2))), n=2)
    l = solver_lattice(p, 4, 1.)
    result = multi_stopping_value(l, p)
    assert result.value == 2.
    assert result.policy.action(1, 0, 0) == "stop" and result.policy.action(2, 0, 0) == "stop"


def test_propagate(verbose=0, **kwargs):
    rng = np.random.default_rng(2)
    l = Lattice(6, 1.)
    law = propagate(l, random_policy(rng, l, 2))
    for k in (1, 2):
        values, masses = law.law(k, l)
        assert math.isclose(law.total_mass(k), 1.)
        assert abs(float(values @ masses)) <= 1e-12

    immediate = StoppingPolicy([[np.ones((1, l.slice_size(i))) for i in range(l.steps + 1)]], coupled=False)
    values, masses = propagate(l, immediate).law(1, l, tol=1e-15)
    assert list(values) == [0.] and list(masses) == [1.]

    # nothing stops before the horizon
    never = StoppingPolicy([[np.zeros((1, l.slice_size(i))) for i in range(l.steps + 1)]], coupled=False)
    values, masses = propagate(l, never).law(1, l, tol=1e-15)
    assert np.allclose(values, [-6., -4., -2., 0., 2., 4., 6.])
    assert np.allclose(masses * 64, [1, 6, 15, 20, 15, 6, 1])


def test_superhedge(verbose=0, **kwargs):
    rng = np.random.default_rng(3)
    instances = [
        (PayoffSpec(Lookback(cap=1.)), 10, 0.25),
        (PayoffSpec(SeparableSum((Lookback(cap=1., stop=1), LocalTime(cap=1., stop=2))), n=2), 12, 0.25),
        (PayoffSpec(ForwardStart(cap=1.5), n=2), 8, 1.),
    ]
    for p, steps, dt in instances:
        l = solver_lattice(p, steps, dt)
        lam = random_potential(rng, l, p.n, 0.2)
        result = multi_stopping_value(l, p, lam)
        hedge = extract_hedge(result.grids, l)
        report = verify_superhedge(lam, hedge, p, l)
        if verbose:
            print(p.kind, report.to_dict())
        assert report.mode == "exhaustive"
        assert report.max_violation <= 1e-8
        assert report.checked == 2 ** steps * math.comb(steps + p.n, p.n)

        # a hedge short of capital is caught
        short = verify_superhedge(lam, dataclasses.replace(hedge, cash=hedge.cash - 0.1), p, l)
        assert math.isclose(short.max_violation, 0.1 + report.max_violation, abs_tol=1e-9)


def test_sampled_superhedge(verbose=0, **kwargs):
    rng = np.random.default_rng(4)
    p = PayoffSpec(SeparableSum((Lookback(cap=1., stop=1), LocalTime(cap=1., stop=2))), n=2)
    l = solver_lattice(p, 20, 0.25)
    lam = random_potential(rng, l, 2, 0.2)
    result = multi_stopping_value(l, p, lam)
    report = verify_superhedge(lam, extract_hedge(result.grids, l), p, l, samples=10 ** 4, seed=1)
    if verbose:
        print(report.to_dict())
    assert report.mode == "sampled"
    assert report.max_violation <= 1e-6
    assert len(report.worst_path) == 20 and len(report.worst_stops) == 2


def test_coupled_limits(verbose=0, **kwargs):
    p = PayoffSpec(ForwardStart(cap=1.), n=2)
    assert is_coupled(Lattice(4, 1.), p)
    assert not is_coupled(Lattice(4, 1.), PayoffSpec(StopTimeFunction((0., 1.)), n=2))
    try:
        is_coupled(Lattice(21, 1.), p)
        raise AssertionError("coupled payoffs are limited in horizon")
    except UnsupportedPayoff:
        pass

    l = Lattice(4, 1.)
    lam = random_potential(np.random.default_rng(0), l, 1)
    try:
        multi_stopping_value(l, p, lam)
        raise AssertionError("one potential for two stops should raise")
    except ArityMismatch:
        pass


def test_export_grid_csv(verbose=0, **kwargs):
    l = Lattice(3, 1.)
    result = multi_stopping_value(l, PayoffSpec(StopTimeFunction((-1.,))))
    with tempfile.TemporaryDirectory() as folder:
        path = os.path.join(folder, "values.csv")
        export_grid_csv(path, l, result.grids.values, result.grids.anchors)
        with open(path, encoding='utf-8') as f:
            header = f.readline().strip().split(',')
        rows = read_csv_rows(path)
    assert tuple(header) == GRID_HEADER
    assert len(rows) == l.state_count
    assert rows[0][:5] == ['1', '0', '0', '0', '']
    assert float(rows[0][-1]) == 0.
