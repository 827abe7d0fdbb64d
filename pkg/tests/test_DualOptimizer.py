import math
import os
import tempfile

import numpy as np

from SkorokhodDual.lattice.Lattice import Lattice
from SkorokhodDual.measures.DiscreteMeasure import make_discrete_measure, make_peacock
from SkorokhodDual.payoffs.PayoffSpec import LocalTime, Lookback, PayoffSpec, SeparableSum, StopIndicator, \
    StopTimeFunction
from SkorokhodDual.solvers.DualOptimizer import DualOptimizer, DualPotential, default_strikes, dual_objective, \
    evaluate_dual, minimize_dual, subgradient
from SkorokhodDual.utils.errors import ArityMismatch, StrikeGridError
from SkorokhodDual.utils.io_utils import read_csv_rows
from tests.fixtures import ONE_THIRD_ATOMS, TWO_POINT_ATOMS, random_peacock, solver_lattice


def test_dual_potential(verbose=0, **kwargs):
    lam = DualPotential([[-1., 0., 1.]], [[1., 0., 1.]])
    assert np.allclose(lam.evaluate(1, [-1., 0.5, 0.]), [1., 0.5, 0.])
    # linear extension beyond the end strikes
    assert np.allclose(lam.evaluate(1, [2., -3.]), [2., 3.])
    assert np.allclose(lam.basis(1, np.linspace(-2, 2, 9)).sum(axis=1), 1.)
    assert lam.covers(-1., 1.) and not lam.covers(-2., 1.)

    shifted = lam.shifted([-0.5])
    assert np.allclose(shifted.values[0], [0.5, -0.5, 0.5])
    assert np.allclose(shifted.clipped().values[0], [0.5, 0., 0.5])
    assert list(lam.table_rows()) == [(1, -1., 1.), (1, 0., 0.), (1, 1., 1.)]

    constant = DualPotential([[0.]], [[2.]])
    assert np.allclose(constant.evaluate(1, [-5., 5.]), [2., 2.])

    for strikes, values in [([[0., 0.]], [[1., 1.]]), ([[0., 1.]], [[1.]]), ([[]], [[]]),
                            ([[0., math.inf]], [[0., 0.]])]:
        try:
            DualPotential(strikes, values)
            raise AssertionError(f"strikes {strikes} should be rejected")
        except StrikeGridError:
            pass


def test_weak_duality(verbose=0, **kwargs):
    rng = np.random.default_rng(6)
    mu = make_peacock([make_discrete_measure(ONE_THIRD_ATOMS)])
    p = PayoffSpec(StopIndicator())
    l = Lattice(4, 1.)
    strikes = default_strikes(l, mu)
    for _ in range(5):
        lam = DualPotential(strikes, [rng.uniform(0., 2., size=len(s)) for s in strikes])
        value = dual_objective(lam, l, p, mu)
        if verbose:
            print(value)
        assert value >= 1. / 3 - 1e-12

    try:
        evaluate_dual(DualPotential.zeros(strikes * 2), l, p, mu)
        raise AssertionError("two potentials for one marginal should raise")
    except ArityMismatch:
        pass


def test_finite_differences(verbose=0, **kwargs):
    rng = np.random.default_rng(8)
    mu = random_peacock(rng, 2, 6)
    p = PayoffSpec(SeparableSum((Lookback(cap=2., stop=1), LocalTime(cap=2., stop=2))), n=2)
    l = solver_lattice(p, 6, 1.)
    strikes = default_strikes(l, mu)
    eps = 1e-7
    checked = 0
    for _ in range(10):
        lam = DualPotential(strikes, [rng.normal(size=len(s)) for s in strikes])
        g = subgradient(lam, l, p, mu)
        for _ in range(10):
            d = [rng.normal(size=len(s)) for s in strikes]
            lam_plus = lam.with_values([v + eps * e for v, e in zip(lam.values, d)])
            lam_minus = lam.with_values([v - eps * e for v, e in zip(lam.values, d)])
            # a policy tie between the two points makes the dual kinked along d
            if not all(np.allclose(a, b, atol=1e-9) and np.allclose(a, c, atol=1e-9)
                       for a, b, c in zip(g, subgradient(lam_plus, l, p, mu), subgradient(lam_minus, l, p, mu))):
                continue
            numeric = (dual_objective(lam_plus, l, p, mu) - dual_objective(lam_minus, l, p, mu)) / (2 * eps)
            analytic = sum(float(a @ b) for a, b in zip(g, d))
            if verbose:
                print(numeric, analytic)
            assert abs(numeric - analytic) <= max(1e-4 * abs(analytic), 1e-6)
            checked += 1
    assert checked >= 90


def test_dual_convexity(verbose=0, **kwargs):
    rng = np.random.default_rng(9)
    mu = random_peacock(rng, 2, 6)
    p = PayoffSpec(SeparableSum((Lookback(cap=2., stop=1), LocalTime(cap=2., stop=2))), n=2)
    l = solver_lattice(p, 6, 1.)
    strikes = default_strikes(l, mu)
    for _ in range(20):
        first = DualPotential(strikes, [rng.normal(size=len(s)) for s in strikes])
        second = DualPotential(strikes, [rng.normal(size=len(s)) for s in strikes])
        ends = dual_objective(first, l, p, mu), dual_objective(second, l, p, mu)
        for t in np.linspace(0., 1., 6):
            mixed = first.with_values([t * a + (1 - t) * b for a, b in zip(first.values, second.values)])
            value = dual_objective(mixed, l, p, mu)
            if verbose:
                print(t, value, ends)
            assert value <= t * ends[0] + (1 - t) * ends[1] + 1e-10


def test_constant_shift(verbose=0, **kwargs):
    rng = np.random.default_rng(10)
    mu = random_peacock(rng, 2, 6)
    p = PayoffSpec(SeparableSum((Lookback(cap=2., stop=1), LocalTime(cap=2., stop=2))), n=2)
    l = solver_lattice(p, 6, 1.)
    strikes = default_strikes(l, mu)
    for _ in range(10):
        lam = DualPotential(strikes, [rng.normal(size=len(s)) for s in strikes])
        shifted = lam.shifted(rng.normal(scale=3., size=2))
        assert abs(dual_objective(shifted, l, p, mu) - dual_objective(lam, l, p, mu)) <= 1e-10


def test_one_third_dual(verbose=0, **kwargs):
    mu = make_peacock([make_discrete_measure(ONE_THIRD_ATOMS)])
    p = PayoffSpec(StopIndicator())
    result = minimize_dual(Lattice(4, 1.), p, mu, iterations=300, step_rule="polyak", target=1. / 3,
                           stop_gap=1e-6)
    if verbose:
        print(result.best_value, result.iterations)
    assert result.stopped_early
    assert 1. / 3 - 1e-12 <= result.best_value <= 1. / 3 + 1e-6
    bests = [best for _, _, best in result.history]
    assert all(a >= b for a, b in zip(bests[:-1], bests[1:]))


def test_two_point_dual(verbose=0, **kwargs):
    mu = make_peacock([make_discrete_measure(TWO_POINT_ATOMS)])
    p = PayoffSpec(StopTimeFunction((-1.,)))
    result = minimize_dual(Lattice(4, 1.), p, mu, iterations=100, step_rule="polyak", target=-1., stop_gap=1e-6)
    objectives = [objective for _, objective, _ in result.history]
    if verbose:
        print(objectives)
    # the gap to the optimum shrinks by three at every step
    assert np.allclose(objectives[:3], [0., -2. / 3, -8. / 9])
    assert -1. - 1e-12 <= result.best_value <= -1. + 1e-6
    lam = result.best_lambda
    curvature = lam.evaluate(1, [-1.])[0] + lam.evaluate(1, [1.])[0] - 2 * lam.evaluate(1, [0.])[0]
    assert curvature < 0


def test_sqrt_steps(verbose=0, **kwargs):
    mu = make_peacock([make_discrete_measure(ONE_THIRD_ATOMS)])
    p = PayoffSpec(StopIndicator())
    result = minimize_dual(Lattice(4, 1.), p, mu, iterations=50)
    assert result.iterations == 50 and not result.stopped_early
    assert result.best_value >= 1. / 3 - 1e-12
    assert result.best_value <= result.history[0][1]

    warm = minimize_dual(Lattice(4, 1.), p, mu, iterations=5, warm_start=result.best_lambda)
    assert warm.history[0][1] == result.best_value


def test_optimizer_arguments(verbose=0, **kwargs):
    mu = make_peacock([make_discrete_measure(ONE_THIRD_ATOMS)])
    p = PayoffSpec(StopIndicator())
    l = Lattice(4, 1.)
    for kwargs_ in [{'iterations': 0}, {'step_rule': 'newton'}]:
        try:
            DualOptimizer(l, p, mu, **kwargs_)
            raise AssertionError(f"{kwargs_} should be rejected")
        except ValueError:
            pass
    try:
        minimize_dual(l, p, mu, iterations=1, strikes=[[-1., 0., 1.]])
        raise AssertionError("strikes must cover the lattice values")
    except StrikeGridError:
        pass


def test_exports(verbose=0, **kwargs):
    mu = make_peacock([make_discrete_measure(ONE_THIRD_ATOMS)])
    result = minimize_dual(Lattice(4, 1.), PayoffSpec(StopIndicator()), mu, iterations=3)
    with tempfile.TemporaryDirectory() as folder:
        history_path = os.path.join(folder, "history.csv")
        lambda_path = os.path.join(folder, "lambda.csv")
        result.export_history_csv(history_path)
        result.export_lambda_csv(lambda_path)
        history = read_csv_rows(history_path)
        table = read_csv_rows(lambda_path)
    assert [int(row[0]) for row in history] == [1, 2, 3]
    assert len(table) == 9 and {row[0] for row in table} == {'1'}
