import math

import numpy as np

from SkorokhodDual.lattice.Lattice import Lattice
from SkorokhodDual.measures.DiscreteMeasure import make_discrete_measure, make_peacock
from SkorokhodDual.oracles.Oracles import hitting_time_value
from SkorokhodDual.payoffs.PayoffSpec import Barrier, CustomTable, ForwardStart, Lookback, PayoffSpec, SeparableSum, \
    StopIndicator, StopTimeFunction
from SkorokhodDual.solvers.PrimalLP import build_primal_lp, duality_gap_report, export_lp_format, solve_lp
from SkorokhodDual.utils.errors import Infeasible, NegativeGap, UnrepresentableAtom
from tests.fixtures import ONE_THIRD_ATOMS, TWO_POINT_ATOMS, solver_lattice

THREE_POINT_ATOMS = [(-2., 0.25), (0., 0.5), (2., 0.25)]


def test_one_third(verbose=0, **kwargs):
    mu = make_peacock([make_discrete_measure(ONE_THIRD_ATOMS)])
    lp = build_primal_lp(Lattice(4, 1.), PayoffSpec(StopIndicator()), mu)
    solution = solve_lp(lp)
    if verbose:
        print(lp.shape, solution.to_dict())
    assert math.isclose(solution.value, 1. / 3, abs_tol=1e-9)
    assert solution.marginal_residual <= 1e-9
    values, masses = solution.law.law(1, lp.lattice, tol=1e-12)
    assert np.allclose(values, [-1., 0., 1.]) and np.allclose(masses, 1. / 3)
    # a third of the mass stops at the root, the rest continues
    assert math.isclose(solution.policy.stop_probability[0][0][0, 0], 1. / 3)


def test_expected_exit_time(verbose=0, **kwargs):
    mu = make_peacock([make_discrete_measure(TWO_POINT_ATOMS)])
    solution = solve_lp(build_primal_lp(Lattice(4, 1.), PayoffSpec(StopTimeFunction((-1.,))), mu))
    assert math.isclose(solution.value, -1., abs_tol=1e-9)

    # E[theta_2] = E[X_2^2] for every embedding of the pair
    mu_2 = make_peacock([make_discrete_measure(TWO_POINT_ATOMS), make_discrete_measure(THREE_POINT_ATOMS)])
    solution = solve_lp(build_primal_lp(Lattice(6, 1.), PayoffSpec(StopTimeFunction((0., -1.)), n=2), mu_2))
    if verbose:
        print(solution.to_dict())
    assert math.isclose(solution.value, -2., abs_tol=1e-9)
    assert solution.marginal_residual <= 1e-9


def test_coupled_program(verbose=0, **kwargs):
    mu = make_peacock([make_discrete_measure(TWO_POINT_ATOMS), make_discrete_measure(THREE_POINT_ATOMS)])
    lp = build_primal_lp(Lattice(4, 1.), PayoffSpec(ForwardStart(cap=5.), n=2), mu)
    assert lp.coupled
    solution = solve_lp(lp)
    # the only embedding sends +1 to {0, 2} and -1 to {-2, 0}
    assert math.isclose(solution.value, 1., abs_tol=1e-9)


def test_errors(verbose=0, **kwargs):
    p = PayoffSpec(StopIndicator())
    try:
        build_primal_lp(Lattice(4, 1.), p, make_peacock([make_discrete_measure([(-0.5, 0.5), (0.5, 0.5)])]))
        raise AssertionError("atoms off the lattice should raise")
    except UnrepresentableAtom as err:
        assert err.marginal_index == 0 and err.position == -0.5

    try:
        build_primal_lp(Lattice(4, 1.), PayoffSpec(StopTimeFunction((0., -1.)), n=2),
                        make_peacock([make_discrete_measure(TWO_POINT_ATOMS)]))
        raise AssertionError("two stops for one marginal should raise")
    except ValueError:
        pass

    # the atoms +/- 2 are out of reach in one step
    lp = build_primal_lp(Lattice(1, 1.), p, make_peacock([make_discrete_measure([(-2., 0.5), (2., 0.5)])]))
    try:
        solve_lp(lp)
        raise AssertionError("the horizon is too short")
    except Infeasible as err:
        if verbose:
            print(err, err.row_keys)
        assert len(err.certificate) == len(lp.rows) == len(err.row_keys)
        assert err.row_keys[0].startswith("flow_k1")


def test_duality_gap_report(verbose=0, **kwargs):
    mu = make_peacock([make_discrete_measure(ONE_THIRD_ATOMS)])
    solution = solve_lp(build_primal_lp(Lattice(4, 1.), PayoffSpec(StopIndicator()), mu))
    report = duality_gap_report(solution, 0.34)
    assert report.passed and math.isclose(report.gap, 0.34 - solution.value)
    assert not duality_gap_report(solution, 0.5).passed
    assert report.to_dict()['pass']
    try:
        duality_gap_report(solution, 0.3)
        raise AssertionError("a dual value below the primal value breaks weak duality")
    except NegativeGap as err:
        assert err.gap < 0


def test_export_lp_format(verbose=0, **kwargs):
    mu = make_peacock([make_discrete_measure(ONE_THIRD_ATOMS)])
    lp = build_primal_lp(Lattice(2, 1.), PayoffSpec(StopIndicator()), mu)
    text = export_lp_format(lp)
    if verbose:
        print(text)
    lines = text.splitlines()
    assert lines[1] == "Maximize" and lines[-1] == "End"
    assert "Subject To" in lines
    assert " obj: + 1.0 s_k1_a0_t0_x0" in lines
    assert any(line.startswith(" marginal_k1_j0:") for line in lines)


def test_affine_payoff(verbose=0, **kwargs):
    mu = make_peacock([make_discrete_measure(THREE_POINT_ATOMS)])
    base = PayoffSpec(Lookback(cap=1.))
    l = solver_lattice(base, 8, 1.)
    value = solve_lp(build_primal_lp(l, base, mu)).value
    for weight, constant in [(2., 0.5), (0.5, -1.), (3., 2.)]:
        # a table with no entry pays the constant at every state
        p = PayoffSpec(SeparableSum((Lookback(weight=weight, cap=1.), CustomTable(default=constant))))
        affine = solve_lp(build_primal_lp(l, p, mu)).value
        if verbose:
            print(weight, constant, value, affine)
        assert math.isclose(affine, weight * value + constant, abs_tol=1e-9)


def test_hitting_time_battery(verbose=0, **kwargs):
    # the walk stopped at +/-1 is the only embedding, up to a mass of 2^-32 still inside at the horizon
    mu = make_peacock([make_discrete_measure(TWO_POINT_ATOMS)])
    payoffs = [
        PayoffSpec(Lookback(cap=1.)),
        PayoffSpec(Lookback(side="min", floor=-1.)),
        PayoffSpec(Barrier(upper=0.5)),
        PayoffSpec(Barrier(upper=0.5, knock="out")),
        PayoffSpec(StopTimeFunction((-1.,))),
        PayoffSpec(StopTimeFunction((1.,), shape="put", strike=1.)),
    ]
    for p in payoffs:
        solution = solve_lp(build_primal_lp(solver_lattice(p, 64, 0.25), p, mu))
        expected = hitting_time_value(p, (1., 1.), 0.25, 64)
        if verbose:
            print(p.kind, solution.value, expected)
        assert abs(solution.value - expected) <= 1e-6
