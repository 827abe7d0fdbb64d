import json
import tempfile
from pathlib import Path

from SkorokhodDual.config.RunConfig import load_run_config, parse_run_config
from SkorokhodDual.payoffs.PayoffSpec import PayoffSpec, StopIndicator
from SkorokhodDual.utils.errors import ConfigInvalid
from tests.fixtures import ONE_THIRD_ATOMS, TWO_POINT_ATOMS


def _base_config(**overrides):
    config = {'marginals': {'atoms': [ONE_THIRD_ATOMS]},
              'lattice': {'steps': 4, 'dt': 1.},
              'payoff': {'kind': 'stop_indicator'}}
    config.update(overrides)
    return config


def _assert_invalid(data, base_path=None):
    try:
        parse_run_config(data, base_path)
        raise AssertionError(f"{data} should be rejected")
    except ConfigInvalid:
        pass


def test_parse_defaults(verbose=0, **kwargs):
    config = parse_run_config(_base_config())
    assert config.build_payoff() == PayoffSpec(StopIndicator())
    assert config.marginal_count == 1
    assert config.dual.step_rule == 'polyak' and config.dual.iterations == 1000
    assert config.verification.mode == 'auto'
    assert config.log_level == 'WARNING' and config.output_dir is None

    solver_kwargs = config.solver_kwargs()
    assert solver_kwargs['steps'] == 4 and solver_kwargs['dt'] == 1.
    assert solver_kwargs['run_primal'] and solver_kwargs['run_dual']
    assert solver_kwargs['gap_tolerance'] == 1e-2 and solver_kwargs['dual_stop_gap'] is None

    mu, errors = config.build_marginals()
    assert len(mu) == 1 and errors == [0.]


def test_strict_keys(verbose=0, **kwargs):
    _assert_invalid(_base_config(seeds=3))
    _assert_invalid(_base_config(lattice={'steps': 4, 'dt': 1., 'horizon': 4.}))
    _assert_invalid(_base_config(lattice={'steps': 0, 'dt': 1.}))
    _assert_invalid(_base_config(dual={'step_rule': 'adam'}))
    _assert_invalid(_base_config(payoff={'kind': 'rainbow'}))
    _assert_invalid(_base_config(base_path="/tmp"))
    _assert_invalid([1, 2])


def test_marginal_sources(verbose=0, **kwargs):
    _assert_invalid(_base_config(marginals={}))
    _assert_invalid(_base_config(marginals={'atoms': []}))
    _assert_invalid(_base_config(marginals={'atoms': [ONE_THIRD_ATOMS],
                                            'uniform': [{'low': -1., 'high': 1., 'count': 4}]}))
    _assert_invalid(_base_config(marginals={'uniform': [{'low': 1., 'high': -1., 'count': 4}]}))

    config = parse_run_config(_base_config(marginals={'uniform': [{'low': -1., 'high': 1., 'count': 4}],
                                                      'snap': True},
                                           lattice={'steps': 8, 'dt': 0.25}))
    mu, errors = config.build_marginals()
    # each atom is split evenly between its two lattice neighbours
    assert mu[0].atoms == [(-1., 0.125), (-0.5, 0.25), (0., 0.25), (0.5, 0.25), (1., 0.125)]
    assert errors[0] > 0


def test_files_and_paths(verbose=0, **kwargs):
    with tempfile.TemporaryDirectory() as folder:
        folder = Path(folder)
        with open(folder / "two_point.json", 'w') as f:
            json.dump(TWO_POINT_ATOMS, f)
        data = _base_config(marginals={'files': ["two_point.json"]}, output_dir="runs/first")
        with open(folder / "config.json", 'w') as f:
            json.dump(data, f)

        config = load_run_config(folder / "config.json")
        assert config.marginals.files == [folder.resolve() / "two_point.json"]
        assert config.output_dir == folder.resolve() / "runs" / "first"
        mu, _ = config.build_marginals()
        assert mu[0].atoms == [(-1., 0.5), (1., 0.5)]

        _assert_invalid(_base_config(marginals={'files': ["missing.json"]}), folder)

        with open(folder / "broken.json", 'w') as f:
            f.write("{not json")
        try:
            load_run_config(folder / "broken.json")
            raise AssertionError("the configuration is not JSON")
        except ConfigInvalid:
            pass


def test_transport_section(verbose=0, **kwargs):
    data = _base_config(transport={'kind': 'variance', 'cap': 20., 'side': 'upper'})
    _assert_invalid(data)
    del data['payoff']
    config = parse_run_config(data)
    tp = config.transport.to_transport_payoff()
    assert tp.kind == 'variance' and tp.cap == 20. and tp.maturities == (1.,)

    _assert_invalid({**data, 'transport': {'kind': 'variance', 'maturities': [0.5, 1.]}})
    _assert_invalid({**data, 'transport': {'kind': 'variance', 'side': 'middle'}})


def test_stabilize_section(verbose=0, **kwargs):
    config = parse_run_config(_base_config(lattice={'steps': 4, 'dt': 1., 'stabilize': {'max_steps': 16}}))
    solver_kwargs = config.solver_kwargs()
    assert solver_kwargs['stabilize_tolerance'] == 1e-3 and solver_kwargs['max_steps'] == 16
    assert parse_run_config(_base_config()).solver_kwargs()['stabilize_tolerance'] is None

    _assert_invalid(_base_config(lattice={'steps': 4, 'dt': 1., 'stabilize': {'max_steps': 2}}))
    _assert_invalid(_base_config(lattice={'steps': 4, 'dt': 1., 'stabilize': {'tolerance': 0.}}))
    _assert_invalid(_base_config(lattice={'steps': 4, 'dt': 1., 'stabilize': {'rounds': 3}}))
