import json
import tempfile
from pathlib import Path

from SkorokhodDual.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_PASS, run
from tests.fixtures import ONE_THIRD_ATOMS, TWO_POINT_ATOMS

REPORT_KEYS = {'instance', 'primal', 'dual', 'gap', 'oracles', 'certificates', 'timings', 'config_hash',
               'solver_version', 'name', 'exit_code'}


def _run(folder: Path, command: str, config: dict, output: str = "out"):
    config_path = folder / "instance.json"
    with open(config_path, 'w') as f:
        json.dump(config, f)
    output_dir = folder / output
    code = run([command, str(config_path), '--output-dir', str(output_dir), '--log-level', 'ERROR'])
    with open(output_dir / "report.json") as f:
        return code, json.load(f), output_dir


def _one_third_config():
    return {'marginals': {'atoms': [ONE_THIRD_ATOMS]},
            'lattice': {'steps': 4, 'dt': 1.},
            'payoff': {'kind': 'stop_indicator'},
            'dual': {'iterations': 300, 'stop_gap': 1e-6}}


def test_solve(verbose=0, **kwargs):
    with tempfile.TemporaryDirectory() as folder:
        code, report, output_dir = _run(Path(folder), 'solve', _one_third_config())
        if verbose:
            print(json.dumps(report, indent=2))
        assert code == EXIT_PASS and report['exit_code'] == EXIT_PASS
        assert REPORT_KEYS <= set(report)
        assert abs(report['primal']['value'] - 1. / 3) <= 1e-9
        assert report['gap']['pass']
        assert report['certificates']['superhedge']['max_violation'] <= 1e-8
        assert report['name'] == "instance"
        for artifact in ("dual_history.csv", "lambda.csv", "values.csv", "hedge.csv", "stopped_law.csv"):
            assert (output_dir / artifact).is_file()


def test_deterministic_reports(verbose=0, **kwargs):
    with tempfile.TemporaryDirectory() as folder:
        _, first, _ = _run(Path(folder), 'solve', _one_third_config(), "first")
        _, second, _ = _run(Path(folder), 'solve', _one_third_config(), "second")
    del first['timings'], second['timings']
    assert first == second


def test_infeasible_marginals(verbose=0, **kwargs):
    # the marginals decrease in convex order, no embedding exists
    config = {'marginals': {'atoms': [[[-2., 0.5], [2., 0.5]], TWO_POINT_ATOMS]},
              'lattice': {'steps': 4, 'dt': 1.},
              'payoff': {'kind': 'stop_time', 'coefficients': [0., -1.]}}
    with tempfile.TemporaryDirectory() as folder:
        code, report, _ = _run(Path(folder), 'solve', config)
    assert code == EXIT_INFEASIBLE
    assert report['certificates']['peacock']['pair_index'] == 0
    farkas = report['certificates']['farkas']
    assert len(farkas['certificate']) == len(farkas['rows'])
    assert report['error']['type'] == 'Infeasible'


def test_check_peacock(verbose=0, **kwargs):
    with tempfile.TemporaryDirectory() as folder:
        folder = Path(folder)
        for name, atoms in (("first.json", TWO_POINT_ATOMS), ("second.json", [[-2., 0.25], [0., 0.5], [2., 0.25]])):
            with open(folder / name, 'w') as f:
                json.dump(atoms, f)
        config = {'marginals': {'files': ["first.json", "second.json"]}, 'lattice': {'steps': 4, 'dt': 1.}}
        code, report, _ = _run(folder, 'check-peacock', config)
        assert code == EXIT_PASS
        assert report['certificates']['peacock']['ordered']

        config['marginals']['files'].reverse()
        code, report, _ = _run(folder, 'check-peacock', config)
        assert code == EXIT_INFEASIBLE
        assert not report['certificates']['peacock']['pairs'][0]['ordered']


def test_invalid_config(verbose=0, **kwargs):
    config = {**_one_third_config(), 'lattice': {'steps': 4, 'dt': 1., 'size': 3}}
    with tempfile.TemporaryDirectory() as folder:
        code, report, _ = _run(Path(folder), 'solve', config)
    assert code == EXIT_ERROR and report['exit_code'] == EXIT_ERROR
    assert report['error']['type'] == 'ConfigInvalid'
    assert report['config_hash'] is not None


def test_export_lp(verbose=0, **kwargs):
    with tempfile.TemporaryDirectory() as folder:
        code, report, output_dir = _run(Path(folder), 'export-lp', _one_third_config())
        text = (output_dir / "problem.lp").read_text()
    assert code == EXIT_PASS
    assert report['instance']['lp_file'] == "problem.lp"
    assert text.splitlines()[1] == "Maximize" and text.rstrip().endswith("End")


def test_bounds(verbose=0, **kwargs):
    config = {'marginals': {'atoms': [TWO_POINT_ATOMS]},
              'lattice': {'steps': 12, 'dt': 1.},
              'transport': {'kind': 'variance', 'cap': 20.},
              'dual': {'iterations': 200, 'stop_gap': 1e-6}}
    with tempfile.TemporaryDirectory() as folder:
        code, report, output_dir = _run(Path(folder), 'bounds', config)
        assert (output_dir / "upper" / "stopped_law.csv").is_file()
    if verbose:
        print(report['bounds'])
    assert code in (0, 2)
    assert set(report['bounds']) == {'lower', 'upper'}
    assert abs(report['bounds']['upper']['primal_bound'] - 1.) <= 1e-9
    assert abs(report['bounds']['lower']['primal_bound'] - 1.) <= 1e-9
    assert report['bounds']['lower']['bound'] <= report['bounds']['upper']['bound'] + 1e-9
    assert report['certificates']['timechange']['payoff']['component']['kind'] == 'stop_time'
