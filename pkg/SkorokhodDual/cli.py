import argparse
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from SkorokhodDual import __version__
from SkorokhodDual.config.RunConfig import RunConfig, parse_run_config
from SkorokhodDual.measures.DiscreteMeasure import CENTERING_TOLERANCE, PeacockVector, peacock_margins
from SkorokhodDual.oracles.Oracles import azema_yor_law_of_max, hitting_time_value, mc_embedding_check
from SkorokhodDual.payoffs.PayoffSpec import PayoffSpec
from SkorokhodDual.SkorokhodSolver import SkorokhodSolver, SolveReport
from SkorokhodDual.solvers.PrimalLP import export_lp_format
from SkorokhodDual.transport.MartingaleTransport import model_free_bounds, price_bounds, timechange_payoff
from SkorokhodDual.utils.LoggerGenerator import LoggerGenerator
from SkorokhodDual.utils.errors import ConfigInvalid, Infeasible, MeanMismatch, NotAPeacock, SkorokhodError
from SkorokhodDual.utils.io_utils import atomic_write_text, sha256_of, write_json
from SkorokhodDual.utils.paths import get_run_path

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_GAP = 2
EXIT_INFEASIBLE = 3

SUBCOMMANDS = ('check-peacock', 'solve', 'bounds', 'oracle', 'export-lp')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="SkorokhodDual",
                                     description="primal and dual solvers of multi marginal embedding problems")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest='command', metavar="<command>", required=True)
    helps = {'check-peacock': "check that the marginals increase in convex order",
             'solve': "solve the embedding problem of a payoff (primal, dual, superhedge)",
             'bounds': "model free price bounds of a transport payoff",
             'oracle': "reference values of the instance",
             'export-lp': "write the flow program in the CPLEX LP format"}
    for name in SUBCOMMANDS:
        sub = subparsers.add_parser(name, help=helps[name])
        sub.add_argument('config', metavar="<config.json>", type=Path, help="path of the run configuration")
        sub.add_argument('--output-dir', metavar="<dir>", type=Path, default=None,
                         help="folder of the report and of the artifacts")
        sub.add_argument('--log-level', metavar="<level>", default=None,
                         choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help="threshold of the log messages")
    return parser


def _empty_report(config_hash: Optional[str]) -> Dict:
    return {'instance': None, 'primal': None, 'dual': None, 'gap': None, 'oracles': {}, 'certificates': {},
            'timings': {}, 'config_hash': config_hash, 'solver_version': __version__}


def _payoff(config: RunConfig) -> PayoffSpec:
    payoff = config.build_payoff()
    if payoff is None:
        raise ConfigInvalid("this command needs a 'payoff' section")
    return payoff


def _marginals(config: RunConfig, report: Dict) -> PeacockVector:
    """
    validated marginals; a vector out of convex order goes through unvalidated when the flow program runs, so that
    its infeasibility certificate ends in the report
    """
    try:
        mu, errors = config.build_marginals()
    except NotAPeacock as err:
        if not config.primal.enabled:
            raise
        report['certificates']['peacock'] = {'pair_index': err.pair_index, 'witness': err.witness,
                                             'message': str(err)}
        mu, errors = config.build_marginals(validate=False)
    if config.marginals.snap:
        report['certificates']['snapping_w1'] = errors
    return mu


def _merge_solve(report: Dict, solve: SolveReport, tolerance: float) -> int:
    solved = solve.to_dict()
    for key in ('instance', 'primal', 'dual', 'gap'):
        report[key] = solved[key]
    report['value'] = solved['value']
    report['cap_binding'] = solved['cap_binding']
    report['certificates'].update(solved['certificates'])
    report['timings'].update(solved['timings'])
    failed = not solve.passed
    if solve.superhedge is not None and solve.superhedge.max_violation > tolerance:
        failed = True
    return EXIT_GAP if failed else EXIT_PASS


def run_oracles(config: RunConfig, mu: PeacockVector, payoff: Optional[PayoffSpec],
                solve: Optional[SolveReport]) -> Tuple[Dict, bool]:
    """
    Evaluate the configured oracles and compare them with the solve when there is one

    :return: the oracle section of the report and if every comparison passed
    :rtype: Tuple[Dict, bool]
    """
    oracles = config.oracles
    tolerances = config.tolerances
    section = {}
    passed = True
    if oracles.hitting_time is not None and payoff is not None:
        steps = oracles.hitting_time.steps or config.lattice.steps
        value = hitting_time_value(payoff, oracles.hitting_time.levels, config.lattice.dt, steps)
        entry = {'value': value, 'levels': list(oracles.hitting_time.levels), 'steps': steps}
        if solve is not None and solve.primal is not None:
            entry['difference'] = solve.primal.value - value
            entry['within'] = abs(entry['difference']) <= tolerances.oracle_absolute
            passed &= entry['within']
        section['hitting_time'] = entry
    if oracles.azema_yor is not None:
        law = azema_yor_law_of_max(mu[0], oracles.azema_yor.max_atom)
        cap = oracles.azema_yor.cap
        value = law.mean if cap is None else law.capped_mean(cap)
        entry = {'value': value, 'cap': cap}
        if solve is not None:
            entry['relative_difference'] = (solve.value - value) / max(1., abs(value))
            entry['within'] = abs(entry['relative_difference']) <= tolerances.oracle_relative
            passed &= entry['within']
        section['azema_yor'] = entry
    if oracles.monte_carlo is not None and solve is not None and solve.primal is not None:
        mc = oracles.monte_carlo
        check = mc_embedding_check(solve.primal.policy, solve.lattice, mu, samples=mc.samples, seed=config.seed,
                                   bootstrap=mc.bootstrap, batch_size=mc.batch_size,
                                   show_progress=config.show_progress)
        section['monte_carlo'] = check.to_dict()
        passed &= check.passed
    if not passed:
        LoggerGenerator.get_shared_logger("run_oracles").warning(f"oracle mismatch: {section}")
    return section, passed


def check_peacock(config: RunConfig, report: Dict, output_dir: Path) -> int:
    measures, errors = config.build_measures()
    means = [m.mean for m in measures]
    report['instance'] = {'marginals': [m.atoms for m in measures], 'means': means}
    try:
        margins = peacock_margins(measures)
    except MeanMismatch as err:
        report['certificates']['peacock'] = {'ordered': False, 'message': str(err)}
        return EXIT_INFEASIBLE
    pairs = [{'pair_index': k, 'ordered': r.ordered, 'witness': r.witness, 'margin': r.margin}
             for k, r in enumerate(margins)]
    centered = not config.marginals.centered or all(abs(m) <= CENTERING_TOLERANCE for m in means)
    ordered = all(r.ordered for r in margins)
    report['certificates']['peacock'] = {'ordered': ordered, 'centered': centered, 'pairs': pairs}
    if config.marginals.snap:
        report['certificates']['snapping_w1'] = errors
    return EXIT_PASS if ordered and centered else EXIT_INFEASIBLE


def solve(config: RunConfig, report: Dict, output_dir: Path) -> int:
    payoff = _payoff(config)
    mu = _marginals(config, report)
    solver = SkorokhodSolver(mu, payoff, name=report['name'], **config.solver_kwargs())
    result = solver.solve()
    result.write_artifacts(output_dir)
    code = _merge_solve(report, result, config.tolerances.superhedge)
    report['oracles'], passed = run_oracles(config, mu, payoff, result)
    return code if passed else EXIT_GAP


def bounds(config: RunConfig, report: Dict, output_dir: Path) -> int:
    if config.transport is None:
        raise ConfigInvalid("the bounds command needs a 'transport' section")
    tp = config.transport.to_transport_payoff()
    mu = _marginals(config, report)
    kwargs = config.solver_kwargs()
    if config.transport.side == 'both':
        sides = dict(zip(('lower', 'upper'), model_free_bounds(tp, mu, **kwargs)))
    else:
        sides = {config.transport.side: price_bounds(tp, mu, config.transport.side, **kwargs)}
    code = EXIT_PASS
    for side, bound in sides.items():
        bound.report.write_artifacts(output_dir / side)
        side_code = _merge_solve(report, bound.report, config.tolerances.superhedge)
        code = max(code, side_code)
    # the report keeps the solve of the last side, every side is listed under 'bounds'
    report['bounds'] = {side: bound.to_dict() for side, bound in sides.items()}
    report['certificates']['timechange'] = {'transport': tp.describe(), 'payoff': timechange_payoff(tp).describe()}
    if 'upper' in sides:
        report['oracles'], passed = run_oracles(config, mu, sides['upper'].report.payoff, sides['upper'].report)
        if not passed:
            code = EXIT_GAP
    return code


def oracle(config: RunConfig, report: Dict, output_dir: Path) -> int:
    payoff = config.build_payoff()
    mu, _ = config.build_marginals()
    result = None
    if payoff is not None and config.primal.enabled:
        kwargs = {**config.solver_kwargs(), 'run_dual': False}
        result = SkorokhodSolver(mu, payoff, name=report['name'], **kwargs).solve()
        _merge_solve(report, result, config.tolerances.superhedge)
    report['oracles'], passed = run_oracles(config, mu, payoff, result)
    return EXIT_PASS if passed else EXIT_GAP


def export_lp(config: RunConfig, report: Dict, output_dir: Path) -> int:
    payoff = _payoff(config)
    mu = _marginals(config, report)
    solver = SkorokhodSolver(mu, payoff, name=report['name'], **config.solver_kwargs())
    lp = solver.build_lp()
    path = output_dir / "problem.lp"
    atomic_write_text(path, export_lp_format(lp))
    report['instance'] = {'name': report['name'], 'rows': lp.shape[0], 'columns': lp.shape[1], 'lp_file': path.name}
    return EXIT_PASS


COMMANDS = {'check-peacock': check_peacock, 'solve': solve, 'bounds': bounds, 'oracle': oracle,
            'export-lp': export_lp}


def _error_entry(err: Exception) -> Dict:
    entry = {'type': type(err).__name__, 'message': str(err)}
    for attribute in ('pair_index', 'witness', 'infeasibility', 'iterations', 'gap', 'remaining_mass',
                      'state_count', 'budget', 'marginal_index', 'position'):
        if hasattr(err, attribute):
            entry[attribute] = getattr(err, attribute)
    return entry


def run(argv: Optional[List[str]] = None) -> int:
    """
    Entry point of the command line, returns the exit code: 0 pass, 2 gap or oracle failure, 3 infeasible instance,
    1 any other error

    :param argv: command line arguments, sys.argv[1:] if None
    :type argv: Optional[List[str]]
    :return: the exit code
    :rtype: int
    """
    args = build_parser().parse_args(argv)
    if args.log_level:
        LoggerGenerator.set_global_log_level(args.log_level)
    logger = LoggerGenerator.get_shared_logger("cli")

    config_hash = None
    output_dir = args.output_dir
    report = _empty_report(config_hash)
    code = EXIT_ERROR
    try:
        try:
            with open(args.config, encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigInvalid(f"cannot read the configuration {args.config}: {err}") from err
        report['config_hash'] = sha256_of(data)
        config = parse_run_config(data, Path(args.config).parent)
        if not args.log_level:
            LoggerGenerator.set_global_log_level(config.log_level)
            logger = LoggerGenerator.get_shared_logger("cli")
        output_dir = output_dir or config.output_dir or get_run_path(Path(args.config).stem)
        LoggerGenerator.set_default_write_file(True, Path(output_dir) / "logs")
        report['name'] = Path(args.config).stem

        start = time.perf_counter()
        code = COMMANDS[args.command](config, report, Path(output_dir))
        report['timings']['command'] = time.perf_counter() - start
    except Infeasible as err:
        logger.error(f"infeasible instance: {err}")
        report['certificates']['farkas'] = {'infeasibility': err.infeasibility,
                                            'certificate': err.certificate,
                                            'rows': err.row_keys}
        report['error'] = _error_entry(err)
        code = EXIT_INFEASIBLE
    except NotAPeacock as err:
        logger.error(f"the marginals are not a peacock: {err}")
        report['error'] = _error_entry(err)
        code = EXIT_INFEASIBLE
    except (SkorokhodError, ValueError) as err:
        logger.error(f"{type(err).__name__}: {err}")
        report['error'] = _error_entry(err)
        code = EXIT_ERROR
    finally:
        LoggerGenerator.set_default_write_file(False)

    report['exit_code'] = code
    if output_dir is not None:
        write_json(Path(output_dir) / "report.json", report)
        logger.info(f"report written to {Path(output_dir) / 'report.json'}")
    elif 'error' in report:
        print(f"{report['error']['type']}: {report['error']['message']}", file=sys.stderr)
    LoggerGenerator.release_shared_loggers()
    return code


def main():
    sys.exit(run())
