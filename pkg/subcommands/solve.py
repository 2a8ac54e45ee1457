"""Solve a dispatch instance and write the schedule.

Method 'hybrid' solves the piecewise-linear MILP and polishes its schedule
with the interior-point method, 'milp' stops after the MILP and 'ipm' runs
the interior-point method from a cold start.

Reads environment variable DED_VPE_CPU_GHZ as the default CPU speed for the
scaled CPU time in the report.

Exit codes: 0 success, 2 infeasible, 3 limit hit or fallback schedule,
4 input error.
"""
import argparse
import logging
import os
import sys
import time
from typing import \
    Optional, \
    Tuple

from dispatch import cost
from dispatch.branch_and_bound import \
    BnbConfig, \
    BnbStatus, \
    NODE_SELECTIONS, \
    solve_milp
from dispatch.feasibility import audit
from dispatch.hybrid import \
    HybridStatus, \
    START_STRATEGIES, \
    solve_hybrid, \
    solve_single_ipm
from dispatch.milp_builder import build_milp
from dispatch.model import \
    BuildError, \
    ConfigurationError, \
    Instance, \
    Schedule, \
    feasible_region_nonempty, \
    validate
from dispatch.nlp_ipm import \
    IpmConfig, \
    IpmStatus, \
    MU_STRATEGIES
from subcommands import \
    EXIT_INFEASIBLE, \
    EXIT_INPUT, \
    EXIT_LIMIT, \
    EXIT_OK, \
    load_instance
from util.parse import \
    BASE_CPU_GHZ, \
    DEFAULT_DECIMALS, \
    RunSummary, \
    format_report, \
    format_schedule


__log__ = logging.getLogger(__name__)

METHODS = ['hybrid', 'milp', 'ipm']
PROGRESS_INTERVAL = 100


def define_cmdline_arguments(parser: argparse.ArgumentParser):
    """Add arguments to parser."""
    parser.add_argument(
        'INSTANCE', type=argparse.FileType('r'),
        help='Instance file, see doc/formats.md.')
    parser.add_argument(
        '--method', default='hybrid', choices=METHODS,
        help='Solution method. Default: hybrid.')
    parser.add_argument(
        '--loss', choices=['on', 'off'],
        help='''Include transmission loss in the interior-point step.
            Default: on if the instance has a B-matrix.''')
    parser.add_argument(
        '--reserve', default='off', choices=['on', 'off'],
        help='Impose spinning reserve. Default: off.')
    parser.add_argument(
        '--segments', default=cost.DEFAULT_SEGMENTS, type=int,
        help='''Linear segments per half period of the valve-point ripple.
            Default: %(default)s.''')
    parser.add_argument(
        '--gap', default=BnbConfig().rel_gap, type=float,
        help='Relative MILP optimality gap. Default: %(default)s.')
    parser.add_argument(
        '--tol', default=IpmConfig().tol, type=float,
        help='Scaled KKT tolerance of the interior point. '
             'Default: %(default)s.')
    parser.add_argument(
        '--time-limit', type=float,
        help='Seconds the MILP may run. Default: no limit.')
    parser.add_argument(
        '--node-limit', type=int,
        help='Branch-and-bound nodes the MILP may solve. Default: no limit.')
    parser.add_argument(
        '--threads', default=1, type=int,
        help='Branch-and-bound nodes evaluated concurrently. Default: 1.')
    parser.add_argument(
        '--node-selection', default=BnbConfig().node_selection,
        choices=NODE_SELECTIONS,
        help='Order of open branch-and-bound nodes. Default: %(default)s.')
    parser.add_argument(
        '--mu-strategy', default=IpmConfig().mu_strategy,
        choices=MU_STRATEGIES,
        help='Barrier parameter update. Default: %(default)s.')
    parser.add_argument(
        '--max-iter', default=IpmConfig().max_iter, type=int,
        help='Interior-point iteration limit. Default: %(default)s.')
    parser.add_argument(
        '--start', default=START_STRATEGIES[0], choices=START_STRATEGIES,
        help='Cold start of method ipm. Default: %(default)s.')
    parser.add_argument(
        '--decimals', default=DEFAULT_DECIMALS, type=int,
        help='''Digits after the decimal point in the schedule body. Negative
            for full precision. Default: %(default)s.''')
    parser.add_argument(
        '--out', default=sys.stdout, type=argparse.FileType('w'),
        help='Schedule file to write. Default: stdout.')
    parser.add_argument(
        '--report', type=argparse.FileType('w'),
        help='File to write the run summary to. Default: none.')
    parser.add_argument(
        '--cpu-speed', type=float,
        default=os.getenv('DED_VPE_CPU_GHZ', str(BASE_CPU_GHZ)),
        help='''CPU speed in GHz of this machine for the scaled CPU time.
            Default: DED_VPE_CPU_GHZ or %s.''' % BASE_CPU_GHZ)
    parser.set_defaults(func=_main)


def _log_progress(nodes: int, bound: float, incumbent: float,
                  elapsed: float):
    if nodes % PROGRESS_INTERVAL == 0:
        __log__.info('%6d nodes, bound %.4f, incumbent %.4f, %.1f s',
                     nodes, bound, incumbent, elapsed)


def _log_iteration(iteration: int, objective: float, primal: float,
                   dual: float, mu: float):
    __log__.debug('IPM %3d: objective %.6f, primal %.2e, dual %.2e, mu %.2e',
                  iteration, objective, primal, dual, mu)


def prepare_instance(instance: Instance, loss: Optional[str],
                     reserve: str) -> Tuple[Instance, bool]:
    """Apply the loss and reserve switches.

    :returns: The instance with reserve set and whether loss is included.
    :raises ConfigurationError: if a switch asks for data the instance
        lacks.
    """
    include_loss = instance.has_loss if loss is None else loss == 'on'
    if include_loss and not instance.has_loss:
        raise ConfigurationError('Loss requested but instance has no B-matrix')
    instance = instance.with_reserve(reserve == 'on')
    violations = validate(instance)
    if violations:
        raise ConfigurationError('; '.join(violations))
    return instance, include_loss


def run(instance: Instance, args: argparse.Namespace,
        include_loss: bool) -> Tuple[Optional[Schedule], dict, RunSummary,
                                     int]:
    """Run the chosen method.

    :returns: Schedule or None, header fields of the schedule file, the run
        summary and the exit code.
    """
    if args.segments < 1:
        raise ConfigurationError(
            'Segments per half period must be positive')
    reserve = instance.reserve_enabled
    bnb_config = BnbConfig(
        rel_gap=args.gap, time_limit=args.time_limit,
        node_limit=args.node_limit, threads=args.threads,
        node_selection=args.node_selection)
    ipm_config = IpmConfig(
        tol=args.tol, mu_strategy=args.mu_strategy, max_iter=args.max_iter)
    started = time.monotonic()
    header = {'method': args.method}
    milp_cost = unchanged = gap = None

    if args.method == 'hybrid':
        report = solve_hybrid(
            instance, args.segments, bnb_config, ipm_config, include_loss,
            reserve, _log_progress, _log_iteration)
        schedule, status = report.schedule, report.status.value
        gap = report.milp.gap
        if report.status is HybridStatus.INFEASIBLE:
            code = EXIT_INFEASIBLE
        elif report.status is HybridStatus.SOLVED \
                and report.milp.status is not BnbStatus.LIMIT:
            code = EXIT_OK
        else:
            code = EXIT_LIMIT
        if schedule is not None:
            milp_cost = report.milp_cost
            unchanged = report.changes.unchanged_fraction
            header['milp_objective'] = repr(milp_cost)
            header['ipm_status'] = report.ipm.status.value
            header['ipm_iterations'] = report.ipm.iterations
    elif args.method == 'milp':
        model = build_milp(instance, args.segments, reserve)
        result = solve_milp(model, bnb_config, _log_progress)
        schedule, status, gap = result.schedule, result.status.value, \
            result.gap
        header['nodes'] = result.nodes
        if result.status is BnbStatus.INFEASIBLE:
            code = EXIT_INFEASIBLE
        elif result.status is BnbStatus.LIMIT:
            code = EXIT_LIMIT
        else:
            code = EXIT_OK
        include_loss = False
    else:
        if not feasible_region_nonempty(instance):
            raise BuildError('Demand outside the total capacity')
        result = solve_single_ipm(
            instance, ipm_config, args.start, include_loss, reserve,
            _log_iteration)
        schedule, status = result.schedule, result.status.value
        header['start'] = args.start
        header['ipm_iterations'] = result.iterations
        code = EXIT_OK if result.status is IpmStatus.LOCAL_OPTIMUM \
            else EXIT_LIMIT

    minutes = (time.monotonic() - started) / 60
    header['status'] = status
    if gap is not None:
        header['gap'] = repr(gap)
    total = max_balance = float('inf')
    if schedule is not None:
        total = cost.total_cost(instance, schedule)
        final = audit(instance, schedule, include_loss=include_loss)
        max_balance = final.max_balance
        if not final.passed and code == EXIT_OK:
            __log__.warning('Final schedule fails the audit')
            code = EXIT_LIMIT
        header['objective'] = repr(total)
    header['time_min'] = '{:.4f}'.format(minutes)
    summary = RunSummary(
        method=args.method, status=status, cost=total, gap=gap,
        max_balance=max_balance, minutes=minutes, given_ghz=args.cpu_speed,
        milp_cost=milp_cost, unchanged_fraction=unchanged)
    return schedule, header, summary, code


def _main(args: argparse.Namespace):
    """Solve and write outputs, exit with the run's exit code."""
    __log__.info('------- Arguments: -------')
    __log__.info('INSTANCE: %s', args.INSTANCE.name)
    __log__.info('--method: %s', args.method)
    __log__.info('--loss: %s', args.loss)
    __log__.info('--reserve: %s', args.reserve)
    __log__.info('--segments: %d', args.segments)
    __log__.info('--gap: %g', args.gap)
    __log__.info('--tol: %g', args.tol)
    __log__.info('--time-limit: %s', args.time_limit)
    __log__.info('--threads: %d', args.threads)
    __log__.info('--out: %s', args.out.name)
    __log__.info('--cpu-speed: %g', args.cpu_speed)
    __log__.info('------- Arguments end -------')

    instance = load_instance(args.INSTANCE)
    try:
        instance, include_loss = prepare_instance(
            instance, args.loss, args.reserve)
        schedule, header, summary, code = run(instance, args, include_loss)
    except ConfigurationError as error:
        __log__.critical('Invalid configuration: %s', error)
        sys.exit(EXIT_INPUT)
    except BuildError as error:
        __log__.critical('Instance is infeasible: %s', error)
        sys.exit(EXIT_INFEASIBLE)

    if schedule is None:
        __log__.critical('No schedule found, status %s', summary.status)
    else:
        decimals = None if args.decimals < 0 else args.decimals
        args.out.write(format_schedule(
            instance, schedule, header, decimals,
            include_loss and args.method != 'milp'))
        args.out.flush()
    if args.report is not None:
        args.report.write(format_report(summary))
        args.report.flush()
    __log__.info('Cost %.4f $, max balance %.3g MW, %.4f min scaled CPU time',
                 summary.cost, summary.max_balance, summary.scaled_minutes)
    sys.exit(code)
