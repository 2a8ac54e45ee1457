"""Run the shipped benchmark systems and compare with published results.

Case 1 and 2 are the five- and ten-unit systems without loss, case 3 and 4
the same systems with B-loss. Loss-free cases report the MILP step and the
hybrid, lossy cases the single-step interior point from both cold starts
and the hybrid.

Published times come from a commercial MILP solver; runtime parity of the
internal branch-and-bound is not expected. Compare the scaled CPU times
only as orders of magnitude.
"""
import argparse
import logging
import os
import sys
import time
from typing import \
    Dict, \
    List, \
    NamedTuple, \
    Optional, \
    Tuple

from dispatch import cost
from dispatch.branch_and_bound import BnbConfig
from dispatch.hybrid import \
    START_STRATEGIES, \
    solve_hybrid, \
    solve_single_ipm
from dispatch.model import Instance
from subcommands import load_instance
from util.parse import \
    BASE_CPU_GHZ, \
    scaled_time


__log__ = logging.getLogger(__name__)

DATA_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'data')


class BenchCase(NamedTuple):
    """Benchmark case with published (cost in $, S-time in min) per method."""
    name: str
    fixture: str
    include_loss: bool
    rel_gap: float
    published: Dict[str, Tuple[float, float]]


class BenchRow(NamedTuple):
    case: str
    method: str
    cost: float
    minutes: float
    published_cost: Optional[float]
    published_minutes: Optional[float]
    status: str


CASES = [
    BenchCase('case1', 'five_unit.txt', False, 0.032, {
        'milp': (42563, 0.82), 'hybrid': (42524, 0.86)}),
    BenchCase('case2', 'ten_unit.txt', False, 0.01, {
        'milp': (1016316, 0.94), 'hybrid': (1016311, 1.02)}),
    BenchCase('case3', 'five_unit.txt', True, 0.032, {
        'ipm': (43443, 0.05), 'hybrid': (43084, 0.87)}),
    BenchCase('case4', 'ten_unit.txt', True, 0.01, {
        'ipm': (1047294, 0.22), 'hybrid': (1040676, 1.12)}),
    ]


def _row(case: BenchCase, method: str, total: float, seconds: float,
         status: str, given_ghz: float) -> BenchRow:
    published = case.published.get(method.split(':')[0], (None, None))
    return BenchRow(
        case=case.name, method=method, cost=total,
        minutes=scaled_time(seconds / 60, given_ghz),
        published_cost=published[0], published_minutes=published[1],
        status=status)


def run_case(case: BenchCase, instance: Instance,
             bnb_config: BnbConfig = BnbConfig(),
             given_ghz: float = BASE_CPU_GHZ) -> List[BenchRow]:
    """Solve one case with every method it reports."""
    __log__.info('Running %s on %s, loss %s', case.name, case.fixture,
                 'on' if case.include_loss else 'off')
    rows = []
    config = bnb_config._replace(rel_gap=case.rel_gap)
    report = solve_hybrid(instance, bnb_config=config,
                          include_loss=case.include_loss)
    if not case.include_loss:
        rows.append(_row(case, 'milp', report.milp_cost, report.milp_seconds,
                         report.milp.status.value, given_ghz))
    else:
        for strategy in START_STRATEGIES:
            started = time.monotonic()
            result = solve_single_ipm(
                instance, start_strategy=strategy, include_loss=True)
            rows.append(_row(
                case, 'ipm:{}'.format(strategy),
                cost.total_cost(instance, result.schedule),
                time.monotonic() - started, result.status.value,
                given_ghz))
    rows.append(_row(case, 'hybrid', report.final_cost, report.total_seconds,
                     report.status.value, given_ghz))
    return rows


def _cell(value: Optional[float], pattern: str) -> str:
    return 'n/a' if value is None else pattern.format(value)


def format_bench(rows: List[BenchRow]) -> str:
    """Render rows as a fixed-width comparison table."""
    lines = ['{:<6} {:<28} {:>13} {:>13} {:>8} {:>10} {:>10}  {}'.format(
        'case', 'method', 'cost', 'published', 'diff%', 's_time', 'pub_time',
        'status')]
    for row in rows:
        diff = None
        if row.published_cost is not None:
            diff = 100 * (row.cost - row.published_cost) / row.published_cost
        lines.append(
            '{:<6} {:<28} {:>13.2f} {:>13} {:>8} {:>10.4f} {:>10}  {}'.format(
                row.case, row.method, row.cost,
                _cell(row.published_cost, '{:.0f}'), _cell(diff, '{:+.3f}'),
                row.minutes, _cell(row.published_minutes, '{:.2f}'),
                row.status))
    return '\n'.join(lines) + '\n'


def define_cmdline_arguments(parser: argparse.ArgumentParser):
    """Add arguments to parser."""
    parser.add_argument(
        '--cases', nargs='+', default=[case.name for case in CASES],
        choices=[case.name for case in CASES],
        help='Cases to run. Default: all.')
    parser.add_argument(
        '--data', default=DATA_DIR,
        help='Directory holding the instance fixtures. Default: %(default)s.')
    parser.add_argument(
        '--time-limit', type=float,
        help='Seconds each MILP step may run. Default: no limit.')
    parser.add_argument(
        '--threads', default=1, type=int,
        help='Branch-and-bound nodes evaluated concurrently. Default: 1.')
    parser.add_argument(
        '--cpu-speed', type=float,
        default=os.getenv('DED_VPE_CPU_GHZ', str(BASE_CPU_GHZ)),
        help='''CPU speed in GHz of this machine for the scaled CPU time.
            Default: DED_VPE_CPU_GHZ or %s.''' % BASE_CPU_GHZ)
    parser.add_argument(
        '--output', default=sys.stdout, type=argparse.FileType('w'),
        help='Output file. Default: stdout.')
    parser.set_defaults(func=_main)


def _main(args: argparse.Namespace):
    """Run the selected cases and print the comparison."""
    __log__.info('------- Arguments: -------')
    __log__.info('--cases: %s', ' '.join(args.cases))
    __log__.info('--data: %s', args.data)
    __log__.info('--time-limit: %s', args.time_limit)
    __log__.info('--threads: %d', args.threads)
    __log__.info('--cpu-speed: %g', args.cpu_speed)
    __log__.info('------- Arguments end -------')

    bnb_config = BnbConfig(time_limit=args.time_limit, threads=args.threads)
    rows = []
    for case in CASES:
        if case.name not in args.cases:
            continue
        with open(os.path.join(args.data, case.fixture)) as stream:
            instance = load_instance(stream)
        rows += run_case(case, instance, bnb_config, args.cpu_speed)
        __log__.info('Finished %s', case.name)
    args.output.write(format_bench(rows))
    args.output.flush()
