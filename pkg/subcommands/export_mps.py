"""Write the piecewise-linear MILP of an instance as an MPS file.

The file can be solved by external MILP solvers to cross-check the
branch-and-bound of sub-command solve.
"""
import argparse
import logging
import sys

from dispatch import cost
from dispatch.milp_builder import build_milp
from dispatch.model import \
    BuildError, \
    validate
from subcommands import \
    EXIT_INFEASIBLE, \
    EXIT_INPUT, \
    load_instance
from util.mps import export_mps


__log__ = logging.getLogger(__name__)


def define_cmdline_arguments(parser: argparse.ArgumentParser):
    """Add arguments to parser."""
    parser.add_argument(
        'INSTANCE', type=argparse.FileType('r'),
        help='Instance file, see doc/formats.md.')
    parser.add_argument(
        '--segments', default=cost.DEFAULT_SEGMENTS, type=int,
        help='''Linear segments per half period of the valve-point ripple.
            Default: %(default)s.''')
    parser.add_argument(
        '--reserve', default='off', choices=['on', 'off'],
        help='Add spinning reserve. Default: off.')
    parser.add_argument(
        '--name', default='DEDVPE',
        help='Model name on the NAME line. Default: %(default)s.')
    parser.add_argument(
        '--output', default=sys.stdout, type=argparse.FileType('w'),
        help='Output file. Default: stdout.')
    parser.set_defaults(func=_main)


def _main(args: argparse.Namespace):
    """Build the MILP and write it."""
    __log__.info('------- Arguments: -------')
    __log__.info('INSTANCE: %s', args.INSTANCE.name)
    __log__.info('--segments: %d', args.segments)
    __log__.info('--reserve: %s', args.reserve)
    __log__.info('--output: %s', args.output.name)
    __log__.info('------- Arguments end -------')

    instance = load_instance(args.INSTANCE).with_reserve(
        args.reserve == 'on')
    violations = validate(instance)
    if violations or args.segments < 1:
        __log__.critical('Invalid input: %s', '; '.join(
            violations or ['segments must be positive']))
        sys.exit(EXIT_INPUT)
    try:
        model = build_milp(instance, args.segments, instance.reserve_enabled)
    except BuildError as error:
        __log__.critical('Instance is infeasible: %s', error)
        sys.exit(EXIT_INFEASIBLE)
    args.output.write(export_mps(model.lp, args.name))
    args.output.flush()
    __log__.info('Wrote %d rows and %d columns', model.lp.n_rows,
                 model.lp.n_cols)
