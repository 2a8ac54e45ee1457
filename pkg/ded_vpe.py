#!/usr/bin/env python3
"""Dynamic economic dispatch with valve-point effects.

Schedule thermal units over a horizon of periods at least cost. The cost
of each unit carries a rectified sine ripple from its steam valves, so the
problem is nonconvex and nonsmooth. The default method solves a
piecewise-linear MILP by branch-and-bound and polishes its schedule with an
interior-point method on an exact smooth reformulation, with transmission
loss where the instance has B-coefficients.

Reads environment variable DED_VPE_CPU_GHZ as the CPU speed of this machine
for scaled CPU times.

Use the --help option on a sub-command to learn more about it.
"""
import argparse
import importlib
import sys
from util import log


SUB_COMMANDS = [
    'solve',
    'audit',
    'export_mps',
    'bench',
    ]


def define_cmdline_interface():
    """Define parsers for main script and sub-commands."""
    # Arguments to main script
    parser = argparse.ArgumentParser(
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument(
        '--log', default=sys.stderr,
        type=argparse.FileType('w'),
        help='Log file. Default: stderr.')
    parser.add_argument(
        '-v', '--verbose', default=0, action='count',
        help='Increase log level. May be used several times.')
    parser.add_argument(
        '-q', '--quiet', default=0, action='count',
        help='Decrease log level. May be used several times.')

    subparsers = parser.add_subparsers()
    for command in SUB_COMMANDS:
        script = importlib.import_module('subcommands.{}'.format(command))
        summary = script.__doc__.splitlines()[0]
        command_parser = subparsers.add_parser(
            command.replace('_', '-'), description=script.__doc__,
            help=summary,
            formatter_class=argparse.RawDescriptionHelpFormatter)
        script.define_cmdline_arguments(command_parser)

    return parser


def main(argv=None):
    """Parse argv, configure logging and run the chosen sub-command."""
    parser = define_cmdline_interface()
    args = parser.parse_args(argv)
    if 'func' in args:
        log.configure_logger('', args.log, args.verbose, args.quiet)
        args.func(args)
    else:
        parser.print_help()


if __name__ == '__main__':
    main()
