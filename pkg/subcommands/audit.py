"""Audit a schedule file against its instance.

Recomputes loss, power balance residuals, limit and ramp violations and the
total cost of the schedule. Tolerances are widened by the rounding of the
schedule body, e.g. by 5e-5 MW per output for 4 decimals.

Exit codes: 0 audit passed, 2 audit failed, 4 input error.
"""
import argparse
import logging
import sys
from typing import \
    NamedTuple, \
    Optional

import numpy as np

from dispatch import cost
from dispatch.feasibility import \
    AuditReport, \
    DEFAULT_TOLERANCES, \
    Tolerances, \
    audit
from dispatch.model import \
    DomainError, \
    Instance, \
    validate
from subcommands import \
    EXIT_INFEASIBLE, \
    EXIT_INPUT, \
    EXIT_OK, \
    load_instance
from util.parse import \
    ParseError, \
    ScheduleFile, \
    instance_hash, \
    parse_schedule, \
    rounding_allowance


__log__ = logging.getLogger(__name__)

OBJECTIVE_REL_TOL = 1e-4


class ScheduleAudit(NamedTuple):
    """Audit of a schedule file.

    loss_error and balance_error are the largest differences between the
    printed and the recomputed loss and dP columns.
    """
    report: AuditReport
    tolerances: Tolerances
    include_loss: bool
    loss_error: float
    balance_error: float
    objective: float
    objective_ok: Optional[bool]
    instance_ok: Optional[bool]

    @property
    def passed(self) -> bool:
        return self.report.passed


def audit_schedule_file(
        instance: Instance, schedule_file: ScheduleFile,
        include_loss: Optional[bool] = None,
        tolerances: Tolerances = DEFAULT_TOLERANCES) -> ScheduleAudit:
    """Audit a parsed schedule file.

    :param bool include_loss: Whether the balance includes loss. Default
        from the `loss` header, else whether the instance has a B-matrix.
    :raises ValueError: if the schedule does not match the instance.
    """
    schedule = schedule_file.schedule
    if not schedule.matches(instance):
        raise ValueError('Schedule of shape {} does not match {} units and '
                         '{} periods'.format(schedule.shape, instance.n_units,
                                             instance.n_periods))
    if include_loss is None:
        flag = schedule_file.header.get('loss')
        include_loss = instance.has_loss if flag is None else flag == 'on'
    include_loss = include_loss and instance.has_loss
    widened = tolerances.widened(
        rounding_allowance(schedule_file.decimals), instance.n_units)
    report = audit(instance, schedule, widened, include_loss)

    try:
        total = cost.total_cost(instance, schedule)
    except DomainError as error:
        __log__.warning('Cannot price schedule: %s', error)
        total = float('nan')
    objective_ok = None
    if schedule_file.objective is not None and np.isfinite(total):
        objective_ok = abs(total - schedule_file.objective) <= \
            OBJECTIVE_REL_TOL * max(abs(schedule_file.objective), 1.0)
        if not objective_ok:
            __log__.warning('Objective %.6f differs from header %.6f',
                            total, schedule_file.objective)
    instance_ok = None
    if 'instance' in schedule_file.header:
        instance_ok = schedule_file.header['instance'] == \
            instance_hash(instance)
        if not instance_ok:
            __log__.warning('Schedule was written for another instance file')
    return ScheduleAudit(
        report=report, tolerances=widened, include_loss=include_loss,
        loss_error=float(np.max(np.abs(report.loss - schedule_file.loss))),
        balance_error=float(np.max(np.abs(
            report.balance - np.abs(schedule_file.balance)))),
        objective=total, objective_ok=objective_ok, instance_ok=instance_ok)


def _flag(value: Optional[bool]) -> str:
    if value is None:
        return 'n/a'
    return 'ok' if value else 'mismatch'


def format_audit(result: ScheduleAudit) -> str:
    """Render an audit as a period table followed by `key: value` lines."""
    report = result.report
    lines = ['t   {:>10} {:>12}'.format('loss', 'dP')]
    for t, (loss, balance) in enumerate(zip(report.loss, report.balance)):
        lines.append('{:<3d} {:10.4f} {:12.3e}'.format(t + 1, loss, balance))
    lines += [
        'loss: {}'.format('on' if result.include_loss else 'off'),
        'max_balance: {:.3e}'.format(report.max_balance),
        'balance_tolerance: {:.3e}'.format(result.tolerances.balance),
        'printed_loss_error: {:.3e}'.format(result.loss_error),
        'printed_dp_error: {:.3e}'.format(result.balance_error),
        'bound_violations: {}'.format(len(report.bound_violations)),
        'ramp_violations: {}'.format(len(report.ramp_violations)),
        'reserve_shortfalls: {}'.format(len(report.reserve_shortfalls)),
        'objective: {!r} ({})'.format(result.objective,
                                      _flag(result.objective_ok)),
        'instance: {}'.format(_flag(result.instance_ok)),
        'result: {}'.format('passed' if result.passed else 'failed')]
    for violation in report.bound_violations + report.ramp_violations:
        __log__.info('Unit %d, period %d off by %.6f MW', violation.unit,
                     violation.period, violation.excess)
    return '\n'.join(lines) + '\n'


def define_cmdline_arguments(parser: argparse.ArgumentParser):
    """Add arguments to parser."""
    parser.add_argument(
        'SCHEDULE', type=argparse.FileType('r'),
        help='Schedule file as written by sub-command solve.')
    parser.add_argument(
        'INSTANCE', type=argparse.FileType('r'),
        help='Instance file the schedule belongs to.')
    parser.add_argument(
        '--loss', choices=['on', 'off'],
        help='''Include transmission loss in the balance. Default: the loss
            header of the schedule file.''')
    parser.add_argument(
        '--reserve', default='off', choices=['on', 'off'],
        help='Check spinning reserve. Default: off.')
    parser.add_argument(
        '--strict-objective', action='store_true',
        help='''Fail if the header objective differs from the recomputed
            cost by more than %s relative.''' % OBJECTIVE_REL_TOL)
    parser.add_argument(
        '--output', default=sys.stdout, type=argparse.FileType('w'),
        help='Output file. Default: stdout.')
    parser.set_defaults(func=_main)


def _main(args: argparse.Namespace):
    """Audit and exit with the audit result."""
    __log__.info('------- Arguments: -------')
    __log__.info('SCHEDULE: %s', args.SCHEDULE.name)
    __log__.info('INSTANCE: %s', args.INSTANCE.name)
    __log__.info('--loss: %s', args.loss)
    __log__.info('--reserve: %s', args.reserve)
    __log__.info('--output: %s', args.output.name)
    __log__.info('------- Arguments end -------')

    instance = load_instance(args.INSTANCE).with_reserve(
        args.reserve == 'on')
    violations = validate(instance)
    if violations:
        __log__.critical('Cannot check reserve: %s', '; '.join(violations))
        sys.exit(EXIT_INPUT)
    include_loss = None if args.loss is None else args.loss == 'on'
    if include_loss and not instance.has_loss:
        __log__.critical('Loss requested but instance has no B-matrix')
        sys.exit(EXIT_INPUT)
    try:
        schedule_file = parse_schedule(args.SCHEDULE.read())
        result = audit_schedule_file(instance, schedule_file, include_loss)
    except (ParseError, ValueError) as error:
        __log__.critical('Cannot audit %s: %s', args.SCHEDULE.name, error)
        sys.exit(EXIT_INPUT)

    args.output.write(format_audit(result))
    args.output.flush()
    passed = result.passed and not (
        args.strict_objective and result.objective_ok is False)
    sys.exit(EXIT_OK if passed else EXIT_INFEASIBLE)
