"""Parse and write the text files of the command line tool.

Instance files are sectioned tables, see doc/formats.md. Schedule files
carry `# key: value` header lines followed by one row per period. Reports
are plain `key: value` lines.
"""
import hashlib
import logging
import re
from typing import \
    Dict, \
    List, \
    Mapping, \
    NamedTuple, \
    Optional, \
    Sequence, \
    Tuple

import numpy as np

from dispatch import feasibility
from dispatch.model import \
    Instance, \
    Schedule, \
    UnitParams, \
    make_instance, \
    validate


__log__ = logging.getLogger(__name__)

SECTIONS = ['units', 'demand', 'bmatrix', 'reserve']
UNSUPPORTED_SECTIONS = {
    'b0': 'linear loss coefficients are not supported',
    'b00': 'constant loss coefficients are not supported',
}
UNIT_COLUMNS = [
    'id', 'alpha', 'beta', 'gamma', 'e', 'f', 'pmin', 'pmax', 'ur', 'dr']
HEADER_PATTERN = re.compile(r'^#\s*([a-z_]+):\s*(.*?)\s*$')
SECTION_PATTERN = re.compile(r'^\[\s*([A-Za-z0-9_]+)\s*\]$')
DEFAULT_DECIMALS = 4
BASE_CPU_GHZ = 2.4
VIOLATION_SECTIONS = {
    'unit': 'units', 'units': 'units', 'demand': 'demand',
    'b_matrix': 'bmatrix', 'reserve_req': 'reserve', 'tau': 'reserve'}


class ParseError(ValueError):
    """Malformed input file.

    :param str message: What is wrong.
    :param str section: Section the problem was found in, if any.
    :param int line: 1-based line number, if known.
    """
    def __init__(self, message: str, section: Optional[str] = None,
                 line: Optional[int] = None):
        self.section = section
        self.line = line
        position = []
        if line is not None:
            position.append('line {}'.format(line))
        if section is not None:
            position.append('[{}]'.format(section))
        if position:
            message = '{}: {}'.format(' '.join(position), message)
        super().__init__(message)


def _strip_comment(line: str) -> str:
    """Remove a # comment and surrounding blanks.

    >>> _strip_comment('1  410   # peak')
    '1  410'
    """
    return line.split('#', 1)[0].strip()


def _numbers(tokens: Sequence[str], section: str, line: int) -> List[float]:
    try:
        return [float(token) for token in tokens]
    except ValueError:
        bad = next(t for t in tokens if not _is_number(t))
        raise ParseError('not a number: {!r}'.format(bad), section, line)


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _split_sections(text: str) -> List[Tuple[str, int, List[Tuple[
        int, List[str]]]]]:
    """Group data lines by section as (name, header line, [(line, tokens)])."""
    sections = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        match = SECTION_PATTERN.match(line)
        if match:
            name = match.group(1).lower()
            if name in UNSUPPORTED_SECTIONS:
                raise ParseError(UNSUPPORTED_SECTIONS[name], name, number)
            if name not in SECTIONS:
                raise ParseError('unknown section', name, number)
            if any(name == existing for existing, _, _ in sections):
                raise ParseError('section repeated', name, number)
            if sections and SECTIONS.index(name) < SECTIONS.index(
                    sections[-1][0]):
                raise ParseError(
                    'sections must appear in the order {}'.format(
                        ', '.join(SECTIONS)), name, number)
            sections.append((name, number, []))
            continue
        if not sections:
            raise ParseError('data before the first section', None, number)
        sections[-1][2].append((number, line.split()))
    return sections


def _parse_units(rows, header_line) -> List[UnitParams]:
    units = []
    for number, tokens in rows:
        if len(tokens) not in (len(UNIT_COLUMNS), len(UNIT_COLUMNS) + 1):
            raise ParseError(
                'expected {} or {} columns, got {}'.format(
                    len(UNIT_COLUMNS), len(UNIT_COLUMNS) + 1, len(tokens)),
                'units', number)
        values = _numbers(tokens, 'units', number)
        if values[0] != len(units) + 1:
            raise ParseError('expected unit id {}, got {}'.format(
                len(units) + 1, tokens[0]), 'units', number)
        units.append(UnitParams(
            alpha=values[1], beta=values[2], gamma=values[3], e=values[4],
            f=values[5], p_min=values[6], p_max=values[7],
            ramp_up=values[8], ramp_down=values[9],
            initial_output=values[10] if len(values) > 10 else None,
            name=tokens[0]))
    if not units:
        raise ParseError('no units', 'units', header_line)
    return units


def _parse_periods(rows, section) -> List[float]:
    values = []
    for number, tokens in rows:
        if len(tokens) != 2:
            raise ParseError('expected 2 columns, got {}'.format(len(tokens)),
                             section, number)
        period, value = _numbers(tokens, section, number)
        if period != len(values) + 1:
            raise ParseError('expected period {}, got {}'.format(
                len(values) + 1, tokens[0]), section, number)
        values.append(value)
    return values


def _parse_bmatrix(rows, header_line, n_units) -> np.ndarray:
    matrix = []
    for number, tokens in rows:
        if len(tokens) != n_units:
            raise ParseError('expected {} numbers, got {}'.format(
                n_units, len(tokens)), 'bmatrix', number)
        matrix.append(_numbers(tokens, 'bmatrix', number))
    if len(matrix) != n_units:
        raise ParseError('{} rows for {} units'.format(len(matrix), n_units),
                         'bmatrix', header_line)
    return np.array(matrix)


def _parse_reserve(rows, header_line) -> Tuple[float, List[float]]:
    tau = None
    periods = []
    for number, tokens in rows:
        if tokens[0].lower() == 'tau':
            if len(tokens) != 2 or tau is not None:
                raise ParseError('expected one line "tau VALUE"', 'reserve',
                                 number)
            tau = _numbers(tokens[1:], 'reserve', number)[0]
        else:
            periods.append((number, tokens))
    if tau is None:
        raise ParseError('missing tau', 'reserve', header_line)
    return tau, _parse_periods(periods, 'reserve')


def parse_instance(text: str) -> Instance:
    """Parse an instance file.

    :param str text: File contents.
    :returns Instance: Instance passing validate, reserve switched off.
    :raises ParseError: naming the section and line of the first problem.
    """
    sections = {
        name: (header_line, rows)
        for name, header_line, rows in _split_sections(text)}
    for required in ['units', 'demand']:
        if required not in sections:
            raise ParseError('missing section', required)
    units = _parse_units(sections['units'][1], sections['units'][0])
    demand = _parse_periods(sections['demand'][1], 'demand')
    if not demand:
        raise ParseError('no periods', 'demand', sections['demand'][0])
    b_matrix = None
    if 'bmatrix' in sections:
        b_matrix = _parse_bmatrix(
            sections['bmatrix'][1], sections['bmatrix'][0], len(units))
    tau, reserve_req = 0.0, None
    if 'reserve' in sections:
        tau, reserve_req = _parse_reserve(
            sections['reserve'][1], sections['reserve'][0])
        if len(reserve_req) != len(demand):
            raise ParseError('{} periods, demand has {}'.format(
                len(reserve_req), len(demand)), 'reserve',
                sections['reserve'][0])
    instance = make_instance(units, demand, b_matrix, reserve_req, tau)
    violations = validate(instance)
    if violations:
        field = re.split(r'[ :]', violations[0], 1)[0]
        raise ParseError('; '.join(violations),
                         VIOLATION_SECTIONS.get(field))
    return instance


def _number(value: float) -> str:
    """Shortest text that reads back as the same float.

    >>> _number(410.0)
    '410'
    >>> _number(0.1)
    '0.1'
    """
    text = repr(float(value))
    return text[:-2] if text.endswith('.0') else text


def format_instance(instance: Instance) -> str:
    """Write an instance file that parse_instance reads back exactly."""
    lines = ['[units]', '# ' + '  '.join(UNIT_COLUMNS) + '  p0']
    for index, unit in enumerate(instance.units):
        values = [unit.alpha, unit.beta, unit.gamma, unit.e, unit.f,
                  unit.p_min, unit.p_max, unit.ramp_up, unit.ramp_down]
        if unit.initial_output is not None:
            values.append(unit.initial_output)
        lines.append('  '.join(
            [str(index + 1)] + [_number(v) for v in values]))
    lines += ['', '[demand]']
    lines += ['{}  {}'.format(t + 1, _number(load))
              for t, load in enumerate(instance.demand)]
    if instance.b_matrix is not None:
        lines += ['', '[bmatrix]']
        lines += ['  '.join(_number(v) for v in row)
                  for row in instance.b_matrix]
    if instance.reserve_req is not None:
        lines += ['', '[reserve]', 'tau  {}'.format(_number(instance.tau))]
        lines += ['{}  {}'.format(t + 1, _number(value))
                  for t, value in enumerate(instance.reserve_req)]
    return '\n'.join(lines) + '\n'


def instance_hash(instance: Instance) -> str:
    """SHA-1 of the canonical instance file text."""
    return hashlib.sha1(format_instance(instance).encode('utf-8')).hexdigest()


class ScheduleFile(NamedTuple):
    """Parsed schedule file.

    loss and balance are the printed columns. decimals is the body
    precision, None for full precision.
    """
    schedule: Schedule
    header: Dict[str, str]
    loss: np.ndarray
    balance: np.ndarray
    decimals: Optional[int]

    @property
    def objective(self) -> Optional[float]:
        value = self.header.get('objective')
        return None if value is None else float(value)


def _decimals_of(tokens: Sequence[str]) -> Optional[int]:
    """Most digits after the decimal point, None for exponent notation.

    >>> _decimals_of(['1', '20.6080', '3.8155'])
    4
    """
    most = 0
    for token in tokens:
        if 'e' in token.lower():
            return None
        if '.' in token:
            most = max(most, len(token.split('.', 1)[1]))
    return most


def parse_schedule(text: str) -> ScheduleFile:
    """Parse a schedule file.

    :raises ParseError: for a missing column line, bad arity or
        non-numeric values.
    """
    header = {}
    columns = None
    rows = []
    tokens_seen = []
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith('#'):
            match = HEADER_PATTERN.match(stripped)
            if match and columns is None:
                header[match.group(1)] = match.group(2)
            continue
        tokens = stripped.split()
        if columns is None:
            if tokens[0] != 't' or tokens[-2:] != ['loss', 'dP']:
                raise ParseError('expected column line "t P_1 .. loss dP"',
                                 'schedule', number)
            columns = tokens
            continue
        if len(tokens) != len(columns):
            raise ParseError('expected {} columns, got {}'.format(
                len(columns), len(tokens)), 'schedule', number)
        values = _numbers(tokens, 'schedule', number)
        if values[0] != len(rows) + 1:
            raise ParseError('expected period {}, got {}'.format(
                len(rows) + 1, tokens[0]), 'schedule', number)
        rows.append(values[1:])
        tokens_seen += tokens[1:]
    if columns is None or not rows:
        raise ParseError('no schedule rows', 'schedule')
    body = np.array(rows)
    if 'decimals' in header:
        decimals = None if header['decimals'] == 'full' else int(
            header['decimals'])
    else:
        decimals = _decimals_of(tokens_seen)
    return ScheduleFile(
        schedule=Schedule(body[:, :-2].T.copy()), header=header,
        loss=body[:, -2], balance=body[:, -1], decimals=decimals)


def format_schedule(
        instance: Instance, schedule: Schedule,
        header: Mapping[str, object] = None,
        decimals: Optional[int] = DEFAULT_DECIMALS,
        include_loss: bool = True) -> str:
    """Write a schedule file with loss and balance residual columns.

    :param Mapping header: Header values, written in the given order after
        loss, decimals and instance.
    :param int decimals: Body precision, None for full precision.
    """
    loss = feasibility.losses(instance, schedule.outputs, include_loss)
    balance = feasibility.balance_violation(instance, schedule, include_loss)
    lines = [
        '# loss: {}'.format('on' if include_loss and instance.has_loss
                            else 'off'),
        '# decimals: {}'.format('full' if decimals is None else decimals),
        '# instance: {}'.format(instance_hash(instance))]
    for key, value in (header or {}).items():
        lines.append('# {}: {}'.format(key, value))
    n_units = instance.n_units
    lines.append('  '.join(
        ['t'] + ['P_{}'.format(i + 1) for i in range(n_units)]
        + ['loss', 'dP']))

    def cell(value):
        if decimals is None:
            return repr(float(value))
        return '{:10.{}f}'.format(value, decimals)

    for t in range(instance.n_periods):
        values = list(schedule.outputs[:, t]) + [loss[t], balance[t]]
        lines.append('{:<3d}'.format(t + 1) + ' '.join(
            cell(value) for value in values))
    return '\n'.join(lines) + '\n'


def rounding_allowance(decimals: Optional[int]) -> float:
    """Largest output error of values printed with decimals digits.

    >>> rounding_allowance(4)
    5e-05
    """
    if decimals is None:
        return 0.0
    return 0.5 * 10.0 ** -decimals


def scaled_time(minutes: float, given_ghz: float,
                base_ghz: float = BASE_CPU_GHZ) -> float:
    """CPU time normalised to the base CPU speed.

    >>> round(scaled_time(0.82, 2.5), 4)
    0.8542
    """
    if not given_ghz > 0 or not base_ghz > 0:
        raise ValueError('CPU speeds must be positive')
    return given_ghz / base_ghz * minutes


class RunSummary(NamedTuple):
    """Figures of one solve run as printed by the report."""
    method: str
    status: str
    cost: float
    gap: Optional[float]
    max_balance: float
    minutes: float
    given_ghz: float
    base_ghz: float = BASE_CPU_GHZ
    milp_cost: Optional[float] = None
    unchanged_fraction: Optional[float] = None

    @property
    def scaled_minutes(self) -> float:
        return scaled_time(self.minutes, self.given_ghz, self.base_ghz)


REPORT_FIELDS = [
    'method', 'status', 'cost', 'milp_cost', 'gap', 'max_balance',
    'unchanged_fraction', 'minutes', 'given_ghz', 'base_ghz']
TEXT_FIELDS = ['method', 'status']


def format_report(summary: RunSummary) -> str:
    """Write a run summary as `key: value` lines.

    Numbers are written exactly; s_time_min is derived and rounded.
    """
    lines = []
    for field in REPORT_FIELDS:
        value = getattr(summary, field)
        if value is None:
            text = 'n/a'
        elif field in TEXT_FIELDS:
            text = value
        else:
            text = repr(float(value))
        lines.append('{}: {}'.format(field, text))
    lines.append('s_time_min: {:.4f}'.format(summary.scaled_minutes))
    return '\n'.join(lines) + '\n'


def parse_report(text: str) -> RunSummary:
    """Read a report written by format_report.

    :raises ParseError: for a missing field or a malformed number.
    """
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        key, separator, value = line.partition(':')
        if not separator:
            raise ParseError('expected "key: value"', 'report', number)
        key, value = key.strip(), value.strip()
        if key not in REPORT_FIELDS:
            continue
        if key in TEXT_FIELDS:
            values[key] = value
        elif value == 'n/a':
            values[key] = None
        else:
            values[key] = _numbers([value], 'report', number)[0]
    missing = [field for field in REPORT_FIELDS if field not in values]
    if missing:
        raise ParseError('missing {}'.format(', '.join(missing)), 'report')
    return RunSummary(**values)
