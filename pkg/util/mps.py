"""Write a SparseLp as an MPS file for external MILP solvers.

Fixed format is used while every row and column name fits in eight
characters, free format otherwise. Ranged rows are written as G rows with
a RANGES entry, integer columns are wrapped in MARKER lines and get an
explicit upper bound. The objective constant is written as the negated
RHS of the objective row.
"""
import logging
from typing import \
    List, \
    Sequence

import numpy as np

from dispatch.milp_builder import SparseLp


__log__ = logging.getLogger(__name__)

OBJECTIVE_ROW = 'COST'
SET_NAME = 'RHS'
RANGE_NAME = 'RNG'
BOUND_NAME = 'BND'
FIXED_NAME_WIDTH = 8
FIXED_NUMBER_WIDTH = 12
FREE_FORMAT_NOTE = '* free format: names longer than 8 characters'


def _fixed_number(value: float) -> str:
    """Most precise %g rendering that fits a fixed format number field.

    >>> _fixed_number(0.1)
    '0.1'
    >>> _fixed_number(-123456.78901234)
    '-123456.789'
    """
    for precision in range(12, 0, -1):
        text = '{:.{}g}'.format(value, precision)
        if len(text) <= FIXED_NUMBER_WIDTH:
            return text
    raise ValueError('Cannot fit {} into an MPS field'.format(value))


def _free_number(value: float) -> str:
    text = repr(float(value))
    return text[:-2] if text.endswith('.0') else text


class _Writer(object):
    def __init__(self, free: bool):
        self.free = free
        self.lines = []  # type: List[str]

    def number(self, value: float) -> str:
        return _free_number(value) if self.free else _fixed_number(value)

    def section(self, text: str):
        self.lines.append(text)

    def record(self, fields: Sequence[str]):
        """Write one data line of up to six fields, the first a type code."""
        fields = list(fields) + [''] * (6 - len(fields))
        if self.free:
            code = fields[0]
            rest = ' '.join(field for field in fields[1:] if field)
            line = ' {:<2} {}'.format(code, rest) if code else '    ' + rest
            self.lines.append(line.rstrip())
            return
        line = ' {:<2} {:<8}  {:<8}  {:<12}   {:<8}  {:<12}'.format(*fields)
        self.lines.append(line.rstrip())


def _row_types(lp: SparseLp) -> List[str]:
    types = []
    for lower, upper in zip(lp.row_lower, lp.row_upper):
        if lower == upper:
            types.append('E')
        elif np.isfinite(lower):
            types.append('G')
        elif np.isfinite(upper):
            types.append('L')
        else:
            types.append('N')
    return types


def _bounds(writer: _Writer, name: str, lower: float, upper: float,
            integer: bool):
    number = writer.number
    if lower == upper:
        writer.record(['FX', BOUND_NAME, name, number(lower)])
        return
    if not np.isfinite(lower) and not np.isfinite(upper):
        writer.record(['FR', BOUND_NAME, name])
        return
    if not np.isfinite(lower):
        writer.record(['MI', BOUND_NAME, name])
    elif lower != 0 or integer:
        writer.record(['LO', BOUND_NAME, name, number(lower)])
    if np.isfinite(upper):
        writer.record(['UP', BOUND_NAME, name, number(upper)])


def export_mps(lp: SparseLp, name: str = 'DEDVPE') -> str:
    """Render lp as MPS text, byte-identical for identical input.

    :param SparseLp lp: Program to write.
    :param str name: Model name for the NAME line.
    :returns str: MPS file contents.
    """
    row_names = lp.row_names
    col_names = lp.col_names
    longest = max([len(n) for n in row_names + col_names + [name]] + [0])
    free = longest > FIXED_NAME_WIDTH
    if free:
        __log__.info('Names up to %d characters, writing free format MPS',
                     longest)
    writer = _Writer(free)
    if free:
        writer.section(FREE_FORMAT_NOTE)
        writer.section('NAME {}'.format(name))
    else:
        writer.section('NAME          {}'.format(name))

    types = _row_types(lp)
    writer.section('ROWS')
    writer.record(['N', OBJECTIVE_ROW])
    for row_type, row_name in zip(types, row_names):
        writer.record([row_type, row_name])

    writer.section('COLUMNS')
    matrix = lp.matrix.tocsc()
    in_integer_block = False
    markers = 0
    for j, col_name in enumerate(col_names):
        integer = bool(lp.integrality[j])
        if integer != in_integer_block:
            markers += 1
            writer.record(['', 'MARK{:04d}'.format(markers), "'MARKER'", '',
                           "'INTORG'" if integer else "'INTEND'"])
            in_integer_block = integer
        entries = []
        if lp.objective[j] != 0:
            entries.append((OBJECTIVE_ROW, lp.objective[j]))
        start, end = matrix.indptr[j], matrix.indptr[j + 1]
        order = np.argsort(matrix.indices[start:end], kind='stable')
        for k in order:
            entries.append((row_names[matrix.indices[start + k]],
                            matrix.data[start + k]))
        if not entries:
            entries.append((OBJECTIVE_ROW, 0.0))
        for row_name, value in entries:
            writer.record(['', col_name, row_name, writer.number(value)])
    if in_integer_block:
        markers += 1
        writer.record(['', 'MARK{:04d}'.format(markers), "'MARKER'", '',
                       "'INTEND'"])

    writer.section('RHS')
    if lp.objective_constant != 0:
        writer.record(['', SET_NAME, OBJECTIVE_ROW,
                       writer.number(-lp.objective_constant)])
    for row_type, row_name, lower, upper in zip(
            types, row_names, lp.row_lower, lp.row_upper):
        rhs = {'E': lower, 'G': lower, 'L': upper}.get(row_type, 0.0)
        if rhs != 0:
            writer.record(['', SET_NAME, row_name, writer.number(rhs)])

    ranged = [
        (row_name, upper - lower)
        for row_type, row_name, lower, upper in zip(
            types, row_names, lp.row_lower, lp.row_upper)
        if row_type == 'G' and np.isfinite(upper)]
    if ranged:
        writer.section('RANGES')
        for row_name, width in ranged:
            writer.record(['', RANGE_NAME, row_name, writer.number(width)])

    writer.section('BOUNDS')
    for j, col_name in enumerate(col_names):
        _bounds(writer, col_name, lp.col_lower[j], lp.col_upper[j],
                bool(lp.integrality[j]))
    writer.section('ENDATA')
    return '\n'.join(writer.lines) + '\n'
