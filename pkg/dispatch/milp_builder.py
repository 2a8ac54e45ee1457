"""Piecewise-linear MILP of the loss-free dispatch problem.

Each non-fixed unit i and period t gets one output column P(i,t), one
segment column S(l,i,t) and one binary Z(l,i,t) per chord l = 1..L_i:

    P(i,t) = sum_l S(l,i,t)                          K(i,t)
    a[l-1] * Z(l,i,t) <= S(l,i,t)                    G(l,i,t)
    S(l,i,t) <= a[l] * Z(l,i,t)                      H(l,i,t)
    sum_l Z(l,i,t) = 1                               C(i,t)
    sum_i P(i,t) = D_t                               D(t)
    -DR_i <= P(i,t) - P(i,t-1) <= UR_i               U(i,t)

with cost sum k_l * S(l,i,t) + b_l * Z(l,i,t). Output limits are bounds of
the P columns. Fixed units keep only a fixed P column; their cost goes to
the objective constant. With reserve, columns R(i,t) in [0, tau*UR_i] add

    P(i,t) + R(i,t) <= p_max_i                       V(i,t)
    sum_i R(i,t) >= R_t                              W(t)

Model size, with N' the non-fixed units and r = 1 when reserve is on:

    columns = T * sum_i (1 + 2 L_i) + r * N * T
    rows    = T * sum_{i in N'} (2 + 2 L_i) + T
              + sum_{i in N'} (T - 1 + [i has an initial output])
              + r * (N * T + T)
"""
import logging
from typing import \
    Dict, \
    List, \
    NamedTuple, \
    Optional, \
    Sequence, \
    Tuple

import numpy as np
import scipy.sparse as sp

from dispatch import cost
from dispatch.model import \
    BuildError, \
    DecodeError, \
    Instance, \
    Schedule, \
    feasible_region_nonempty, \
    validate


__log__ = logging.getLogger(__name__)

INTEGRALITY_TOL = 1e-6
LINK_TOL = 1e-7

Key = Tuple[str, int, int, int]


class SparseLp(NamedTuple):
    """Solver-neutral linear program with integrality marks.

    min objective @ x + objective_constant
    s.t. row_lower <= matrix @ x <= row_upper, col_lower <= x <= col_upper.
    Keys map each column and row to (symbol, unit, period, segment), all
    1-based and 0 where not applicable.
    """
    col_lower: np.ndarray
    col_upper: np.ndarray
    row_lower: np.ndarray
    row_upper: np.ndarray
    matrix: sp.csc_matrix
    objective: np.ndarray
    objective_constant: float
    integrality: np.ndarray
    col_keys: Tuple[Key, ...]
    row_keys: Tuple[Key, ...]

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def col_names(self) -> List[str]:
        return [key_name(key) for key in self.col_keys]

    @property
    def row_names(self) -> List[str]:
        return [key_name(key) for key in self.row_keys]

    def with_col_bounds(
            self, lower: np.ndarray, upper: np.ndarray) -> 'SparseLp':
        return self._replace(col_lower=lower, col_upper=upper)


class MilpModel(NamedTuple):
    """MILP plus the column positions of every schedule quantity.

    p_columns[i, t] is the P(i,t) column. segment_columns[i] and
    z_columns[i] have shape (L_i, T); both are empty for fixed units.
    """
    lp: SparseLp
    instance: Instance
    tables: Tuple[cost.SegmentTable, ...]
    p_columns: np.ndarray
    segment_columns: Tuple[np.ndarray, ...]
    z_columns: Tuple[np.ndarray, ...]
    reserve_columns: Optional[np.ndarray]


def key_name(key: Key) -> str:
    """Name of a column or row key, e.g. S(2,1,7) or D(3).

    >>> key_name(('S', 1, 7, 2))
    'S(2,1,7)'
    >>> key_name(('D', 0, 3, 0))
    'D(3)'
    >>> key_name(('COST', 0, 0, 0))
    'COST'
    """
    symbol, unit, period, segment = key
    indices = [index for index in (segment, unit, period) if index]
    if not indices:
        return symbol
    return '{}({})'.format(symbol, ','.join(str(i) for i in indices))


class _Assembler(object):
    """Collect columns, rows and coefficients in creation order."""
    def __init__(self):
        self.col_lower, self.col_upper, self.objective = [], [], []
        self.integrality, self.col_keys = [], []
        self.row_lower, self.row_upper, self.row_keys = [], [], []
        self.entries = {}  # type: Dict[Tuple[int, int], float]
        self.constant = 0.0

    def add_column(
            self, key: Key, lower: float, upper: float, cost_: float = 0.0,
            integer: bool = False) -> int:
        self.col_keys.append(key)
        self.col_lower.append(lower)
        self.col_upper.append(upper)
        self.objective.append(cost_)
        self.integrality.append(integer)
        return len(self.col_keys) - 1

    def add_row(
            self, key: Key, lower: float, upper: float,
            coefficients: Sequence[Tuple[int, float]]) -> int:
        row = len(self.row_keys)
        self.row_keys.append(key)
        self.row_lower.append(lower)
        self.row_upper.append(upper)
        for col, value in coefficients:
            if value != 0:
                self.entries[row, col] = self.entries.get((row, col), 0.0) \
                    + value
        return row

    def finish(self) -> SparseLp:
        shape = (len(self.row_keys), len(self.col_keys))
        if self.entries:
            rows, cols = zip(*self.entries.keys())
            values = list(self.entries.values())
        else:
            rows, cols, values = [], [], []
        matrix = sp.coo_matrix(
            (values, (rows, cols)), shape=shape, dtype=float).tocsc()
        return SparseLp(
            col_lower=np.array(self.col_lower, dtype=float),
            col_upper=np.array(self.col_upper, dtype=float),
            row_lower=np.array(self.row_lower, dtype=float),
            row_upper=np.array(self.row_upper, dtype=float),
            matrix=matrix,
            objective=np.array(self.objective, dtype=float),
            objective_constant=self.constant,
            integrality=np.array(self.integrality, dtype=bool),
            col_keys=tuple(self.col_keys),
            row_keys=tuple(self.row_keys))


def expected_dimensions(
        instance: Instance, segments_per_half_period: int,
        reserve: bool) -> Tuple[int, int]:
    """Column and row counts of build_milp by the closed-form formula."""
    counts = [
        cost.segment_count(unit, segments_per_half_period)
        for unit in instance.units]
    n_units, n_periods = instance.n_units, instance.n_periods
    n_cols = n_periods * sum(1 + 2 * count for count in counts)
    n_rows = n_periods * sum(2 + 2 * count for count in counts if count) \
        + n_periods
    n_rows += sum(
        n_periods - 1 + (unit.initial_output is not None)
        for unit, count in zip(instance.units, counts) if count)
    if reserve:
        n_cols += n_units * n_periods
        n_rows += n_units * n_periods + n_periods
    return n_cols, n_rows


def _check_static_feasibility(instance: Instance, reserve: bool):
    violations = validate(instance)
    if violations:
        raise BuildError('Invalid instance: {}'.format('; '.join(violations)))
    if reserve and instance.reserve_req is None:
        raise BuildError('Reserve requested but instance has no reserve data')
    if not feasible_region_nonempty(instance):
        raise BuildError('Demand outside total capacity in some period')
    for index, unit in enumerate(instance.units):
        if unit.initial_output is None:
            continue
        low = max(unit.p_min, unit.initial_output - unit.ramp_down)
        high = min(unit.p_max, unit.initial_output + unit.ramp_up)
        if low > high:
            raise BuildError(
                'Unit {} cannot reach its limits from initial output '
                '{}'.format(index + 1, unit.initial_output))


def build_milp(
        instance: Instance,
        segments_per_half_period: int = cost.DEFAULT_SEGMENTS,
        reserve: bool = False) -> MilpModel:
    """Build the piecewise-linear MILP of an instance, without loss.

    :param Instance instance: Validated instance. Its B-matrix is ignored.
    :param int segments_per_half_period: M, chords per sine half period.
    :param bool reserve: Add spinning reserve columns and rows.
    :returns MilpModel: Model with its decode maps.
    :raises BuildError: if the instance is statically infeasible.
    """
    _check_static_feasibility(instance, reserve)
    n_units, n_periods = instance.n_units, instance.n_periods
    tables = tuple(
        cost.build_segments(unit, segments_per_half_period)
        for unit in instance.units)
    lp = _Assembler()
    p_columns = np.zeros((n_units, n_periods), dtype=int)
    segment_columns = [
        np.zeros((table.n_segments, n_periods), dtype=int)
        for table in tables]
    z_columns = [array.copy() for array in segment_columns]

    for t in range(n_periods):
        period = t + 1
        for i, (unit, table) in enumerate(zip(instance.units, tables)):
            p_columns[i, t] = lp.add_column(
                ('P', i + 1, period, 0), unit.p_min, unit.p_max)
            if table.n_segments == 0:
                lp.constant += cost.fixed_cost(unit)
                continue
            for l in range(table.n_segments):
                segment_columns[i][l, t] = lp.add_column(
                    ('S', i + 1, period, l + 1), 0.0,
                    table.breakpoints[l + 1], table.slopes[l])
                z_columns[i][l, t] = lp.add_column(
                    ('Z', i + 1, period, l + 1), 0.0, 1.0,
                    table.intercepts[l], integer=True)
            _add_unit_rows(lp, table, i, t, p_columns, segment_columns,
                           z_columns)
        lp.add_row(
            ('D', 0, period, 0), instance.demand[t], instance.demand[t],
            [(p_columns[i, t], 1.0) for i in range(n_units)])

    for i, (unit, table) in enumerate(zip(instance.units, tables)):
        if table.n_segments == 0:
            continue
        if unit.initial_output is not None:
            lp.add_row(
                ('U', i + 1, 1, 0), unit.initial_output - unit.ramp_down,
                unit.initial_output + unit.ramp_up, [(p_columns[i, 0], 1.0)])
        for t in range(1, n_periods):
            lp.add_row(
                ('U', i + 1, t + 1, 0), -unit.ramp_down, unit.ramp_up,
                [(p_columns[i, t], 1.0), (p_columns[i, t - 1], -1.0)])

    reserve_columns = None
    if reserve:
        reserve_columns = _add_reserve(lp, instance, p_columns)

    model = MilpModel(
        lp=lp.finish(), instance=instance, tables=tables,
        p_columns=p_columns, segment_columns=tuple(segment_columns),
        z_columns=tuple(z_columns), reserve_columns=reserve_columns)
    __log__.info(
        'Built MILP with %d columns (%d binary), %d rows, %d nonzeros',
        model.lp.n_cols, int(model.lp.integrality.sum()), model.lp.n_rows,
        model.lp.matrix.nnz)
    return model


def _add_unit_rows(lp, table, i, t, p_columns, segment_columns, z_columns):
    unit_id, period = i + 1, t + 1
    segments = segment_columns[i][:, t]
    binaries = z_columns[i][:, t]
    lp.add_row(
        ('K', unit_id, period, 0), 0.0, 0.0,
        [(p_columns[i, t], 1.0)] + [(col, -1.0) for col in segments])
    for l in range(table.n_segments):
        lp.add_row(
            ('G', unit_id, period, l + 1), -np.inf, 0.0,
            [(binaries[l], table.breakpoints[l]), (segments[l], -1.0)])
    for l in range(table.n_segments):
        lp.add_row(
            ('H', unit_id, period, l + 1), -np.inf, 0.0,
            [(segments[l], 1.0), (binaries[l], -table.breakpoints[l + 1])])
    lp.add_row(
        ('C', unit_id, period, 0), 1.0, 1.0,
        [(col, 1.0) for col in binaries])


def _add_reserve(lp, instance, p_columns) -> np.ndarray:
    n_units, n_periods = p_columns.shape
    reserve_columns = np.zeros_like(p_columns)
    for t in range(n_periods):
        for i, unit in enumerate(instance.units):
            reserve_columns[i, t] = lp.add_column(
                ('R', i + 1, t + 1, 0), 0.0, instance.tau * unit.ramp_up)
    for t in range(n_periods):
        for i, unit in enumerate(instance.units):
            lp.add_row(
                ('V', i + 1, t + 1, 0), -np.inf, unit.p_max,
                [(p_columns[i, t], 1.0), (reserve_columns[i, t], 1.0)])
    for t in range(n_periods):
        lp.add_row(
            ('W', 0, t + 1, 0), instance.reserve_req[t], np.inf,
            [(reserve_columns[i, t], 1.0) for i in range(n_units)])
    return reserve_columns


def objective_value(lp: SparseLp, x: np.ndarray) -> float:
    return float(lp.objective @ x + lp.objective_constant)


def max_violation(lp: SparseLp, x: np.ndarray) -> float:
    """Largest violation of any row or column bound by x."""
    activity = lp.matrix @ x
    return float(max(
        np.max(lp.row_lower - activity, initial=0.0),
        np.max(activity - lp.row_upper, initial=0.0),
        np.max(lp.col_lower - x, initial=0.0),
        np.max(x - lp.col_upper, initial=0.0)))


def is_integral(lp: SparseLp, x: np.ndarray,
                tolerance: float = INTEGRALITY_TOL) -> bool:
    values = x[lp.integrality]
    return bool(np.all(np.abs(values - np.round(values)) <= tolerance))


def decode(model: MilpModel, x: np.ndarray) -> Schedule:
    """Read the schedule from a MILP solution vector.

    :raises DecodeError: if a segment choice is fractional, the convexity
        row is violated or P differs from the sum of its segments.
    """
    if len(x) != model.lp.n_cols:
        raise DecodeError('Solution has {} values for {} columns'.format(
            len(x), model.lp.n_cols))
    outputs = x[model.p_columns]
    for i, table in enumerate(model.tables):
        if table.n_segments == 0:
            continue
        choices = x[model.z_columns[i]]
        fractional = np.abs(choices - np.round(choices)) > INTEGRALITY_TOL
        if np.any(fractional):
            periods = sorted({int(t) + 1 for t in np.nonzero(fractional)[1]})
            raise DecodeError(
                'Fractional segment choice for unit {} in periods {}'.format(
                    i + 1, periods))
        if np.any(np.abs(choices.sum(axis=0) - 1) > INTEGRALITY_TOL):
            raise DecodeError(
                'Unit {} does not choose exactly one segment'.format(i + 1))
        linked = x[model.segment_columns[i]].sum(axis=0)
        gap = np.abs(outputs[i] - linked)
        if np.any(gap > LINK_TOL * np.maximum(1.0, np.abs(outputs[i]))):
            raise DecodeError(
                'Output of unit {} differs from its segments by {}'.format(
                    i + 1, float(gap.max())))
    return Schedule(outputs.copy())


def choose_segment(table: cost.SegmentTable, p: float) -> int:
    """0-based index of the chord containing p, the lower one on a tie."""
    index = int(np.searchsorted(table.breakpoints, p, side='left')) - 1
    return min(max(index, 0), table.n_segments - 1)


def encode(model: MilpModel, schedule: Schedule) -> np.ndarray:
    """MILP solution vector representing a schedule.

    Each output goes to the chord containing it. Reserve columns take the
    largest reserve each unit can hold.
    """
    x = np.zeros(model.lp.n_cols)
    outputs = schedule.outputs
    x[model.p_columns] = outputs
    for i, table in enumerate(model.tables):
        for t in range(outputs.shape[1]):
            if table.n_segments == 0:
                continue
            l = choose_segment(table, outputs[i, t])
            x[model.segment_columns[i][l, t]] = outputs[i, t]
            x[model.z_columns[i][l, t]] = 1.0
    if model.reserve_columns is not None:
        headroom = model.instance.p_max[:, None] - outputs
        x[model.reserve_columns] = np.clip(
            headroom, 0.0, model.lp.col_upper[model.reserve_columns])
    return x
