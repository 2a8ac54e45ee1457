"""Valve-point generation cost and its piecewise-linear approximation."""
import logging
import math
from typing import \
    NamedTuple, \
    Tuple, \
    Union

import numpy as np

from dispatch.model import \
    DomainError, \
    Instance, \
    Schedule, \
    UnitParams


__log__ = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

DOMAIN_TOL = 1e-6
DEFAULT_SEGMENTS = 4


class SegmentTable(NamedTuple):
    """Chords of a unit's cost curve between breakpoints at the sine zeros.

    Segment l (1-based) spans [breakpoints[l-1], breakpoints[l]] with cost
    slopes[l-1] * P + intercepts[l-1]. A fixed unit has one breakpoint and
    no segments.
    """
    breakpoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    segments_per_half_period: int

    @property
    def n_segments(self) -> int:
        return len(self.slopes)


def _check_domain(unit: UnitParams, p: np.ndarray):
    outside = (p < unit.p_min - DOMAIN_TOL) | (p > unit.p_max + DOMAIN_TOL)
    if np.any(outside):
        raise DomainError('Output {} outside [{}, {}]'.format(
            np.asarray(p)[outside].tolist(), unit.p_min, unit.p_max))


def _cost(unit: UnitParams, p: ArrayLike) -> ArrayLike:
    return (unit.alpha + unit.beta * p + unit.gamma * p * p
            + unit.e * np.abs(np.sin(unit.f * (p - unit.p_min))))


def unit_cost(unit: UnitParams, p: ArrayLike) -> ArrayLike:
    """Evaluate the valve-point cost of one unit.

    :param UnitParams unit: Unit to evaluate.
    :param p: Output in MW, scalar or array.
    :returns: Cost in $, same shape as p.
    :raises DomainError: if any output lies outside [p_min, p_max].
    """
    _check_domain(unit, np.asarray(p, dtype=float))
    return _cost(unit, p)


def unit_cost_smooth_parts(unit: UnitParams, p: float) -> Tuple[
        Tuple[float, float, float], Tuple[float, float, float]]:
    """Value and first two derivatives of the smooth cost parts.

    :returns: ((q, dq, d2q), (s, ds, d2s)) where q = alpha + beta*p +
        gamma*p^2 and s = sin(f*(p - p_min)).
    :raises DomainError: if p lies outside [p_min, p_max].
    """
    _check_domain(unit, np.asarray(p, dtype=float))
    quadratic = (
        unit.alpha + unit.beta * p + unit.gamma * p * p,
        unit.beta + 2 * unit.gamma * p,
        2 * unit.gamma)
    angle = unit.f * (p - unit.p_min)
    sine = (
        math.sin(angle),
        unit.f * math.cos(angle),
        -unit.f * unit.f * math.sin(angle))
    return quadratic, sine


def segment_count(unit: UnitParams, segments_per_half_period: int) -> int:
    """Number of segments L = ceil(M * f * (p_max - p_min) / pi).

    A unit without ripple still gets one segment over a nonempty range.
    """
    if unit.is_fixed:
        return 0
    half_periods = unit.f * (unit.p_max - unit.p_min) / math.pi
    # guard ceil against representation noise like 16.000000000000004
    count = math.ceil(segments_per_half_period * half_periods - 1e-6)
    return max(1, count)


def segment_width(unit: UnitParams, segments_per_half_period: int) -> float:
    """Width pi / (M * f) of a full segment, the range without ripple."""
    if unit.f <= 0:
        return unit.p_max - unit.p_min
    return math.pi / (segments_per_half_period * unit.f)


def build_segments(
        unit: UnitParams,
        segments_per_half_period: int = DEFAULT_SEGMENTS) -> SegmentTable:
    """Build chords of the cost curve on breakpoints at the sine zeros.

    Breakpoints sit at p_min + j * pi / (M * f), so every half period of
    the ripple holds M equal segments; the last segment ends at p_max and
    may be shorter.

    :param UnitParams unit: Unit to linearise.
    :param int segments_per_half_period: M >= 1.
    :returns SegmentTable: Table whose chords interpolate the cost exactly
        at every breakpoint.
    """
    if segments_per_half_period < 1:
        raise ValueError('Segments per half period must be at least 1')
    count = segment_count(unit, segments_per_half_period)
    if count == 0:
        return SegmentTable(
            np.array([unit.p_min]), np.zeros(0), np.zeros(0),
            segments_per_half_period)
    width = segment_width(unit, segments_per_half_period)
    breakpoints = np.minimum(
        unit.p_min + width * np.arange(count + 1), unit.p_max)
    breakpoints[-1] = unit.p_max
    costs = _cost(unit, breakpoints)
    slopes = np.diff(costs) / np.diff(breakpoints)
    intercepts = costs[:-1] - slopes * breakpoints[:-1]
    return SegmentTable(
        breakpoints, slopes, intercepts, segments_per_half_period)


def pwl_cost(table: SegmentTable, p: ArrayLike) -> ArrayLike:
    """Evaluate the piecewise-linear cost given by a segment table."""
    if table.n_segments == 0:
        raise ValueError('Table of a fixed unit has no chords')
    values = np.append(
        table.slopes * table.breakpoints[:-1] + table.intercepts,
        table.slopes[-1] * table.breakpoints[-1] + table.intercepts[-1])
    return np.interp(p, table.breakpoints, values)


def pwl_max_error(unit: UnitParams, table: SegmentTable) -> float:
    """Largest gap between chords and cost on a 10*L point grid."""
    if table.n_segments == 0:
        return 0.0
    grid = np.linspace(unit.p_min, unit.p_max, 10 * table.n_segments + 1)
    return float(np.max(np.abs(pwl_cost(table, grid) - _cost(unit, grid))))


def fixed_cost(unit: UnitParams) -> float:
    """Cost of a fixed unit at its only output."""
    return float(_cost(unit, unit.p_min))


def unit_costs(instance: Instance, schedule: Schedule) -> np.ndarray:
    """Cost per unit and period, shape (N, T).

    :raises DomainError: listing every (unit, period) out of range,
        1-based.
    """
    outputs = schedule.outputs
    p_min = instance.p_min[:, None]
    p_max = instance.p_max[:, None]
    outside = (outputs < p_min - DOMAIN_TOL) | (outputs > p_max + DOMAIN_TOL)
    if np.any(outside):
        cells = [(int(i) + 1, int(t) + 1)
                 for i, t in zip(*np.nonzero(outside))]
        raise DomainError('Outputs out of range at (unit, period) {}'.format(
            cells))
    return np.vstack([
        _cost(unit, outputs[index])
        for index, unit in enumerate(instance.units)])


def total_cost(instance: Instance, schedule: Schedule) -> float:
    """Total generation cost of a schedule over all units and periods."""
    if not schedule.matches(instance):
        raise ValueError('Schedule shape {} does not match instance'.format(
            schedule.shape))
    return float(unit_costs(instance, schedule).sum())
