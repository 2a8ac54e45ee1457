"""Problem data shared by all dispatch solvers.

An Instance bundles generating units, per-period demand and the optional
B-loss and spinning reserve data. A Schedule holds the unit outputs of a
solution. Both are immutable once built.
"""
import logging
from typing import \
    List, \
    NamedTuple, \
    Optional, \
    Sequence, \
    Tuple

import numpy as np


__log__ = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12


class DispatchError(Exception):
    """Base class of all errors raised by the dispatch package."""


class DomainError(DispatchError, ValueError):
    """An output lies outside the range a function is defined on."""


class ConfigurationError(DispatchError):
    """Data or settings needed by an operation are missing or invalid."""


class BuildError(DispatchError):
    """A model cannot be built from an instance."""


class DecodeError(DispatchError):
    """A solver solution cannot be turned into a schedule."""


class UnitParams(NamedTuple):
    """Cost coefficients, limits and ramp rates of one thermal unit.

    Cost of output P is alpha + beta*P + gamma*P^2 + e*|sin(f*(P - p_min))|.
    ramp_down is stored as a nonnegative magnitude and limits
    P[t-1] - P[t].
    """
    alpha: float
    beta: float
    gamma: float
    e: float
    f: float
    p_min: float
    p_max: float
    ramp_up: float
    ramp_down: float
    initial_output: Optional[float] = None
    name: str = ''

    @property
    def is_fixed(self) -> bool:
        """Test if the unit can only run at one output."""
        return self.p_min == self.p_max

    @property
    def has_ripple(self) -> bool:
        """Test if the valve-point term can be nonzero."""
        return self.e != 0 and self.f != 0 and not self.is_fixed


class Instance(NamedTuple):
    """Dynamic dispatch problem over N units and T periods.

    :param Tuple[UnitParams] units: Units in file order.
    :param np.ndarray demand: Load per period in MW, shape (T,).
    :param np.ndarray b_matrix: Optional symmetric (N, N) loss matrix in
        1/MW.
    :param np.ndarray reserve_req: Optional reserve requirement per
        period in MW, shape (T,).
    :param float tau: Reserve delivery time as a fraction of one period.
    :param bool reserve_enabled: Whether reserve constraints are imposed.
    """
    units: Tuple[UnitParams, ...]
    demand: np.ndarray
    b_matrix: Optional[np.ndarray] = None
    reserve_req: Optional[np.ndarray] = None
    tau: float = 0.0
    reserve_enabled: bool = False

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_periods(self) -> int:
        return len(self.demand)

    @property
    def p_min(self) -> np.ndarray:
        return np.array([unit.p_min for unit in self.units], dtype=float)

    @property
    def p_max(self) -> np.ndarray:
        return np.array([unit.p_max for unit in self.units], dtype=float)

    @property
    def has_loss(self) -> bool:
        return self.b_matrix is not None

    def with_reserve(self, enabled: bool) -> 'Instance':
        """Return a copy with reserve constraints switched on or off."""
        return self._replace(reserve_enabled=enabled)


class Schedule(NamedTuple):
    """Unit outputs P[i, t] in MW, shape (N, T).

    Loss, balance residuals and cost are derived from the outputs, see
    dispatch.feasibility and dispatch.cost.
    """
    outputs: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.outputs.shape

    def matches(self, instance: Instance) -> bool:
        """Test if dimensions agree with instance."""
        return self.outputs.shape == (instance.n_units, instance.n_periods)


def make_instance(
        units: Sequence[UnitParams], demand: Sequence[float],
        b_matrix=None, reserve_req=None, tau: float = 0.0,
        reserve_enabled: bool = False) -> Instance:
    """Build an Instance converting sequences to numpy arrays."""
    return Instance(
        units=tuple(units),
        demand=np.asarray(demand, dtype=float),
        b_matrix=None if b_matrix is None else np.asarray(
            b_matrix, dtype=float),
        reserve_req=None if reserve_req is None else np.asarray(
            reserve_req, dtype=float),
        tau=float(tau),
        reserve_enabled=reserve_enabled)


def _validate_unit(index: int, unit: UnitParams) -> List[str]:
    label = 'unit {}'.format(index + 1)
    violations = []
    if unit.p_min > unit.p_max:
        violations.append('{}: p_min {} exceeds p_max {}'.format(
            label, unit.p_min, unit.p_max))
    for field in ['alpha', 'beta', 'gamma', 'e', 'f']:
        if getattr(unit, field) < 0:
            violations.append('{}: {} must not be negative'.format(
                label, field))
    if unit.ramp_up < 0:
        violations.append('{}: ramp_up must not be negative'.format(label))
    if unit.ramp_down < 0:
        violations.append('{}: ramp_down must not be negative'.format(label))
    return violations


def validate(instance: Instance) -> List[str]:
    """List every violated data rule of an instance.

    :param Instance instance: Instance to check.
    :returns List[str]: One description per violation naming the field.
        Empty if the instance is well formed.
    """
    violations = []
    if instance.n_units < 1:
        violations.append('units: at least one unit is required')
    if instance.n_periods < 1:
        violations.append('demand: at least one period is required')
    for index, unit in enumerate(instance.units):
        violations += _validate_unit(index, unit)
    for period, load in enumerate(instance.demand):
        if not load > 0:
            violations.append('demand: period {} must be positive'.format(
                period + 1))

    if instance.b_matrix is not None:
        b_matrix = instance.b_matrix
        shape = (instance.n_units, instance.n_units)
        if b_matrix.shape != shape:
            violations.append('b_matrix: shape {} does not match {}'.format(
                b_matrix.shape, shape))
        else:
            rows, cols = np.nonzero(
                np.abs(b_matrix - b_matrix.T) > SYMMETRY_TOL)
            for i, j in zip(rows, cols):
                if i < j:
                    violations.append(
                        'b_matrix: entry ({0},{1}) differs from '
                        '({1},{0})'.format(i + 1, j + 1))

    if instance.reserve_enabled:
        if instance.reserve_req is None:
            violations.append(
                'reserve_req: required when reserve is enabled')
        elif len(instance.reserve_req) != instance.n_periods:
            violations.append(
                'reserve_req: {} values for {} periods'.format(
                    len(instance.reserve_req), instance.n_periods))
        if not instance.tau > 0:
            violations.append(
                'tau: must be positive when reserve is enabled')
    return violations


def feasible_region_nonempty(instance: Instance) -> bool:
    """Test the capacity bounds sum(p_min) <= D_t <= sum(p_max).

    Loss, ramps and reserve are ignored, so True is only necessary for
    feasibility.
    """
    total_min = instance.p_min.sum()
    total_max = instance.p_max.sum()
    short = np.nonzero(
        (instance.demand < total_min) | (instance.demand > total_max))[0]
    for period in short:
        __log__.info(
            'Demand %g at period %d outside capacity [%g, %g]',
            instance.demand[period], period + 1, total_min, total_max)
    return len(short) == 0
