"""Audit schedules against balance, limit, ramp and reserve constraints."""
import logging
from typing import \
    List, \
    NamedTuple, \
    Tuple

import numpy as np

from dispatch.model import \
    ConfigurationError, \
    Instance, \
    Schedule


__log__ = logging.getLogger(__name__)


class Tolerances(NamedTuple):
    """Largest violation in MW an audit still accepts."""
    balance: float = 1e-5
    bounds: float = 1e-6
    ramps: float = 1e-6
    reserve: float = 1e-6

    def widened(self, output_error: float, n_units: int) -> 'Tolerances':
        """Loosen tolerances for outputs known only to +-output_error."""
        return Tolerances(
            balance=self.balance + n_units * output_error * 1.1,
            bounds=self.bounds + output_error,
            ramps=self.ramps + 2 * output_error,
            reserve=self.reserve + n_units * output_error)


DEFAULT_TOLERANCES = Tolerances()


class Violation(NamedTuple):
    """Limit violation of one unit in one period, both 1-based.

    excess is positive above an upper limit (p_max, ramp-up) and negative
    below a lower limit (p_min, ramp-down).
    """
    unit: int
    period: int
    excess: float


class AuditReport(NamedTuple):
    loss: np.ndarray
    balance: np.ndarray
    bound_violations: List[Violation]
    ramp_violations: List[Violation]
    reserve_shortfalls: List[Tuple[int, float]]
    max_balance: float
    passed: bool


def _symmetric(b_matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (b_matrix + b_matrix.T)


def transmission_loss(instance: Instance, outputs: np.ndarray) -> float:
    """B-loss of one period's outputs, sum_i sum_j P_i B_ij P_j.

    :raises ConfigurationError: if the instance has no B-matrix.
    """
    if instance.b_matrix is None:
        raise ConfigurationError('Instance has no B-matrix')
    outputs = np.asarray(outputs, dtype=float)
    return float(outputs @ _symmetric(instance.b_matrix) @ outputs)


def losses(
        instance: Instance, outputs: np.ndarray,
        include_loss: bool = True) -> np.ndarray:
    """Loss per period for outputs of shape (N, T).

    Zero everywhere without a B-matrix or when include_loss is False.
    """
    if not include_loss or instance.b_matrix is None:
        return np.zeros(outputs.shape[1])
    return np.einsum(
        'it,ij,jt->t', outputs, _symmetric(instance.b_matrix), outputs)


def balance_violation(
        instance: Instance, schedule: Schedule,
        include_loss: bool = True) -> np.ndarray:
    """Absolute power balance residual per period, including loss."""
    outputs = schedule.outputs
    residual = (outputs.sum(axis=0) - instance.demand
                - losses(instance, outputs, include_loss))
    return np.abs(residual)


def bound_violations(
        instance: Instance, outputs: np.ndarray) -> List[Violation]:
    """Outputs above p_max or below p_min."""
    above = outputs - instance.p_max[:, None]
    below = outputs - instance.p_min[:, None]
    found = [
        Violation(int(i) + 1, int(t) + 1, float(above[i, t]))
        for i, t in zip(*np.nonzero(above > 0))]
    found += [
        Violation(int(i) + 1, int(t) + 1, float(below[i, t]))
        for i, t in zip(*np.nonzero(below < 0))]
    return sorted(found)


def ramp_violations(
        instance: Instance, outputs: np.ndarray) -> List[Violation]:
    """Output changes beyond ramp-up or ramp-down rates.

    Period 1 is checked only for units with an initial output.
    """
    found = []
    for i, unit in enumerate(instance.units):
        previous = np.concatenate([
            [np.nan if unit.initial_output is None else unit.initial_output],
            outputs[i, :-1]])
        step = outputs[i] - previous
        for t in np.nonzero(step > unit.ramp_up)[0]:
            found.append(
                Violation(i + 1, int(t) + 1, float(step[t] - unit.ramp_up)))
        for t in np.nonzero(-step > unit.ramp_down)[0]:
            found.append(
                Violation(i + 1, int(t) + 1,
                          float(step[t] + unit.ramp_down)))
    return sorted(found)


def reserve_capability(instance: Instance, outputs: np.ndarray) -> np.ndarray:
    """Reserve each unit can deliver, min(p_max - P, tau * UR), (N, T)."""
    headroom = np.maximum(instance.p_max[:, None] - outputs, 0.0)
    ramp_limit = instance.tau * np.array(
        [unit.ramp_up for unit in instance.units])[:, None]
    return np.minimum(headroom, ramp_limit)


def reserve_shortfalls(
        instance: Instance, outputs: np.ndarray) -> List[Tuple[int, float]]:
    """Periods whose total reserve capability misses the requirement."""
    if not instance.reserve_enabled:
        return []
    total = reserve_capability(instance, outputs).sum(axis=0)
    missing = instance.reserve_req - total
    return [(int(t) + 1, float(missing[t]))
            for t in np.nonzero(missing > 0)[0]]


def audit(
        instance: Instance, schedule: Schedule,
        tolerances: Tolerances = DEFAULT_TOLERANCES,
        include_loss: bool = True) -> AuditReport:
    """Check a schedule against all dispatch constraints.

    :param Instance instance: Validated instance.
    :param Schedule schedule: Schedule to audit.
    :param Tolerances tolerances: Accepted violation per constraint kind.
    :param bool include_loss: Whether the balance includes B-loss.
    :returns AuditReport: Losses, residuals and every violation found.
    """
    outputs = schedule.outputs
    loss = losses(instance, outputs, include_loss)
    balance = balance_violation(instance, schedule, include_loss)
    bounds = bound_violations(instance, outputs)
    ramps = ramp_violations(instance, outputs)
    reserve = reserve_shortfalls(instance, outputs)
    max_balance = float(balance.max())
    passed = (
        max_balance <= tolerances.balance
        and all(abs(v.excess) <= tolerances.bounds for v in bounds)
        and all(abs(v.excess) <= tolerances.ramps for v in ramps)
        and all(amount <= tolerances.reserve for _, amount in reserve))
    if not passed:
        __log__.info(
            'Audit failed: max balance %.3g, %d bound, %d ramp and %d '
            'reserve violations', max_balance, len(bounds), len(ramps),
            len(reserve))
    return AuditReport(
        loss, balance, bounds, ramps, reserve, max_balance, passed)
