"""Two-step MILP then IPM dispatch, and the single-step IPM baselines.

Step 1 solves the piecewise-linear MILP without loss. Step 2 starts the
interior-point method on the exact smooth NLP from the Step-1 schedule and
polishes it, adding loss when the instance has a B-matrix.
"""
from enum import Enum
import logging
import math
import time
from typing import \
    List, \
    NamedTuple, \
    Optional

import numpy as np

from dispatch import cost
from dispatch.branch_and_bound import \
    BnbConfig, \
    BnbResult, \
    BnbStatus, \
    ProgressCallback, \
    solve_milp
from dispatch.feasibility import \
    AuditReport, \
    audit
from dispatch.milp_builder import build_milp
from dispatch.model import \
    ConfigurationError, \
    Instance, \
    Schedule
from dispatch.nlp_ipm import \
    IpmConfig, \
    IpmResult, \
    IpmStatus, \
    IterationCallback, \
    build_nlp, \
    solve_nlp


__log__ = logging.getLogger(__name__)

START_STRATEGIES = ['flat-midpoint', 'proportional-to-demand']
SAME_OUTPUT = 1e-4
CHANGE_BUCKETS = 4


class HybridStatus(Enum):
    SOLVED = 'solved'
    FALLBACK = 'fallback'
    INFEASIBLE = 'infeasible'
    NO_INCUMBENT = 'no-incumbent'


class ChangeStatistics(NamedTuple):
    """How far outputs moved between two schedules.

    bucket_edges holds the upper edge of each bucket; bucket i covers
    (bucket_edges[i-1], bucket_edges[i]] with the first starting at the
    same-output threshold. overflow counts changes above the last edge.
    """
    total: int
    unchanged: int
    min_change: float
    max_change: float
    bucket_edges: List[float]
    bucket_counts: List[int]
    overflow: int

    @property
    def unchanged_fraction(self) -> float:
        return self.unchanged / self.total if self.total else 1.0

    @property
    def bucket_fractions(self) -> List[float]:
        return [count / self.total for count in self.bucket_counts]


class HybridReport(NamedTuple):
    """Both steps of a hybrid run and the audit of its final schedule.

    schedule is the Step-2 schedule, or the Step-1 schedule when status
    is FALLBACK, or None when Step 1 found nothing.
    """
    status: HybridStatus
    schedule: Optional[Schedule]
    milp: BnbResult
    ipm: Optional[IpmResult]
    milp_seconds: float
    ipm_seconds: float
    milp_cost: float
    final_cost: float
    changes: Optional[ChangeStatistics]
    audit: Optional[AuditReport]
    include_loss: bool

    @property
    def total_seconds(self) -> float:
        return self.milp_seconds + self.ipm_seconds


def change_statistics(
        before: Schedule, after: Schedule, threshold: float = SAME_OUTPUT,
        bucket_width: Optional[float] = None,
        n_buckets: int = CHANGE_BUCKETS) -> ChangeStatistics:
    """Count unchanged outputs and bucket the others by size of change.

    :param float threshold: Changes up to this many MW count as unchanged.
    :param float bucket_width: Width in MW; default ceil(max change /
        n_buckets), at least 1.
    """
    if before.shape != after.shape:
        raise ValueError('Schedules of shapes {} and {} differ'.format(
            before.shape, after.shape))
    difference = np.abs(after.outputs - before.outputs).ravel()
    changed = difference[difference > threshold]
    max_change = float(changed.max()) if len(changed) else 0.0
    min_change = float(changed.min()) if len(changed) else 0.0
    if bucket_width is None:
        bucket_width = max(1.0, math.ceil(max_change / n_buckets))
    edges = [bucket_width * (k + 1) for k in range(n_buckets)]
    counts = []
    low = threshold
    for edge in edges:
        counts.append(int(np.sum((changed > low) & (changed <= edge))))
        low = edge
    return ChangeStatistics(
        total=len(difference), unchanged=len(difference) - len(changed),
        min_change=min_change, max_change=max_change, bucket_edges=edges,
        bucket_counts=counts, overflow=int(np.sum(changed > edges[-1])))


def solve_hybrid(
        instance: Instance,
        segments_per_half_period: int = cost.DEFAULT_SEGMENTS,
        bnb_config: BnbConfig = BnbConfig(),
        ipm_config: IpmConfig = IpmConfig(),
        include_loss: Optional[bool] = None, reserve: bool = False,
        progress: Optional[ProgressCallback] = None,
        iteration_callback: Optional[IterationCallback] = None
) -> HybridReport:
    """Solve the MILP, then polish its schedule with the interior point.

    :param Instance instance: Validated instance.
    :param int segments_per_half_period: M of the piecewise-linear cost.
    :param BnbConfig bnb_config: Step-1 settings.
    :param IpmConfig ipm_config: Step-2 settings.
    :param bool include_loss: Whether Step 2 includes loss, default when
        the instance has a B-matrix.
    :param bool reserve: Impose spinning reserve in both steps.
    :returns HybridReport: Both results, timings, change statistics and
        the audit of the final schedule.
    """
    if include_loss is None:
        include_loss = instance.has_loss
    if include_loss and not instance.has_loss:
        raise ConfigurationError('Loss requested but instance has no B-matrix')

    __log__.info('Step 1: MILP with M=%d', segments_per_half_period)
    started = time.monotonic()
    model = build_milp(instance, segments_per_half_period, reserve)
    milp = solve_milp(model, bnb_config, progress)
    milp_seconds = time.monotonic() - started
    if milp.schedule is None:
        status = HybridStatus.INFEASIBLE if milp.status is \
            BnbStatus.INFEASIBLE else HybridStatus.NO_INCUMBENT
        __log__.warning(
            'Step 1 ended %s without a schedule', milp.status.value)
        return HybridReport(
            status=status, schedule=None, milp=milp, ipm=None,
            milp_seconds=milp_seconds, ipm_seconds=0.0, milp_cost=np.inf,
            final_cost=np.inf, changes=None, audit=None,
            include_loss=include_loss)
    milp_cost = cost.total_cost(instance, milp.schedule)

    __log__.info('Step 2: interior point from the Step-1 schedule')
    started = time.monotonic()
    problem = build_nlp(instance, include_loss, reserve)
    ipm = solve_nlp(problem, milp.schedule, ipm_config, iteration_callback)
    ipm_seconds = time.monotonic() - started

    schedule = ipm.schedule
    report = audit(instance, schedule, include_loss=include_loss)
    status = HybridStatus.SOLVED
    if ipm.status is IpmStatus.RESTORATION_FAILURE or not report.passed:
        __log__.warning(
            'Step 2 ended %s with audit %s, falling back to the Step-1 '
            'schedule', ipm.status.value,
            'passed' if report.passed else 'failed')
        status = HybridStatus.FALLBACK
        schedule = milp.schedule
        report = audit(instance, schedule, include_loss=include_loss)

    changes = change_statistics(milp.schedule, ipm.schedule)
    final_cost = cost.total_cost(instance, schedule)
    __log__.info(
        'Hybrid %s: MILP cost %.4f, final cost %.4f, %.2f%% outputs '
        'unchanged', status.value, milp_cost, final_cost,
        100 * changes.unchanged_fraction)
    return HybridReport(
        status=status, schedule=schedule, milp=milp, ipm=ipm,
        milp_seconds=milp_seconds, ipm_seconds=ipm_seconds,
        milp_cost=milp_cost, final_cost=final_cost, changes=changes,
        audit=report, include_loss=include_loss)


def start_schedule(instance: Instance, strategy: str) -> Schedule:
    """Cold start of the single-step baseline.

    'flat-midpoint' runs every unit at the middle of its range.
    'proportional-to-demand' shares D_t - sum(p_min) in proportion to
    each unit's range.
    """
    p_min, p_max = instance.p_min[:, None], instance.p_max[:, None]
    n_periods = instance.n_periods
    if strategy == 'flat-midpoint':
        outputs = np.repeat(0.5 * (p_min + p_max), n_periods, axis=1)
    elif strategy == 'proportional-to-demand':
        span = p_max - p_min
        share = (instance.demand - p_min.sum()) / span.sum()
        outputs = p_min + span * share[None, :]
    else:
        raise ConfigurationError('Unknown start strategy {}'.format(strategy))
    return Schedule(outputs)


def solve_single_ipm(
        instance: Instance, ipm_config: IpmConfig = IpmConfig(),
        start_strategy: str = 'flat-midpoint',
        include_loss: Optional[bool] = None, reserve: bool = False,
        iteration_callback: Optional[IterationCallback] = None) -> IpmResult:
    """Solve the NLP directly from a cold start, without Step 1."""
    if include_loss is None:
        include_loss = instance.has_loss
    problem = build_nlp(instance, include_loss, reserve)
    return solve_nlp(problem, start_schedule(instance, start_strategy),
                     ipm_config, iteration_callback)
