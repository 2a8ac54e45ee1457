"""LP-based branch-and-bound on the segment binaries of a MilpModel.

Nodes are kept as bound changes relative to the root and solved with the
dual simplex, warm started from the parent basis. The tree is explored
depth first until a first incumbent exists and best bound afterwards.
Incumbents come from rounding relaxations onto the chords holding their
outputs, followed by an LP over the continuous columns with those chords
fixed. The child keeping the chord of the relaxed output is dived first.
"""
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
import heapq
import logging
import time
from typing import \
    Callable, \
    List, \
    NamedTuple, \
    Optional, \
    Sequence, \
    Tuple

import numpy as np

from dispatch.cost import SegmentTable
from dispatch.lp_simplex import \
    LpBasis, \
    LpSolution, \
    LpStatus, \
    SimplexSolver
from dispatch.milp_builder import \
    MilpModel, \
    choose_segment, \
    decode, \
    encode, \
    is_integral, \
    max_violation, \
    objective_value
from dispatch.model import \
    ConfigurationError, \
    Schedule


__log__ = logging.getLogger(__name__)

BRANCHING_RULES = ['most-fractional']
NODE_SELECTIONS = ['best-bound-plunge', 'best-bound', 'depth-first']
FEASIBILITY_TOL = 1e-6
HEURISTIC_FREQUENCY = 10
TIE_TOL = 1e-9

ProgressCallback = Callable[[int, float, float, float], None]


class BnbStatus(Enum):
    GAP_REACHED = 'gap-reached'
    OPTIMAL = 'proven-optimal'
    LIMIT = 'limit'
    INFEASIBLE = 'infeasible'


class BnbConfig(NamedTuple):
    """Termination and search settings of solve_milp.

    :param float rel_gap: Stop once (incumbent - bound) / max(|incumbent|, 1)
        is at most this.
    :param float abs_gap: Stop once incumbent - bound is at most this, in $.
    :param int node_limit: Most nodes to solve, None for no limit.
    :param float time_limit: Most seconds to run, None for no limit.
    :param str branching: Branching rule, see BRANCHING_RULES.
    :param str node_selection: Node order, see NODE_SELECTIONS.
    :param float int_tol: Largest distance to an integer still integral.
    :param int threads: Nodes solved concurrently per round.
    :param bool heuristic: Whether to run the rounding heuristic.
    """
    rel_gap: float = 0.003
    abs_gap: float = 0.0
    node_limit: Optional[int] = None
    time_limit: Optional[float] = None
    branching: str = 'most-fractional'
    node_selection: str = 'best-bound-plunge'
    int_tol: float = 1e-6
    threads: int = 1
    heuristic: bool = True

    def check(self):
        """Raise ConfigurationError for settings solve_milp rejects."""
        if self.rel_gap < 0 or self.abs_gap < 0:
            raise ConfigurationError('Gaps must not be negative')
        if self.node_limit is not None and self.node_limit <= 0:
            raise ConfigurationError('Node limit must be positive')
        if self.time_limit is not None and self.time_limit <= 0:
            raise ConfigurationError('Time limit must be positive')
        if self.branching not in BRANCHING_RULES:
            raise ConfigurationError(
                'Unknown branching rule {}'.format(self.branching))
        if self.node_selection not in NODE_SELECTIONS:
            raise ConfigurationError(
                'Unknown node selection {}'.format(self.node_selection))
        if not 0 < self.int_tol < 0.5:
            raise ConfigurationError(
                'Integrality tolerance must be in (0, 0.5)')
        if self.threads < 1:
            raise ConfigurationError('At least one thread is required')


class BnbResult(NamedTuple):
    status: BnbStatus
    schedule: Optional[Schedule]
    objective: float
    bound: float
    gap: float
    nodes: int
    x: Optional[np.ndarray]
    elapsed: float
    lp_iterations: int


class _Node(NamedTuple):
    bound: float
    depth: int
    changes: Tuple[Tuple[int, float, float], ...]
    basis: Optional[LpBasis]


def relative_gap(incumbent: float, bound: float) -> float:
    """Gap (incumbent - bound) / max(|incumbent|, 1), inf without incumbent.

    >>> relative_gap(100.0, 99.0)
    0.01
    """
    if not np.isfinite(incumbent):
        return np.inf
    return max(0.0, (incumbent - bound) / max(abs(incumbent), 1.0))


def _segment_spread(model: MilpModel) -> np.ndarray:
    """Per column, the slope range of its unit's chords, 0 off the binaries."""
    spread = np.zeros(model.lp.n_cols)
    for table, columns in zip(model.tables, model.z_columns):
        if table.n_segments:
            spread[columns] = table.slopes.max() - table.slopes.min()
    return spread


def _binary_cells(model: MilpModel) -> np.ndarray:
    """Per column, (unit, chord, period) of a binary, -1 elsewhere."""
    cells = np.full((model.lp.n_cols, 3), -1, dtype=int)
    for i, columns in enumerate(model.z_columns):
        for l, row in enumerate(columns):
            cells[row] = np.stack([
                np.full(len(row), i), np.full(len(row), l),
                np.arange(len(row))], axis=1)
    return cells


def _chord_span(table: SegmentTable, p: float) -> Tuple[float, float]:
    """Outputs covered by the chord holding p and its two neighbours."""
    l = choose_segment(table, p)
    return (table.breakpoints[max(l - 1, 0)],
            table.breakpoints[min(l + 2, table.n_segments)])


def _next_chord(table: SegmentTable, p: float,
                raising: bool) -> Tuple[float, float]:
    """Slope of the chord entered when p moves, and its far breakpoint."""
    points = table.breakpoints
    if raising:
        l = min(int(np.searchsorted(points, p, side='right')) - 1,
                table.n_segments - 1)
        return table.slopes[l], points[l + 1]
    l = max(int(np.searchsorted(points, p, side='left')) - 1, 0)
    return table.slopes[l], points[l]


def _rebalance(tables: Sequence[SegmentTable], outputs: np.ndarray,
               low: np.ndarray, high: np.ndarray, deficit: float) -> float:
    """Shift outputs inside [low, high] to cover deficit, one chord at a
    time and cheapest slope first.

    :returns: The part of deficit that could not be covered.
    """
    while abs(deficit) > FEASIBILITY_TOL:
        raising = deficit > 0
        chosen, chosen_slope, chosen_step = None, 0.0, 0.0
        for i, table in enumerate(tables):
            if table.n_segments == 0:
                continue
            p = outputs[i]
            room = high[i] - p if raising else p - low[i]
            if room <= 0:
                continue
            slope, end = _next_chord(table, p, raising)
            step = min(room, abs(end - p), abs(deficit))
            if step <= 0:
                continue
            if chosen is None or (slope < chosen_slope if raising
                                  else slope > chosen_slope):
                chosen, chosen_slope, chosen_step = i, slope, step
        if chosen is None:
            break
        outputs[chosen] += chosen_step if raising else -chosen_step
        deficit += -chosen_step if raising else chosen_step
    return deficit


def primal_heuristic_round(
        model: MilpModel, x: np.ndarray) -> Optional[Schedule]:
    """Round a relaxation solution to a MILP-feasible schedule.

    Each output keeps its relaxed value, clipped into a window made of the
    chord holding it, the two adjacent chords and the ramp limits from the
    rounded previous period. The balance is then restored period by
    period, moving one chord at a time along the cheapest slope. Chords
    follow the rounded outputs.

    :param MilpModel model: Model the relaxation belongs to.
    :param np.ndarray x: Relaxation solution vector.
    :returns: Schedule, or None if the repair fails.
    """
    instance = model.instance
    n_units, n_periods = model.p_columns.shape
    relaxed = x[model.p_columns]
    outputs = np.zeros((n_units, n_periods))
    for t in range(n_periods):
        low, high = np.zeros(n_units), np.zeros(n_units)
        for i, (unit, table) in enumerate(zip(instance.units, model.tables)):
            if table.n_segments == 0:
                outputs[i, t] = low[i] = high[i] = unit.p_min
                continue
            p = float(np.clip(relaxed[i, t], unit.p_min, unit.p_max))
            low[i], high[i] = _chord_span(table, p)
            previous = outputs[i, t - 1] if t else unit.initial_output
            if previous is not None:
                low[i] = max(low[i], previous - unit.ramp_down)
                high[i] = min(high[i], previous + unit.ramp_up)
            if low[i] > high[i] + FEASIBILITY_TOL:
                __log__.debug('Ramp window of unit %d is empty in period %d',
                              i + 1, t + 1)
                return None
            high[i] = max(high[i], low[i])
            outputs[i, t] = min(max(p, low[i]), high[i])
        left = _rebalance(model.tables, outputs[:, t], low, high,
                          instance.demand[t] - outputs[:, t].sum())
        if abs(left) > FEASIBILITY_TOL:
            __log__.debug('Rounding cannot balance period %d', t + 1)
            return None
    schedule = Schedule(outputs)
    if not _milp_feasible(model, encode(model, schedule)):
        return None
    return schedule


def _milp_feasible(model: MilpModel, x: np.ndarray,
                   int_tol: float = FEASIBILITY_TOL) -> bool:
    return max_violation(model.lp, x) <= FEASIBILITY_TOL and is_integral(
        model.lp, x, int_tol)


class BranchAndBound(object):
    """Search state of one solve_milp call."""
    def __init__(self, model: MilpModel, config: BnbConfig,
                 progress: Optional[ProgressCallback] = None):
        self.model = model
        self.config = config
        self.progress = progress
        self.solver = SimplexSolver(model.lp)
        self.spread = _segment_spread(model)
        self.binaries = np.nonzero(model.lp.integrality)[0]
        self.cells = _binary_cells(model)
        self.stack = []  # type: List[Tuple[int, _Node]]
        self.heap = []  # type: List[Tuple[float, int, _Node]]
        self.sequence = 0
        self.incumbent = None  # type: Optional[np.ndarray]
        self.incumbent_objective = np.inf
        self.bound = -np.inf
        self.unresolved_bound = np.inf
        self.nodes = 0
        self.lp_iterations = 0
        self.start = time.monotonic()

    @property
    def elapsed(self) -> float:
        return time.monotonic() - self.start

    @property
    def diving(self) -> bool:
        selection = self.config.node_selection
        return selection == 'depth-first' or (
            selection == 'best-bound-plunge' and self.incumbent is None)

    @property
    def n_open(self) -> int:
        return len(self.stack) + len(self.heap)

    def _push(self, node: _Node):
        self.sequence += 1
        if self.diving:
            self.stack.append((self.sequence, node))
        else:
            heapq.heappush(self.heap, (node.bound, self.sequence, node))

    def _select(self, count: int) -> List[_Node]:
        if not self.diving and self.stack:
            for sequence, node in self.stack:
                heapq.heappush(self.heap, (node.bound, sequence, node))
            self.stack = []
        selected = []
        while len(selected) < count and self.n_open:
            if self.stack:
                selected.append(self.stack.pop()[1])
            else:
                selected.append(heapq.heappop(self.heap)[2])
        return selected

    def open_bound(self) -> float:
        bounds = [node.bound for _, node in self.stack]
        if self.heap:
            bounds.append(self.heap[0][0])
        return min(bounds + [self.unresolved_bound])

    def _update_bound(self, processing: List[_Node] = ()):
        bound = min([self.open_bound()] + [n.bound for n in processing])
        if not np.isfinite(bound):
            bound = self.incumbent_objective
        self.bound = max(self.bound, min(bound, self.incumbent_objective))

    def _node_bounds(self, node: _Node) -> Tuple[np.ndarray, np.ndarray]:
        lower = self.model.lp.col_lower.copy()
        upper = self.model.lp.col_upper.copy()
        for column, low, high in node.changes:
            lower[column], upper[column] = low, high
        return lower, upper

    def _evaluate(self, node: _Node) -> LpSolution:
        lower, upper = self._node_bounds(node)
        return self.solver.solve(lower, upper, warm=node.basis)

    def _offer(self, x: np.ndarray, source: str) -> bool:
        objective = objective_value(self.model.lp, x)
        if objective >= self.incumbent_objective:
            return False
        self.incumbent, self.incumbent_objective = x.copy(), objective
        __log__.debug('New incumbent %.6f from %s at node %d', objective,
                      source, self.nodes)
        return True

    def _try_heuristic(self, x: np.ndarray):
        schedule = primal_heuristic_round(self.model, x)
        if schedule is None:
            return
        candidate = encode(self.model, schedule)
        self._offer(candidate, 'rounding')
        self._fix_and_resolve(candidate)

    def _fix_and_resolve(self, candidate: np.ndarray):
        """Reoptimise the continuous columns with the chords of candidate
        fixed.
        """
        lp = self.model.lp
        lower, upper = lp.col_lower.copy(), lp.col_upper.copy()
        lower[self.binaries] = upper[self.binaries] = np.round(
            candidate[self.binaries])
        result = self.solver.solve(lower, upper)
        self.lp_iterations += result.iterations
        if result.status is not LpStatus.OPTIMAL:
            return
        x = result.x.copy()
        x[self.binaries] = np.round(x[self.binaries])
        if max_violation(lp, x) <= FEASIBILITY_TOL:
            self._offer(x, 'fixed chords')

    def _branch_column(self, x: np.ndarray) -> int:
        values = x[self.binaries]
        distance = np.abs(values - np.round(values))
        fractional = distance > self.config.int_tol
        columns = self.binaries[fractional]
        score = np.round(distance[fractional] / TIE_TOL)
        order = np.lexsort((columns, -self.spread[columns], -score))
        return int(columns[order[0]])

    def _process(self, node: _Node, result: LpSolution):
        self.nodes += 1
        self.lp_iterations += result.iterations
        if result.status is LpStatus.INFEASIBLE:
            return
        if result.status is not LpStatus.OPTIMAL:
            __log__.warning('Node LP ended %s, keeping its bound %.6f',
                            result.status.value, node.bound)
            self.unresolved_bound = min(self.unresolved_bound, node.bound)
            return
        bound = max(result.objective, node.bound)
        cutoff = self.incumbent_objective - TIE_TOL * max(
            1.0, abs(self.incumbent_objective))
        if bound >= cutoff:
            return
        x = result.x
        if is_integral(self.model.lp, x, self.config.int_tol):
            snapped = x.copy()
            snapped[self.binaries] = np.round(snapped[self.binaries])
            if max_violation(self.model.lp, snapped) <= FEASIBILITY_TOL:
                self._offer(snapped, 'relaxation')
            else:
                self._offer(x, 'relaxation')
            return
        if self.config.heuristic and (self.incumbent is None or (
                self.nodes % HEURISTIC_FREQUENCY == 0)):
            self._try_heuristic(x)

        column = self._branch_column(x)
        lower, upper = self._node_bounds(node)
        # open nodes keep only head and statuses, children refactor
        basis = result.basis._replace(factor=None)
        down = _Node(bound, node.depth + 1,
                     node.changes + ((column, lower[column], 0.0),),
                     basis)
        up = _Node(bound, node.depth + 1,
                   node.changes + ((column, 1.0, upper[column]),),
                   basis)
        # the child pushed last is dived into first
        if self._keeps_relaxed_output(column, x):
            self._push(down)
            self._push(up)
        else:
            self._push(up)
            self._push(down)

    def _keeps_relaxed_output(self, column: int, x: np.ndarray) -> bool:
        """Whether column is the binary of the chord holding the relaxed
        output of its cell.
        """
        i, l, t = self.cells[column]
        if i < 0:
            return x[column] >= 0.5
        output = x[self.model.p_columns[i, t]]
        return choose_segment(self.model.tables[i], output) == l

    def _limit_reached(self) -> bool:
        config = self.config
        if config.node_limit is not None and self.nodes >= config.node_limit:
            return True
        return config.time_limit is not None \
            and self.elapsed >= config.time_limit

    def _gap_closed(self) -> bool:
        if self.incumbent is None:
            return False
        gap = relative_gap(self.incumbent_objective, self.bound)
        return gap <= self.config.rel_gap \
            or self.incumbent_objective - self.bound <= self.config.abs_gap

    def run(self) -> BnbResult:
        self._push(_Node(-np.inf, 0, (), None))
        executor = None
        if self.config.threads > 1:
            executor = ThreadPoolExecutor(max_workers=self.config.threads)
        try:
            status = self._loop(executor)
        finally:
            if executor is not None:
                executor.shutdown()
        return self._result(status)

    def _loop(self, executor: Optional[ThreadPoolExecutor]) -> BnbStatus:
        while self.n_open:
            if self._limit_reached():
                self._update_bound()
                return BnbStatus.LIMIT
            batch = self._select(self.config.threads)
            if executor is None:
                results = [self._evaluate(node) for node in batch]
            else:
                results = list(executor.map(self._evaluate, batch))
            for node, result in zip(batch, results):
                self._process(node, result)
            self._update_bound()
            if self.progress is not None:
                self.progress(self.nodes, self.bound,
                              self.incumbent_objective, self.elapsed)
            if self._gap_closed() and self.n_open:
                if self.bound >= self.incumbent_objective:
                    return BnbStatus.OPTIMAL
                return BnbStatus.GAP_REACHED
        if self.incumbent is None:
            return BnbStatus.INFEASIBLE if not np.isfinite(
                self.unresolved_bound) else BnbStatus.LIMIT
        if np.isfinite(self.unresolved_bound):
            self.bound = max(self.bound, min(
                self.unresolved_bound, self.incumbent_objective))
            return BnbStatus.GAP_REACHED if self._gap_closed() \
                else BnbStatus.LIMIT
        self.bound = self.incumbent_objective
        return BnbStatus.OPTIMAL

    def _result(self, status: BnbStatus) -> BnbResult:
        schedule = None
        if self.incumbent is not None:
            schedule = decode(self.model, self.incumbent)
        gap = relative_gap(self.incumbent_objective, self.bound)
        __log__.info(
            'Branch and bound %s after %d nodes in %.1f s: incumbent %.4f, '
            'bound %.4f, gap %.4g', status.value, self.nodes, self.elapsed,
            self.incumbent_objective, self.bound, gap)
        return BnbResult(
            status=status, schedule=schedule,
            objective=self.incumbent_objective, bound=self.bound, gap=gap,
            nodes=self.nodes, x=self.incumbent, elapsed=self.elapsed,
            lp_iterations=self.lp_iterations)


def solve_milp(
        model: MilpModel, config: BnbConfig = BnbConfig(),
        progress: Optional[ProgressCallback] = None) -> BnbResult:
    """Solve a MILP to the configured gap.

    :param MilpModel model: Model built by build_milp.
    :param BnbConfig config: Gap, limits and search settings.
    :param progress: Called after every round with (nodes, bound,
        incumbent objective, elapsed seconds).
    :returns BnbResult: Incumbent with its decoded schedule, best bound and
        status.
    :raises ConfigurationError: for invalid settings.
    """
    config.check()
    return BranchAndBound(model, config, progress).run()
