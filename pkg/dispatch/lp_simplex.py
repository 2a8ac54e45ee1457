"""Bounded revised dual simplex for the LP relaxations of the MILP.

Rows become equalities through one logical column per row, A x - r = 0
with row_lower <= r <= row_upper, so every basis starts from the logical
basis B = -I. The solver works on a geometrically scaled copy of the
matrix with empty rows and columns removed, keeps the basis as scipy LU
factors plus product-form eta updates and runs the dual simplex with
bound flipping. A basis returned by one solve can warm start the next
after bound changes.
"""
from enum import Enum, IntEnum
import logging
from typing import \
    List, \
    NamedTuple, \
    Optional, \
    Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as splinalg

from dispatch.milp_builder import SparseLp


__log__ = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-7
OPTIMALITY_TOL = 1e-7
PIVOT_TOL = 1e-9
ZERO_TOL = 1e-12
DEGENERATE_STALL = 50
REFACTOR_INTERVAL = 50
ARTIFICIAL_BOUND = 1e7
SCALING_PASSES = 4
MAX_RETRIES = 3


class LpStatus(Enum):
    OPTIMAL = 'optimal'
    INFEASIBLE = 'infeasible'
    UNBOUNDED = 'unbounded'
    ITERATION_LIMIT = 'iteration-limit'


class VarStatus(IntEnum):
    BASIC = 0
    AT_LOWER = 1
    AT_UPPER = 2
    FREE = 3


class _Factor(object):
    """LU factors of a basis matrix and the eta file of later pivots."""
    def __init__(self, basis_matrix: sp.csc_matrix):
        self.lu = splinalg.splu(basis_matrix)
        self.etas = []  # type: List[Tuple[int, np.ndarray]]

    def copy(self) -> '_Factor':
        other = object.__new__(_Factor)
        other.lu = self.lu
        other.etas = list(self.etas)
        return other

    def ftran(self, rhs: np.ndarray) -> np.ndarray:
        """Solve B x = rhs."""
        x = self.lu.solve(rhs)
        for row, eta in self.etas:
            x += x[row] * eta
        return x

    def btran(self, rhs: np.ndarray) -> np.ndarray:
        """Solve B^T y = rhs."""
        y = rhs.copy()
        for row, eta in reversed(self.etas):
            y[row] += eta @ y
        return self.lu.solve(y, trans='T')

    def update(self, row: int, column: np.ndarray):
        """Replace basis column at row by a column with ftran image."""
        eta = -column / column[row]
        eta[row] += 1.0 / column[row]
        self.etas.append((row, eta))


class LpBasis(NamedTuple):
    """Basic head per row and status of every internal column.

    Internal columns are the kept structural columns followed by one
    logical per kept row. factor holds reusable LU factors of the basis
    for the solver whose token is owner.
    """
    head: np.ndarray
    status: np.ndarray
    factor: Optional[_Factor] = None
    owner: Optional[object] = None


class LpSolution(NamedTuple):
    status: LpStatus
    x: np.ndarray
    row_activity: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    objective: float
    iterations: int
    basis: Optional[LpBasis]


def _power_of_two(values: np.ndarray) -> np.ndarray:
    return np.exp2(np.round(np.log2(values)))


def geometric_scaling(matrix: sp.csc_matrix) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column factors equilibrating max*min of |a_ij| to one.

    Factors are powers of two so scaling introduces no rounding.
    """
    n_rows, n_cols = matrix.shape
    row_scale, col_scale = np.ones(n_rows), np.ones(n_cols)
    if matrix.nnz == 0:
        return row_scale, col_scale
    coo = matrix.tocoo()
    magnitude = np.abs(coo.data)
    for _ in range(SCALING_PASSES):
        scaled = magnitude * row_scale[coo.row] * col_scale[coo.col]
        row_max = np.zeros(n_rows)
        np.maximum.at(row_max, coo.row, scaled)
        row_min = np.full(n_rows, np.inf)
        np.minimum.at(row_min, coo.row, scaled)
        empty = row_max == 0
        row_scale[~empty] /= np.sqrt(row_max[~empty] * row_min[~empty])
        scaled = magnitude * row_scale[coo.row] * col_scale[coo.col]
        col_max = np.zeros(n_cols)
        np.maximum.at(col_max, coo.col, scaled)
        col_min = np.full(n_cols, np.inf)
        np.minimum.at(col_min, coo.col, scaled)
        empty = col_max == 0
        col_scale[~empty] /= np.sqrt(col_max[~empty] * col_min[~empty])
    return _power_of_two(row_scale), _power_of_two(col_scale)


class _State(object):
    """Mutable iterate of one solve in scaled internal space."""
    def __init__(self, lower, upper, head, status, factor):
        self.lower = lower
        self.upper = upper
        self.true_lower = lower.copy()
        self.true_upper = upper.copy()
        self.artificial = np.zeros(len(lower), dtype=bool)
        self.head = head
        self.status = status
        self.factor = factor
        self.x = np.zeros(len(lower))
        self.d = np.zeros(len(lower))
        self.iterations = 0
        self.degenerate_run = 0
        self.bland = False


class SimplexSolver(object):
    """Dual simplex bound to the matrix and costs of one SparseLp.

    Bounds are passed per solve, so one solver serves every node of a
    branch-and-bound tree. solve() keeps its state local and is safe to call
    from several threads.

    :param SparseLp lp: Program whose matrix, costs and row bounds are
        used.
    :param int max_iterations: Pivot limit per solve. Default scales with
        the problem size.
    """
    def __init__(self, lp: SparseLp, max_iterations: Optional[int] = None):
        self.lp = lp
        self.token = object()
        matrix = lp.matrix.tocsc()
        self.keep_rows = np.nonzero(np.diff(matrix.tocsr().indptr) > 0)[0]
        self.keep_cols = np.nonzero(np.diff(matrix.indptr) > 0)[0]
        reduced = matrix[self.keep_rows][:, self.keep_cols].tocsc()
        self.row_scale, self.col_scale = geometric_scaling(reduced)
        scaled = sp.diags(self.row_scale) @ reduced @ sp.diags(self.col_scale)
        self.n_rows, self.n_struct = scaled.shape
        self.full = sp.hstack(
            [scaled, -sp.identity(self.n_rows)], format='csc')
        self.full_t = self.full.T.tocsr()
        self.cost = np.concatenate([
            lp.objective[self.keep_cols] * self.col_scale,
            np.zeros(self.n_rows)])
        self.row_lower = lp.row_lower[self.keep_rows] * self.row_scale
        self.row_upper = lp.row_upper[self.keep_rows] * self.row_scale
        self.max_iterations = max_iterations or max(
            10000, 20 * (self.n_rows + self.n_struct))

    @property
    def n_total(self) -> int:
        return self.n_struct + self.n_rows

    def solve(
            self, col_lower: Optional[np.ndarray] = None,
            col_upper: Optional[np.ndarray] = None,
            warm: Optional[LpBasis] = None) -> LpSolution:
        """Solve the program under the given column bounds.

        :param np.ndarray col_lower: Column lower bounds, default lp's.
        :param np.ndarray col_upper: Column upper bounds, default lp's.
        :param LpBasis warm: Basis of an earlier solve to start from.
        :returns LpSolution: Result in the original, unscaled space.
        """
        lp = self.lp
        col_lower = lp.col_lower if col_lower is None else col_lower
        col_upper = lp.col_upper if col_upper is None else col_upper
        if np.any(col_lower > col_upper + FEASIBILITY_TOL) or np.any(
                lp.row_lower > lp.row_upper + FEASIBILITY_TOL):
            return self._empty_result(LpStatus.INFEASIBLE)
        empty_rows = np.ones(lp.n_rows, dtype=bool)
        empty_rows[self.keep_rows] = False
        if np.any(lp.row_lower[empty_rows] > FEASIBILITY_TOL) or np.any(
                lp.row_upper[empty_rows] < -FEASIBILITY_TOL):
            return self._empty_result(LpStatus.INFEASIBLE)

        removed_x, status = self._fix_empty_columns(col_lower, col_upper)
        if status is not LpStatus.OPTIMAL:
            return self._empty_result(status)
        if self.n_rows == 0:
            x = removed_x
            return LpSolution(
                LpStatus.OPTIMAL, x, lp.matrix @ x, np.zeros(lp.n_rows),
                lp.objective.copy(), float(lp.objective @ x)
                + lp.objective_constant, 0, None)

        lower = np.concatenate([
            col_lower[self.keep_cols] / self.col_scale, self.row_lower])
        upper = np.concatenate([
            col_upper[self.keep_cols] / self.col_scale, self.row_upper])
        state = self._initial_state(lower, upper, warm)
        status = self._run(state)
        return self._result(status, state, removed_x)

    def _fix_empty_columns(self, col_lower, col_upper):
        lp = self.lp
        x = np.zeros(lp.n_cols)
        empty = np.ones(lp.n_cols, dtype=bool)
        empty[self.keep_cols] = False
        for j in np.nonzero(empty)[0]:
            c = lp.objective[j]
            if c > 0 or (c == 0 and np.isfinite(col_lower[j])):
                x[j] = col_lower[j]
            elif c < 0 or np.isfinite(col_upper[j]):
                x[j] = col_upper[j]
            if not np.isfinite(x[j]):
                if c == 0:
                    x[j] = 0.0
                else:
                    return x, LpStatus.UNBOUNDED
        return x, LpStatus.OPTIMAL

    def _empty_result(self, status: LpStatus) -> LpSolution:
        lp = self.lp
        nan_cols = np.full(lp.n_cols, np.nan)
        return LpSolution(
            status, nan_cols, np.full(lp.n_rows, np.nan),
            np.full(lp.n_rows, np.nan), nan_cols.copy(),
            np.inf if status is LpStatus.INFEASIBLE else -np.inf, 0, None)

    def _logical_basis(self) -> Tuple[np.ndarray, np.ndarray]:
        head = np.arange(self.n_struct, self.n_total)
        status = np.full(self.n_total, VarStatus.AT_LOWER, dtype=np.int8)
        status[head] = VarStatus.BASIC
        return head, status

    def _initial_state(self, lower, upper, warm: Optional[LpBasis]) -> _State:
        factor = None
        if warm is not None and len(warm.head) == self.n_rows \
                and len(warm.status) == self.n_total:
            head, status = warm.head.copy(), warm.status.copy()
            if warm.factor is not None and warm.owner is self.token:
                factor = warm.factor.copy()
        else:
            head, status = self._logical_basis()
        state = _State(lower, upper, head, status, factor)
        if not self._refactor(state, recompute_factor=factor is None):
            __log__.warning('Warm basis is singular, restarting from logicals')
            state.head, state.status = self._logical_basis()
            self._refactor(state)
        return state

    def _place_nonbasic(self, state: _State):
        """Put nonbasic columns on the bound their reduced cost asks for."""
        nonbasic = state.status != VarStatus.BASIC
        d, lower, upper = state.d, state.true_lower, state.true_upper
        want_upper = nonbasic & (d < -OPTIMALITY_TOL)
        want_lower = nonbasic & (d > OPTIMALITY_TOL)
        keep = nonbasic & ~want_upper & ~want_lower
        status = state.status
        status[want_upper] = VarStatus.AT_UPPER
        status[want_lower] = VarStatus.AT_LOWER
        # near-zero reduced cost: stay on a finite side
        stay_lower = keep & (status == VarStatus.AT_LOWER)
        stay_upper = keep & (status == VarStatus.AT_UPPER)
        status[stay_lower & ~np.isfinite(lower) & np.isfinite(upper)] = \
            VarStatus.AT_UPPER
        status[stay_upper & ~np.isfinite(upper) & np.isfinite(lower)] = \
            VarStatus.AT_LOWER
        free = keep & ~np.isfinite(lower) & ~np.isfinite(upper)
        status[free] = VarStatus.FREE

        state.lower, state.upper = lower.copy(), upper.copy()
        state.artificial[:] = False
        at_lower = status == VarStatus.AT_LOWER
        at_upper = status == VarStatus.AT_UPPER
        box_low = at_lower & ~np.isfinite(lower)
        box_up = at_upper & ~np.isfinite(upper)
        state.lower[box_low] = -ARTIFICIAL_BOUND
        state.upper[box_up] = ARTIFICIAL_BOUND
        state.artificial[box_low | box_up] = True

        x = state.x
        x[at_lower] = state.lower[at_lower]
        x[at_upper] = state.upper[at_upper]
        x[status == VarStatus.FREE] = 0.0

    def _refactor(self, state: _State, recompute_factor: bool = True) -> bool:
        """Refactor the basis and recompute primal and dual values."""
        if recompute_factor:
            try:
                state.factor = _Factor(self.full[:, state.head].tocsc())
            except RuntimeError as error:
                __log__.debug('Basis factorisation failed: %s', error)
                return False
        y = state.factor.btran(self.cost[state.head])
        state.d = self.cost - self.full_t @ y
        state.d[state.head] = 0.0
        self._place_nonbasic(state)
        self._compute_basic(state)
        return True

    def _compute_basic(self, state: _State):
        x = state.x
        x[state.head] = 0.0
        x[state.head] = state.factor.ftran(-(self.full @ x))

    def _run(self, state: _State) -> LpStatus:
        retries = 0
        while True:
            if state.iterations >= self.max_iterations:
                __log__.warning(
                    'Simplex stopped after %d iterations', state.iterations)
                return LpStatus.ITERATION_LIMIT
            if len(state.factor.etas) >= REFACTOR_INTERVAL:
                if not self._refactor(state):
                    return LpStatus.ITERATION_LIMIT
            outcome = self._iterate(state)
            if outcome is None:
                retries = 0
                continue
            if outcome == 'retry':
                retries += 1
                if retries > MAX_RETRIES or not self._refactor(state):
                    __log__.warning(
                        'Numerical breakdown after %d iterations',
                        state.iterations)
                    return LpStatus.ITERATION_LIMIT
                continue
            if outcome is LpStatus.OPTIMAL and np.any(
                    state.artificial & (state.status != VarStatus.BASIC)
                    & (np.abs(state.d) > OPTIMALITY_TOL)):
                return LpStatus.UNBOUNDED
            return outcome

    def _leaving_row(self, state: _State) -> Tuple[int, float]:
        xb = state.x[state.head]
        lower = state.lower[state.head]
        upper = state.upper[state.head]
        tol_low = FEASIBILITY_TOL * (1 + np.abs(np.where(
            np.isfinite(lower), lower, 0)))
        tol_up = FEASIBILITY_TOL * (1 + np.abs(np.where(
            np.isfinite(upper), upper, 0)))
        infeasibility = np.where(
            xb < lower - tol_low, xb - lower,
            np.where(xb > upper + tol_up, xb - upper, 0.0))
        rows = np.nonzero(infeasibility)[0]
        if len(rows) == 0:
            return -1, 0.0
        if state.bland:
            row = rows[np.argmin(state.head[rows])]
        else:
            row = rows[np.argmax(np.abs(infeasibility[rows]))]
        return int(row), float(infeasibility[row])

    def _entering(self, state: _State, alpha: np.ndarray, slope: float):
        """Bound flipping ratio test.

        :returns: (entering column or -1, dual step, flipped columns)
        """
        status, d = state.status, state.d
        at_lower = status == VarStatus.AT_LOWER
        at_upper = status == VarStatus.AT_UPPER
        free = status == VarStatus.FREE
        candidates = np.nonzero(
            (at_lower & (alpha < -ZERO_TOL)) | (at_upper & (alpha > ZERO_TOL))
            | (free & (np.abs(alpha) > ZERO_TOL)))[0]
        if len(candidates) == 0:
            return -1, 0.0, []
        ratios = np.where(
            free[candidates], np.abs(d[candidates]),
            np.maximum(-d[candidates] / alpha[candidates], 0.0))
        ratios[free[candidates]] /= np.abs(alpha[candidates][
            free[candidates]])
        order = np.lexsort((candidates, ratios))
        width = state.upper - state.lower
        flipped = []
        for position, k in enumerate(order):
            j = candidates[k]
            step = abs(alpha[j]) * width[j]
            if not state.bland and not free[j] and np.isfinite(step) \
                    and slope - step > 0:
                flipped.append(j)
                slope -= step
                continue
            break
        else:
            return -1, 0.0, flipped
        remaining = order[position:]
        ratio = ratios[order[position]]
        window = remaining[ratios[remaining] <= ratio + OPTIMALITY_TOL
                           / np.maximum(np.abs(alpha[candidates[remaining]]),
                                        1.0)]
        if state.bland:
            chosen = candidates[window[np.argmin(candidates[window])]]
        else:
            chosen = candidates[window[np.argmax(
                np.abs(alpha[candidates[window]]))]]
        return int(chosen), float(ratios[np.nonzero(
            candidates == chosen)[0][0]]), flipped

    def _iterate(self, state: _State):
        """One dual simplex pivot.

        :returns: None to continue, 'retry' on numerical trouble, or the
            final LpStatus.
        """
        row, infeasibility = self._leaving_row(state)
        if row < 0:
            return LpStatus.OPTIMAL
        leaving = state.head[row]
        to_lower = infeasibility < 0
        unit = np.zeros(self.n_rows)
        unit[row] = 1.0
        rho = state.factor.btran(unit)
        alpha = self.full_t @ rho
        if not to_lower:
            alpha = -alpha
        alpha[state.head] = 0.0
        entering, step, flipped = self._entering(
            state, alpha, abs(infeasibility))
        if entering < 0:
            return LpStatus.INFEASIBLE

        column = state.factor.ftran(self.full[:, entering].toarray().ravel())
        pivot = column[row]
        expected = alpha[entering] if to_lower else -alpha[entering]
        if abs(pivot) < PIVOT_TOL or abs(pivot - expected) > 1e-6 * (
                1 + abs(pivot)):
            __log__.debug(
                'Unstable pivot %.3g (row form %.3g), refactoring', pivot,
                expected)
            return 'retry'

        state.d += step * alpha
        state.d[entering] = 0.0
        state.d[leaving] = step if to_lower else -step
        if flipped:
            self._flip(state, np.array(flipped))

        target = state.lower[leaving] if to_lower else state.upper[leaving]
        theta = (state.x[leaving] - target) / pivot
        state.x[state.head] -= theta * column
        state.x[entering] += theta
        state.x[leaving] = target

        state.head[row] = entering
        state.status[entering] = VarStatus.BASIC
        state.status[leaving] = VarStatus.AT_LOWER if to_lower \
            else VarStatus.AT_UPPER
        if state.artificial[entering]:
            state.lower[entering] = state.true_lower[entering]
            state.upper[entering] = state.true_upper[entering]
            state.artificial[entering] = False
        state.factor.update(row, column)
        state.iterations += 1

        if step <= ZERO_TOL:
            state.degenerate_run += 1
            if state.degenerate_run >= DEGENERATE_STALL and not state.bland:
                __log__.debug(
                    'Switching to Bland rule after %d degenerate pivots',
                    state.degenerate_run)
                state.bland = True
        else:
            state.degenerate_run = 0
            state.bland = False
        return None

    def _flip(self, state: _State, flipped: np.ndarray):
        to_upper = flipped[state.status[flipped] == VarStatus.AT_LOWER]
        to_lower = flipped[state.status[flipped] == VarStatus.AT_UPPER]
        delta = np.zeros(self.n_total)
        delta[to_upper] = state.upper[to_upper] - state.x[to_upper]
        delta[to_lower] = state.lower[to_lower] - state.x[to_lower]
        state.x[to_upper] = state.upper[to_upper]
        state.x[to_lower] = state.lower[to_lower]
        state.status[to_upper] = VarStatus.AT_UPPER
        state.status[to_lower] = VarStatus.AT_LOWER
        state.x[state.head] -= state.factor.ftran(self.full @ delta)

    def _result(self, status: LpStatus, state: _State,
                removed_x: np.ndarray) -> LpSolution:
        lp = self.lp
        x = removed_x.copy()
        x[self.keep_cols] = state.x[:self.n_struct] * self.col_scale
        y_scaled = state.factor.btran(self.cost[state.head])
        duals = np.zeros(lp.n_rows)
        duals[self.keep_rows] = y_scaled * self.row_scale
        reduced = lp.objective - lp.matrix.T @ duals
        objective = float(lp.objective @ x) + lp.objective_constant
        basis = LpBasis(
            state.head.copy(), state.status.copy(), state.factor, self.token)
        if status is not LpStatus.OPTIMAL:
            __log__.debug('LP ended %s after %d iterations', status.value,
                          state.iterations)
            if status is LpStatus.INFEASIBLE:
                objective = np.inf
            elif status is LpStatus.UNBOUNDED:
                objective = -np.inf
        return LpSolution(
            status, x, lp.matrix @ x, duals, reduced, objective,
            state.iterations, basis)


def solve_lp(lp: SparseLp, warm: Optional[LpBasis] = None) -> LpSolution:
    """Solve a bounded LP, ignoring integrality marks.

    :param SparseLp lp: Program with consistent bounds.
    :param LpBasis warm: Optional basis of an earlier solve of a program
        with the same matrix.
    :returns LpSolution: Status, primal and dual values.
    """
    return SimplexSolver(lp).solve(warm=warm)


def reoptimize_after_bound_change(
        lp: SparseLp, basis: LpBasis, column: int, lower: float,
        upper: float) -> LpSolution:
    """Re-solve lp from an optimal basis after changing one column's bounds.

    The parent basis stays dual feasible, so the dual simplex continues
    from it.
    """
    col_lower = lp.col_lower.copy()
    col_upper = lp.col_upper.copy()
    col_lower[column], col_upper[column] = lower, upper
    return solve_lp(lp.with_col_bounds(col_lower, col_upper), warm=basis)
