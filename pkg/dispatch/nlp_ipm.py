"""Smooth NLP of the dispatch problem and a primal-dual interior-point solver.

The rectified sine of the valve-point cost is replaced by a magnitude
variable s with s - u - v = 0 and sin(f*(P - p_min)) + u - v = 0 for
u, v >= 0. Minimising e*s drives s to |sin| at a solution, which makes
every function smooth. Ramp limits and reserve capacity are turned into
equalities with bounded slack columns, so the program reads

    min f(x)  s.t.  c(x) = 0,  x_L <= x <= x_U

and is solved by a barrier method on the bounds: Newton steps on the
primal-dual equations, inertia-corrected symmetric indefinite
factorisation of the KKT matrix, fraction-to-boundary step caps and an
l1 exact-penalty merit line search.
"""
from enum import Enum
import logging
from typing import \
    Callable, \
    NamedTuple, \
    Optional, \
    Tuple

import numpy as np
import scipy.linalg as linalg
import scipy.sparse as sp

from dispatch import cost
from dispatch.model import \
    ConfigurationError, \
    Instance, \
    Schedule


__log__ = logging.getLogger(__name__)

MU_STRATEGIES = ['monotone', 'adaptive']
KAPPA_EPSILON = 10.0
MU_SUPERLINEAR = 1.5
ARMIJO = 1e-4
MIN_STEP = 1e-12
PENALTY_MARGIN = 1.1
MAX_GRADIENT = 100.0
MULTIPLIER_INIT_MAX = 1e3
SCALING_THRESHOLD = 100.0
Z_SAFEGUARD = 1e10
DELTA_W_INITIAL = 1e-8
DELTA_W_MAX = 1e40
DELTA_C = 1e-8
DEGENERATE_BOUND = 1e-8
PENALTY_RHO = 0.1
ACCEPTABLE_TOL = 1e-6
MAX_STALLS = 8

IterationCallback = Callable[[int, float, float, float, float], None]


class IpmStatus(Enum):
    LOCAL_OPTIMUM = 'local-optimum'
    MAX_ITER = 'max-iter'
    RESTORATION_FAILURE = 'restoration-failure'


class IpmConfig(NamedTuple):
    """Settings of solve_nlp.

    :param str mu_strategy: 'monotone' lowers mu by mu_decrease once the
        barrier problem is solved, 'adaptive' sets mu from the average
        complementarity every iteration.
    :param float initial_mu: Barrier parameter of the first iteration.
    :param float mu_decrease: Factor of the monotone barrier update.
    :param float tol: Scaled KKT residual to stop at.
    :param float compl_tol: Unscaled complementarity to stop at.
    :param int max_iter: Most Newton iterations.
    :param float tau_min: Fraction-to-boundary parameter.
    :param float slack_floor: Smallest distance of a starting value to its
        bounds.
    """
    mu_strategy: str = 'monotone'
    initial_mu: float = 0.1
    mu_decrease: float = 0.2
    tol: float = 1e-8
    compl_tol: float = 1e-8
    max_iter: int = 500
    tau_min: float = 0.995
    slack_floor: float = 1e-2

    def check(self):
        """Raise ConfigurationError for settings solve_nlp rejects."""
        if self.mu_strategy not in MU_STRATEGIES:
            raise ConfigurationError(
                'Unknown barrier strategy {}'.format(self.mu_strategy))
        for name in ['initial_mu', 'tol', 'compl_tol', 'slack_floor']:
            if not getattr(self, name) > 0:
                raise ConfigurationError('{} must be positive'.format(name))
        if not 0 < self.mu_decrease < 1:
            raise ConfigurationError('mu_decrease must lie in (0, 1)')
        if not 0 < self.tau_min < 1:
            raise ConfigurationError('tau_min must lie in (0, 1)')
        if self.max_iter < 0:
            raise ConfigurationError('max_iter must not be negative')


class IpmResult(NamedTuple):
    """Outcome of solve_nlp.

    s, u and v have shape (N, T). Cells without a sine block hold the
    values the block would have at the schedule.
    """
    status: IpmStatus
    schedule: Schedule
    objective: float
    s: np.ndarray
    u: np.ndarray
    v: np.ndarray
    primal_infeasibility: float
    dual_infeasibility: float
    complementarity: float
    iterations: int
    x: np.ndarray
    multipliers: np.ndarray


class NlpProblem(object):
    """Variables, residuals and derivatives of the smooth dispatch NLP.

    Columns are, in order: P per period and non-fixed unit, (s, u, v) per
    cell of a unit with ripple, one ramp slack w per ramp row, and with
    reserve the reserve SR, headroom slack q per non-fixed cell and a
    surplus slack per period. Rows are the period balances, the s rows,
    the sine rows, the ramp rows and the reserve rows.
    """
    def __init__(self, instance: Instance, include_loss: bool = True,
                 reserve: bool = False):
        self.instance = instance
        self.include_loss = include_loss
        self.reserve = reserve
        units = instance.units
        n_units, n_periods = instance.n_units, instance.n_periods
        self.free = np.array(
            [i for i, unit in enumerate(units) if not unit.is_fixed],
            dtype=int)
        self.fixed = np.array(
            [i for i, unit in enumerate(units) if unit.is_fixed], dtype=int)
        self.alpha = np.array([unit.alpha for unit in units])
        self.beta = np.array([unit.beta for unit in units])
        self.gamma = np.array([unit.gamma for unit in units])
        self.e = np.array([unit.e for unit in units])
        self.f = np.array([unit.f for unit in units])
        self.p_min = instance.p_min
        self.p_max = instance.p_max
        self.b_sym = None
        if include_loss:
            self.b_sym = 0.5 * (instance.b_matrix + instance.b_matrix.T)

        lower, upper = [], []
        self.p_index = np.full((n_units, n_periods), -1, dtype=int)
        for t in range(n_periods):
            for i in self.free:
                self.p_index[i, t] = len(lower)
                lower.append(units[i].p_min)
                upper.append(units[i].p_max)

        cells = [(i, t) for t in range(n_periods) for i in self.free
                 if units[i].has_ripple]
        self.ripple_unit = np.array([i for i, _ in cells], dtype=int)
        self.ripple_period = np.array([t for _, t in cells], dtype=int)
        first = len(lower)
        self.s_index = first + 3 * np.arange(len(cells), dtype=int)
        self.u_index = self.s_index + 1
        self.v_index = self.s_index + 2
        for _ in cells:
            lower += [-np.inf, 0.0, 0.0]
            upper += [np.inf, np.inf, np.inf]

        ramps = []
        for i in self.free:
            if units[i].initial_output is not None:
                ramps.append((i, 0))
            ramps += [(i, t) for t in range(1, n_periods)]
        self.ramp_unit = np.array([i for i, _ in ramps], dtype=int)
        self.ramp_period = np.array([t for _, t in ramps], dtype=int)
        self.initial = np.array([
            np.nan if unit.initial_output is None else unit.initial_output
            for unit in units])
        self.w_index = len(lower) + np.arange(len(ramps), dtype=int)
        for i, _ in ramps:
            lower.append(-units[i].ramp_down)
            upper.append(units[i].ramp_up)

        self.sr_index = np.full((n_units, n_periods), -1, dtype=int)
        self.q_index = np.full((n_units, n_periods), -1, dtype=int)
        self.y_index = np.zeros(0, dtype=int)
        if reserve:
            for t in range(n_periods):
                for i in self.free:
                    self.sr_index[i, t] = len(lower)
                    lower.append(0.0)
                    upper.append(instance.tau * units[i].ramp_up)
                    self.q_index[i, t] = len(lower)
                    lower.append(0.0)
                    upper.append(np.inf)
            self.y_index = len(lower) + np.arange(n_periods, dtype=int)
            lower += [0.0] * n_periods
            upper += [np.inf] * n_periods

        self.lower = np.array(lower, dtype=float)
        self.upper = np.array(upper, dtype=float)
        n_cells = len(cells)
        self.row_balance = 0
        self.row_s = n_periods
        self.row_sine = self.row_s + n_cells
        self.row_ramp = self.row_sine + n_cells
        self.row_capacity = self.row_ramp + len(ramps)
        self.row_requirement = self.row_capacity + (
            len(self.free) * n_periods if reserve else 0)
        self.m = self.row_requirement + (n_periods if reserve else 0)
        self._static_jacobian = self._linear_entries()

    @property
    def n(self) -> int:
        return len(self.lower)

    @property
    def n_ripple_cells(self) -> int:
        return len(self.ripple_unit)

    def outputs(self, x: np.ndarray) -> np.ndarray:
        """Outputs of all units, shape (N, T), fixed units at p_min."""
        n_periods = self.instance.n_periods
        outputs = np.repeat(self.p_min[:, None], n_periods, axis=1)
        outputs[self.free] = x[self.p_index[self.free]]
        return outputs

    def _angles(self, outputs: np.ndarray) -> np.ndarray:
        unit, period = self.ripple_unit, self.ripple_period
        return self.f[unit] * (outputs[unit, period] - self.p_min[unit])

    def _fixed_cost(self) -> float:
        return sum(cost.fixed_cost(self.instance.units[i])
                   for i in self.fixed) * self.instance.n_periods

    def objective(self, x: np.ndarray) -> float:
        """Total cost with s in place of |sin|."""
        p = x[self.p_index[self.free]]
        free = self.free[:, None]
        value = np.sum(self.alpha[free] + self.beta[free] * p
                       + self.gamma[free] * p * p)
        value += np.sum(self.e[self.ripple_unit] * x[self.s_index])
        return float(value + self._fixed_cost())

    def gradient(self, x: np.ndarray) -> np.ndarray:
        gradient = np.zeros(self.n)
        columns = self.p_index[self.free]
        free = self.free[:, None]
        gradient[columns] = self.beta[free] + 2 * self.gamma[free] * x[columns]
        gradient[self.s_index] = self.e[self.ripple_unit]
        return gradient

    def constraints(self, x: np.ndarray) -> np.ndarray:
        """Residuals c(x), zero at a feasible point."""
        instance = self.instance
        outputs = self.outputs(x)
        c = np.zeros(self.m)
        loss = 0.0
        if self.include_loss:
            loss = np.einsum('it,ij,jt->t', outputs, self.b_sym, outputs)
        c[:instance.n_periods] = instance.demand + loss - outputs.sum(axis=0)

        s, u, v = x[self.s_index], x[self.u_index], x[self.v_index]
        k = self.n_ripple_cells
        c[self.row_s:self.row_s + k] = s - u - v
        c[self.row_sine:self.row_sine + k] = np.sin(
            self._angles(outputs)) + u - v

        unit, period = self.ramp_unit, self.ramp_period
        previous = np.where(
            period > 0, outputs[unit, period - 1], self.initial[unit])
        c[self.row_ramp:self.row_capacity] = \
            outputs[unit, period] - previous - x[self.w_index]

        if self.reserve:
            free = self.free
            reserve = x[self.sr_index[free]]
            c[self.row_capacity:self.row_requirement] = (
                outputs[free] + reserve + x[self.q_index[free]]
                - self.p_max[free][:, None]).T.ravel()
            c[self.row_requirement:] = reserve.sum(axis=0) \
                - x[self.y_index] - instance.reserve_req
        return c

    def _linear_entries(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Jacobian entries that do not depend on x."""
        rows, cols, values = [], [], []

        def add(row, col, value):
            rows.append(np.broadcast_to(row, np.shape(col)).ravel())
            cols.append(np.ravel(col))
            values.append(np.broadcast_to(value, np.shape(col)).ravel())

        k = np.arange(self.n_ripple_cells)
        add(self.row_s + k, self.s_index, 1.0)
        add(self.row_s + k, self.u_index, -1.0)
        add(self.row_s + k, self.v_index, -1.0)
        add(self.row_sine + k, self.u_index, 1.0)
        add(self.row_sine + k, self.v_index, -1.0)
        if not self.include_loss:
            add(np.repeat(np.arange(self.instance.n_periods)[None, :],
                          len(self.free), axis=0),
                self.p_index[self.free], -1.0)

        unit, period = self.ramp_unit, self.ramp_period
        r = self.row_ramp + np.arange(len(unit))
        add(r, self.p_index[unit, period], 1.0)
        later = period > 0
        add(r[later], self.p_index[unit[later], period[later] - 1], -1.0)
        add(r, self.w_index, -1.0)

        if self.reserve:
            free = self.free
            n_periods = self.instance.n_periods
            capacity = self.row_capacity + np.arange(
                len(free) * n_periods).reshape(n_periods, len(free)).T
            add(capacity, self.p_index[free], 1.0)
            add(capacity, self.sr_index[free], 1.0)
            add(capacity, self.q_index[free], 1.0)
            requirement = np.repeat(
                (self.row_requirement + np.arange(n_periods))[None, :],
                len(free), axis=0)
            add(requirement, self.sr_index[free], 1.0)
            add(self.row_requirement + np.arange(n_periods), self.y_index,
                -1.0)
        return (np.concatenate(rows), np.concatenate(cols),
                np.concatenate(values))

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        """Jacobian of constraints(x), shape (m, n)."""
        rows, cols, values = self._static_jacobian
        rows, cols, values = [rows], [cols], [values]
        outputs = self.outputs(x)
        if self.include_loss:
            slope = 2 * (self.b_sym @ outputs)[self.free] - 1.0
            rows.append(np.repeat(
                np.arange(self.instance.n_periods)[None, :], len(self.free),
                axis=0).ravel())
            cols.append(self.p_index[self.free].ravel())
            values.append(slope.ravel())
        k = np.arange(self.n_ripple_cells)
        rows.append(self.row_sine + k)
        cols.append(self.p_index[self.ripple_unit, self.ripple_period])
        values.append(self.f[self.ripple_unit] * np.cos(self._angles(outputs)))
        return sp.coo_matrix(
            (np.concatenate(values),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.m, self.n)).tocsr()

    def hessian(self, x: np.ndarray, multipliers: np.ndarray,
                obj_factor: float = 1.0) -> np.ndarray:
        """Dense Hessian of obj_factor * f + multipliers @ c."""
        hessian = np.zeros((self.n, self.n))
        columns = self.p_index[self.free]
        hessian[columns, columns] = obj_factor * 2 * np.repeat(
            self.gamma[self.free][:, None], columns.shape[1], axis=1)
        if self.include_loss:
            block = 2 * self.b_sym[np.ix_(self.free, self.free)]
            for t in range(self.instance.n_periods):
                index = np.ix_(columns[:, t], columns[:, t])
                hessian[index] += multipliers[self.row_balance + t] * block
        if self.n_ripple_cells:
            p = self.p_index[self.ripple_unit, self.ripple_period]
            curvature = -self.f[self.ripple_unit] ** 2 * np.sin(
                self._angles(self.outputs(x)))
            sine_rows = self.row_sine + np.arange(self.n_ripple_cells)
            hessian[p, p] += multipliers[sine_rows] * curvature
        return hessian

    def sine_parts(self, x: np.ndarray) -> Tuple[
            np.ndarray, np.ndarray, np.ndarray]:
        """(s, u, v) per unit and period.

        Cells without a sine block get s = |sin| and u, v from the sign
        split of sin at their output.
        """
        outputs = self.outputs(x)
        sine = np.sin(self.f[:, None] * (outputs - self.p_min[:, None]))
        s, u, v = np.abs(sine), np.maximum(-sine, 0.0), np.maximum(sine, 0.0)
        cells = (self.ripple_unit, self.ripple_period)
        s[cells] = x[self.s_index]
        u[cells] = x[self.u_index]
        v[cells] = x[self.v_index]
        return s, u, v


def build_nlp(instance: Instance, include_loss: bool = True,
              reserve: bool = False) -> NlpProblem:
    """Build the smooth NLP of an instance.

    :raises ConfigurationError: if loss is requested without a B-matrix or
        reserve without reserve data.
    """
    if include_loss and instance.b_matrix is None:
        raise ConfigurationError('Loss requested but instance has no B-matrix')
    if reserve and (instance.reserve_req is None or not instance.tau > 0):
        raise ConfigurationError(
            'Reserve requested but instance has no reserve data')
    problem = NlpProblem(instance, include_loss, reserve)
    __log__.info('Built NLP with %d variables and %d equality rows',
                 problem.n, problem.m)
    return problem


def _inward(values, lower, upper, floor):
    margin = np.minimum(floor, 0.25 * (upper - lower))
    margin = np.where(np.isfinite(margin), margin, floor)
    return np.clip(values, lower + margin, upper - margin)


def initialize(problem: NlpProblem, start: Schedule,
               slack_floor: float = 1e-2) -> np.ndarray:
    """Interior starting point from a schedule.

    Outputs are moved at least slack_floor inside their limits. u and v
    split sin(f*(P - p_min)) by sign and s = u + v, so the sine rows hold
    exactly. Slack columns start at their residual, kept inside their
    bounds.
    """
    x = np.zeros(problem.n)
    lower, upper = problem.lower, problem.upper
    free = problem.free
    columns = problem.p_index[free]
    x[columns] = _inward(
        start.outputs[free], lower[columns], upper[columns], slack_floor)
    outputs = problem.outputs(x)

    sine = np.sin(problem._angles(outputs))
    u = np.where(sine >= 0, slack_floor, -sine + slack_floor)
    v = np.where(sine >= 0, sine + slack_floor, slack_floor)
    x[problem.u_index] = u
    x[problem.v_index] = v
    x[problem.s_index] = u + v

    unit, period = problem.ramp_unit, problem.ramp_period
    previous = np.where(
        period > 0, outputs[unit, period - 1], problem.initial[unit])
    w = problem.w_index
    x[w] = _inward(outputs[unit, period] - previous, lower[w], upper[w],
                   slack_floor)

    if problem.reserve:
        sr = problem.sr_index[free]
        headroom = problem.p_max[free][:, None] - outputs[free]
        x[sr] = _inward(0.5 * headroom, lower[sr], upper[sr], slack_floor)
        x[problem.q_index[free]] = np.maximum(
            headroom - x[sr], slack_floor)
        x[problem.y_index] = np.maximum(
            x[sr].sum(axis=0) - problem.instance.reserve_req, slack_floor)
    return x


def _inertia(d: np.ndarray) -> Tuple[int, int, int]:
    """Positive, negative and zero eigenvalue counts of an LDL factor."""
    size = d.shape[0]
    scale = max(1.0, float(np.max(np.abs(d))) if size else 1.0)
    eigenvalues = []
    i = 0
    while i < size:
        if i + 1 < size and d[i + 1, i] != 0:
            eigenvalues.extend(np.linalg.eigvalsh(d[i:i + 2, i:i + 2]))
            i += 2
        else:
            eigenvalues.append(d[i, i])
            i += 1
    eigenvalues = np.array(eigenvalues)
    zero = np.abs(eigenvalues) <= 1e-13 * scale
    return (int(np.sum((eigenvalues > 0) & ~zero)),
            int(np.sum((eigenvalues < 0) & ~zero)), int(np.sum(zero)))


class _KktFactor(object):
    """Symmetric indefinite factors K = L D L^T of one KKT matrix."""
    def __init__(self, matrix: np.ndarray):
        self.lu, self.d, self.perm = linalg.ldl(
            matrix, lower=True, hermitian=True, check_finite=False)
        self.inertia = _inertia(self.d)
        self.triangular = self.lu[self.perm]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        size = len(rhs)
        lower = linalg.solve_triangular(
            self.triangular, rhs[self.perm], lower=True, unit_diagonal=True,
            check_finite=False)
        banded = np.zeros((3, size))
        banded[0, 1:] = np.diag(self.d, 1)
        banded[1] = np.diag(self.d)
        banded[2, :-1] = np.diag(self.d, -1)
        middle = linalg.solve_banded((1, 1), banded, lower,
                                     check_finite=False)
        solution = np.empty(size)
        solution[self.perm] = linalg.solve_triangular(
            self.triangular, middle, trans='T', lower=True,
            unit_diagonal=True, check_finite=False)
        return solution


def _step_to_boundary(distance: np.ndarray, step: np.ndarray,
                      tau: float) -> float:
    shrinking = step < 0
    if not np.any(shrinking):
        return 1.0
    return float(min(1.0, np.min(-tau * distance[shrinking]
                                 / step[shrinking])))


class _InteriorPoint(object):
    """Iterate and settings of one solve_nlp call."""
    def __init__(self, problem: NlpProblem, x: np.ndarray,
                 config: IpmConfig,
                 callback: Optional[IterationCallback]):
        self.problem = problem
        self.config = config
        self.callback = callback
        lower, upper = problem.lower.copy(), problem.upper.copy()
        narrow = upper - lower < DEGENERATE_BOUND
        lower[narrow] -= DEGENERATE_BOUND
        upper[narrow] += DEGENERATE_BOUND
        self.lower, self.upper = lower, upper
        self.has_lower = np.isfinite(lower)
        self.has_upper = np.isfinite(upper)
        self.n_bounds = int(self.has_lower.sum() + self.has_upper.sum())
        self.x = x
        self.mu = config.initial_mu
        self.mu_min = min(config.tol, config.compl_tol) / 10
        self.penalty = 1.0
        self.delta_w_last = 0.0
        gradient = problem.gradient(x)
        self.obj_scale = min(1.0, MAX_GRADIENT / max(
            float(np.max(np.abs(gradient), initial=0.0)), 1e-12))
        self.z_lower = np.where(
            self.has_lower, self.mu / self._lower_gap(x), 0.0)
        self.z_upper = np.where(
            self.has_upper, self.mu / self._upper_gap(x), 0.0)
        self.y = self._initial_multipliers()

    def _lower_gap(self, x):
        return np.where(self.has_lower, x - np.where(
            self.has_lower, self.lower, 0.0), 1.0)

    def _upper_gap(self, x):
        return np.where(self.has_upper, np.where(
            self.has_upper, self.upper, 0.0) - x, 1.0)

    def _initial_multipliers(self) -> np.ndarray:
        problem = self.problem
        if problem.m == 0:
            return np.zeros(0)
        jacobian = problem.jacobian(self.x).toarray()
        residual = self.obj_scale * problem.gradient(self.x) \
            - self.z_lower + self.z_upper
        y = np.linalg.lstsq(jacobian.T, -residual, rcond=None)[0]
        if np.max(np.abs(y)) > MULTIPLIER_INIT_MAX:
            __log__.debug('Least-squares multipliers too large, using zero')
            return np.zeros(problem.m)
        return y

    def errors(self, gradient, c, jacobian, mu) -> Tuple[float, float, float]:
        """Scaled dual infeasibility, primal infeasibility, complementarity."""
        dual = gradient + jacobian.T @ self.y - self.z_lower + self.z_upper
        complementarity = np.concatenate([
            (self._lower_gap(self.x) * self.z_lower - mu)[self.has_lower],
            (self._upper_gap(self.x) * self.z_upper - mu)[self.has_upper]])
        z_sum = np.sum(np.abs(self.z_lower)) + np.sum(np.abs(self.z_upper))
        scale_d = max(SCALING_THRESHOLD, (np.sum(np.abs(self.y)) + z_sum)
                      / max(1, self.problem.m + self.n_bounds)) \
            / SCALING_THRESHOLD
        scale_c = max(SCALING_THRESHOLD, z_sum / max(1, self.n_bounds)) \
            / SCALING_THRESHOLD
        return (float(np.max(np.abs(dual), initial=0.0)) / scale_d,
                float(np.max(np.abs(c), initial=0.0)),
                float(np.max(np.abs(complementarity), initial=0.0)) / scale_c)

    def complementarity(self) -> float:
        return float(max(
            np.max((self._lower_gap(self.x) * self.z_lower)[self.has_lower],
                   initial=0.0),
            np.max((self._upper_gap(self.x) * self.z_upper)[self.has_upper],
                   initial=0.0)))

    def update_mu(self, gradient, c, jacobian):
        config = self.config
        if config.mu_strategy == 'adaptive':
            products = np.concatenate([
                (self._lower_gap(self.x) * self.z_lower)[self.has_lower],
                (self._upper_gap(self.x) * self.z_upper)[self.has_upper]])
            if len(products) == 0:
                return
            average = float(products.mean())
            ratio = float(products.min()) / max(average, 1e-300)
            sigma = 0.1 * min(0.05 * (1 - ratio) / max(ratio, 1e-300),
                              2.0) ** 3
            self.mu = max(self.mu_min, sigma * average)
            return
        while self.mu > self.mu_min and max(self.errors(
                gradient, c, jacobian, self.mu)) <= KAPPA_EPSILON * self.mu:
            self.mu = max(self.mu_min, min(
                config.mu_decrease * self.mu, self.mu ** MU_SUPERLINEAR))

    def _factorize(self, hessian, sigma, jacobian):
        """Factor the KKT matrix, raising the regularisation until its
        inertia is (n, m, 0).
        """
        n, m = self.problem.n, self.problem.m
        matrix = np.zeros((n + m, n + m))
        matrix[:n, :n] = hessian + np.diag(sigma)
        matrix[n:, :n] = jacobian
        matrix[:n, n:] = jacobian.T
        base = matrix[:n, :n].diagonal().copy()
        delta_w, delta_c = 0.0, 0.0
        while True:
            matrix[np.arange(n), np.arange(n)] = base + delta_w
            matrix[np.arange(n, n + m), np.arange(n, n + m)] = -delta_c
            factor = _KktFactor(matrix)
            positive, negative, zero = factor.inertia
            if positive == n and negative == m and zero == 0:
                if delta_w > 0:
                    self.delta_w_last = delta_w
                return factor
            if zero and delta_c == 0:
                delta_c = DELTA_C * self.mu ** 0.25
                __log__.debug('Singular KKT matrix, delta_c %.3g', delta_c)
                continue
            if delta_w == 0:
                delta_w = max(DELTA_W_INITIAL, self.delta_w_last / 4)
            else:
                delta_w *= 2
            if delta_w > DELTA_W_MAX:
                return None

    def merit(self, x: np.ndarray) -> float:
        problem = self.problem
        barrier = -self.mu * (
            np.sum(np.log(self._lower_gap(x)[self.has_lower]))
            + np.sum(np.log(self._upper_gap(x)[self.has_upper])))
        violation = np.sum(np.abs(problem.constraints(x)))
        return self.obj_scale * problem.objective(x) + barrier \
            + self.penalty * violation

    def barrier_gradient(self, x: np.ndarray,
                         gradient: np.ndarray) -> np.ndarray:
        """Gradient of the barrier objective from the scaled gradient of f.
        """
        return gradient \
            - np.where(self.has_lower, self.mu / self._lower_gap(x), 0.0) \
            + np.where(self.has_upper, self.mu / self._upper_gap(x), 0.0)

    def merit_slope(self, barrier_gradient: np.ndarray, c: np.ndarray,
                    dx: np.ndarray, jacobian_dx: np.ndarray) -> float:
        """Directional derivative of merit along dx.

        The l1 term contributes sign(c_i) (J dx)_i on violated rows and
        |(J dx)_i| on satisfied ones, which is -penalty * ||c||_1 for an
        exact Newton step.
        """
        violated = c != 0
        l1 = np.sum(np.sign(c[violated]) * jacobian_dx[violated]) \
            + np.sum(np.abs(jacobian_dx[~violated]))
        return float(barrier_gradient @ dx + self.penalty * l1)

    def update_penalty(self, barrier_gradient, c, dx, dy, curvature):
        """Raise the penalty until dx is a descent direction of merit."""
        violation = float(np.sum(np.abs(c)))
        self.penalty = max(self.penalty, PENALTY_MARGIN * float(
            np.max(np.abs(self.y + dy), initial=0.0)))
        if violation > 0:
            needed = (barrier_gradient @ dx + max(0.5 * curvature, 0.0)) \
                / ((1 - PENALTY_RHO) * violation)
            self.penalty = max(self.penalty, PENALTY_MARGIN * needed)

    def barrier_error(self, x, y, z_lower, z_upper) -> float:
        """Unscaled optimality error of the barrier problem at mu."""
        problem = self.problem
        gradient = self.obj_scale * problem.gradient(x)
        dual = gradient + problem.jacobian(x).T @ y - z_lower + z_upper
        complementarity = np.concatenate([
            (self._lower_gap(x) * z_lower - self.mu)[self.has_lower],
            (self._upper_gap(x) * z_upper - self.mu)[self.has_upper]])
        return float(max(
            np.max(np.abs(dual), initial=0.0),
            np.max(np.abs(problem.constraints(x)), initial=0.0),
            np.max(np.abs(complementarity), initial=0.0)))

    def _max_step(self, x, dx, tau) -> float:
        return min(
            _step_to_boundary(self._lower_gap(x)[self.has_lower],
                              dx[self.has_lower], tau),
            _step_to_boundary(self._upper_gap(x)[self.has_upper],
                              -dx[self.has_upper], tau))

    def _accept(self, trial, alpha, dy, alpha_z, dz_lower, dz_upper):
        self.x = trial
        self.y = self.y + alpha * dy
        self.z_lower = self.z_lower + alpha_z * dz_lower
        self.z_upper = self.z_upper + alpha_z * dz_upper
        self._safeguard_multipliers()

    def step(self, gradient, c, jacobian) -> bool:
        """Compute and take one damped Newton step, False on failure.

        A full step rejected by the merit is retried once with a second
        order correction of the constraints. When backtracking reaches
        MIN_STEP the full step is still taken if it lowers the barrier
        problem error.
        """
        problem = self.problem
        x = self.x
        lower_gap, upper_gap = self._lower_gap(x), self._upper_gap(x)
        sigma_lower = np.where(self.has_lower, self.z_lower / lower_gap, 0.0)
        sigma_upper = np.where(self.has_upper, self.z_upper / upper_gap, 0.0)
        sigma = sigma_lower + sigma_upper
        barrier_gradient = self.barrier_gradient(x, gradient)
        rhs = -np.concatenate([barrier_gradient + jacobian.T @ self.y, c])
        hessian = problem.hessian(x, self.y, self.obj_scale)
        dense_jacobian = jacobian.toarray()
        tau = max(self.config.tau_min, 1 - self.mu)

        factor = self._factorize(hessian, sigma, dense_jacobian)
        if factor is None:
            __log__.debug('Inertia correction failed')
            return False
        direction = factor.solve(rhs)
        dx, dy = direction[:problem.n], direction[problem.n:]
        dz_lower = np.where(
            self.has_lower,
            self.mu / lower_gap - self.z_lower - sigma_lower * dx, 0.0)
        dz_upper = np.where(
            self.has_upper,
            self.mu / upper_gap - self.z_upper + sigma_upper * dx, 0.0)
        alpha_max = self._max_step(x, dx, tau)
        alpha_z = min(
            _step_to_boundary(self.z_lower[self.has_lower],
                              dz_lower[self.has_lower], tau),
            _step_to_boundary(self.z_upper[self.has_upper],
                              dz_upper[self.has_upper], tau))

        curvature = float(dx @ (hessian @ dx) + dx @ (sigma * dx))
        self.update_penalty(barrier_gradient, c, dx, dy, curvature)
        current = self.merit(x)
        slope = min(self.merit_slope(
            barrier_gradient, c, dx, dense_jacobian @ dx), 0.0)
        slack = 10 * np.finfo(float).eps * max(abs(current), 1.0)

        alpha = alpha_max
        while alpha >= MIN_STEP:
            trial = x + alpha * dx
            threshold = current + ARMIJO * alpha * slope + slack
            if self.merit(trial) <= threshold:
                self._accept(trial, alpha, dy, alpha_z, dz_lower, dz_upper)
                return True
            if alpha == alpha_max:
                correction = factor.solve(np.concatenate([
                    np.zeros(problem.n), -problem.constraints(trial)]))
                dx_soc = alpha * dx + correction[:problem.n]
                alpha_soc = self._max_step(x, dx_soc, tau)
                corrected = x + alpha_soc * dx_soc
                if self.merit(corrected) <= threshold:
                    __log__.debug('Second order correction accepted')
                    self._accept(corrected, alpha, dy, alpha_z, dz_lower,
                                 dz_upper)
                    return True
            alpha /= 2

        trial = x + alpha_max * dx
        if self.barrier_error(
                trial, self.y + alpha_max * dy,
                self.z_lower + alpha_z * dz_lower,
                self.z_upper + alpha_z * dz_upper) < self.barrier_error(
                    x, self.y, self.z_lower, self.z_upper):
            __log__.debug('Line search failed, full step lowers the error')
            self._accept(trial, alpha_max, dy, alpha_z, dz_lower, dz_upper)
            return True
        __log__.debug('Line search failed at merit %.10g', current)
        return False

    def _safeguard_multipliers(self):
        for z, gap, has in [
                (self.z_lower, self._lower_gap(self.x), self.has_lower),
                (self.z_upper, self._upper_gap(self.x), self.has_upper)]:
            low = self.mu / (Z_SAFEGUARD * gap)
            high = Z_SAFEGUARD * self.mu / gap
            z[has] = np.clip(z[has], low[has], high[has])


def solve_nlp(problem: NlpProblem, start: Schedule,
              config: IpmConfig = IpmConfig(),
              callback: Optional[IterationCallback] = None) -> IpmResult:
    """Find a local optimum of the NLP starting from a schedule.

    :param NlpProblem problem: Problem built by build_nlp.
    :param Schedule start: Starting outputs, moved inside the limits.
    :param IpmConfig config: Barrier and termination settings.
    :param callback: Called every iteration with (iteration, objective,
        primal infeasibility, scaled dual infeasibility, mu).
    :returns IpmResult: Final or, after a failure, best iterate.
    :raises ConfigurationError: for invalid settings.
    """
    config.check()
    state = _InteriorPoint(
        problem, initialize(problem, start, config.slack_floor), config,
        callback)
    best = None
    status = IpmStatus.MAX_ITER
    iteration = stalls = 0
    for iteration in range(config.max_iter + 1):
        gradient = state.obj_scale * problem.gradient(state.x)
        c = problem.constraints(state.x)
        jacobian = problem.jacobian(state.x)
        dual, primal, compl = state.errors(gradient, c, jacobian, 0.0)
        objective = problem.objective(state.x)
        if callback is not None:
            callback(iteration, objective, primal, dual, state.mu)
        __log__.debug('%4d %16.8e %9.2e %9.2e %9.2e', iteration, objective,
                      primal, dual, state.mu)
        if best is None or (primal, dual) < best[0]:
            best = ((primal, dual), state.x.copy(), state.y.copy(),
                    state.z_lower.copy(), state.z_upper.copy())
        if max(dual, primal, compl) <= config.tol \
                and state.complementarity() <= config.compl_tol:
            status = IpmStatus.LOCAL_OPTIMUM
            break
        if iteration == config.max_iter:
            break
        state.update_mu(gradient, c, jacobian)
        if state.step(gradient, c, jacobian):
            stalls = 0
            continue
        stalls += 1
        if max(dual, primal, compl) <= ACCEPTABLE_TOL:
            __log__.info('Step rejected at iteration %d, accepting iterate '
                         'within %.1g', iteration, ACCEPTABLE_TOL)
            status = IpmStatus.LOCAL_OPTIMUM
            break
        if state.mu > state.mu_min and stalls <= MAX_STALLS:
            state.mu = max(state.mu_min, config.mu_decrease * state.mu)
            __log__.debug('Step rejected, lowering mu to %.3g', state.mu)
            continue
        __log__.warning(
            'Interior point stalled at iteration %d, returning best '
            'iterate', iteration)
        status = IpmStatus.RESTORATION_FAILURE
        _, state.x, state.y, state.z_lower, state.z_upper = best
        break

    x = state.x
    gradient = state.obj_scale * problem.gradient(x)
    dual, primal, _ = state.errors(
        gradient, problem.constraints(x), problem.jacobian(x), 0.0)
    s, u, v = problem.sine_parts(x)
    result = IpmResult(
        status=status, schedule=Schedule(problem.outputs(x)),
        objective=problem.objective(x), s=s, u=u, v=v,
        primal_infeasibility=primal, dual_infeasibility=dual,
        complementarity=state.complementarity(), iterations=iteration,
        x=x, multipliers=state.y)
    __log__.info('Interior point %s after %d iterations: objective %.6f, '
                 'primal infeasibility %.3g', status.value, iteration,
                 result.objective, primal)
    return result
