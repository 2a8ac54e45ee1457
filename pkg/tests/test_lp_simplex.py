import numpy as np
import pytest

from dispatch.lp_simplex import \
    FEASIBILITY_TOL, \
    LpStatus, \
    SimplexSolver, \
    VarStatus, \
    geometric_scaling, \
    reoptimize_after_bound_change, \
    solve_lp
from dispatch.milp_builder import \
    build_milp, \
    max_violation

from oracles import \
    linprog_solve, \
    random_lp, \
    sparse_lp


def test_small_lp():
    # min -x - 2y s.t. x + y <= 4, x - y >= -2, 0 <= x, y <= 3
    lp = sparse_lp([[1, 1], [1, -1]], [-np.inf, -2], [4, np.inf], [-1, -2],
                   [0, 0], [3, 3])
    result = solve_lp(lp)
    assert result.status is LpStatus.OPTIMAL
    np.testing.assert_allclose(result.x, [1, 3], atol=1e-9)
    assert result.objective == pytest.approx(-7)
    np.testing.assert_allclose(result.row_activity, [4, -2], atol=1e-9)


def test_equality_rows_and_negative_bounds():
    lp = sparse_lp([[1, 1, 1]], [1], [1], [1, 2, 3], [-2, -2, -2], [2, 2, 2])
    result = solve_lp(lp)
    assert result.status is LpStatus.OPTIMAL
    np.testing.assert_allclose(result.x, [2, 1, -2], atol=1e-9)
    assert result.objective == pytest.approx(2 + 2 - 6)


def test_infeasible():
    lp = sparse_lp([[1, 1]], [5], [np.inf], [1, 1], [0, 0], [2, 2])
    result = solve_lp(lp)
    assert result.status is LpStatus.INFEASIBLE
    assert result.objective == np.inf


def test_crossed_column_bounds_are_infeasible():
    lp = sparse_lp([[1, 1]], [0], [3], [1, 1], [2, 0], [1, 2])
    assert solve_lp(lp).status is LpStatus.INFEASIBLE


def test_empty_row_with_positive_lower_bound_is_infeasible():
    lp = sparse_lp([[1, 0], [0, 0]], [0, 1], [3, 2], [1, 1], [0, 0], [2, 2])
    assert solve_lp(lp).status is LpStatus.INFEASIBLE


def test_unbounded():
    lp = sparse_lp([[1, -1]], [-np.inf], [1], [-1, -1],
                   [-np.inf, -np.inf], [np.inf, np.inf])
    result = solve_lp(lp)
    assert result.status is LpStatus.UNBOUNDED
    assert result.objective == -np.inf


def test_empty_column_goes_to_cheaper_bound():
    lp = sparse_lp([[1, 0, 0]], [1], [2], [1, -3, 2], [0, -1, -4], [5, 6, 7])
    result = solve_lp(lp)
    assert result.status is LpStatus.OPTIMAL
    np.testing.assert_allclose(result.x, [1, 6, -4], atol=1e-9)


def test_scaling_factors_are_powers_of_two():
    lp = sparse_lp([[1e-4, 200], [3, 0.5]], [0, 0], [1, 1], [1, 1], [0, 0],
                   [1, 1])
    rows, cols = geometric_scaling(lp.matrix)
    for factor in np.concatenate([rows, cols]):
        assert np.log2(factor) == pytest.approx(round(np.log2(factor)))


@pytest.mark.parametrize('seed', range(60))
def test_matches_highs_on_random_lps(seed):
    lp = random_lp(np.random.default_rng(seed))
    result = solve_lp(lp)
    status, objective, _ = linprog_solve(lp)
    assert result.status.value == status
    if status == 'optimal':
        assert result.objective == pytest.approx(
            objective, rel=1e-7, abs=1e-6)
        assert max_violation(lp, result.x) <= 100 * FEASIBILITY_TOL


@pytest.mark.parametrize('seed', range(20))
def test_optimality_conditions(seed):
    lp = random_lp(np.random.default_rng(1000 + seed), n_rows=6, n_cols=9)
    result = solve_lp(lp)
    if result.status is not LpStatus.OPTIMAL:
        return
    tol = 1e-6
    at_lower = np.abs(result.x - lp.col_lower) <= tol
    at_upper = np.abs(result.x - lp.col_upper) <= tol
    between = ~at_lower & ~at_upper
    assert np.all(np.abs(result.reduced_costs[between]) <= tol)
    assert np.all(result.reduced_costs[at_lower & ~at_upper] >= -tol)
    assert np.all(result.reduced_costs[at_upper & ~at_lower] <= tol)
    activity = result.row_activity
    inactive = (activity > lp.row_lower + tol) & (
        activity < lp.row_upper - tol)
    assert np.all(np.abs(result.duals[inactive]) <= tol)


def test_warm_start_agrees_with_cold_start():
    rng = np.random.default_rng(7)
    trials = 0
    while trials < 500:
        lp = random_lp(rng)
        parent = solve_lp(lp)
        if parent.status is not LpStatus.OPTIMAL:
            continue
        trials += 1
        column = int(rng.integers(lp.n_cols))
        value = parent.x[column]
        if rng.random() < 0.5:
            lower, upper = lp.col_lower[column], np.floor(value - 0.25)
        else:
            lower, upper = np.ceil(value + 0.25), lp.col_upper[column]
        warm = reoptimize_after_bound_change(
            lp, parent.basis, column, lower, upper)
        changed_lower, changed_upper = lp.col_lower.copy(), lp.col_upper.copy()
        changed_lower[column], changed_upper[column] = lower, upper
        cold = solve_lp(lp.with_col_bounds(changed_lower, changed_upper))
        assert warm.status is cold.status
        if cold.status is LpStatus.OPTIMAL:
            assert warm.objective == pytest.approx(
                cold.objective, rel=1e-7, abs=1e-6)


def test_solver_reuses_its_factor_across_bound_changes(two_unit):
    lp = build_milp(two_unit, 4).lp
    solver = SimplexSolver(lp)
    root = solver.solve()
    assert root.status is LpStatus.OPTIMAL
    assert root.basis.owner is solver.token
    z = int(np.nonzero(lp.integrality)[0][0])
    upper = lp.col_upper.copy()
    upper[z] = 0.0
    child = solver.solve(col_upper=upper, warm=root.basis)
    status, objective, _ = linprog_solve(lp, col_upper=upper)
    assert child.status.value == status
    assert child.objective == pytest.approx(objective, rel=1e-7, abs=1e-6)
    assert child.objective >= root.objective - 1e-7


def test_factor_is_not_shared_between_solvers(two_unit):
    lp = build_milp(two_unit, 4).lp
    root = SimplexSolver(lp).solve()
    # same shape and pattern, other coefficients
    matrix = lp.matrix.copy()
    matrix.data = matrix.data * np.random.default_rng(7).uniform(
        0.9, 1.1, size=matrix.nnz)
    other_lp = lp._replace(matrix=matrix)
    other = SimplexSolver(other_lp)
    assert root.basis.owner is not other.token
    warm = other.solve(warm=root.basis)
    status, objective, _ = linprog_solve(other_lp)
    assert warm.status.value == status
    if warm.status is LpStatus.OPTIMAL:
        assert warm.objective == pytest.approx(objective, rel=1e-7,
                                               abs=1e-6)


def test_basis_statuses(two_unit):
    lp = build_milp(two_unit, 4).lp
    result = solve_lp(lp)
    basis = result.basis
    assert len(basis.head) == np.sum(
        np.diff(lp.matrix.tocsr().indptr) > 0)
    assert np.all(basis.status[basis.head] == VarStatus.BASIC)
    assert np.sum(basis.status == VarStatus.BASIC) == len(basis.head)
