import numpy as np
import pytest

from dispatch import cost
from dispatch.feasibility import audit
from dispatch.hybrid import solve_single_ipm
from dispatch.model import \
    ConfigurationError, \
    Schedule, \
    make_instance
from dispatch.nlp_ipm import \
    IpmConfig, \
    IpmStatus, \
    _InteriorPoint, \
    build_nlp, \
    initialize, \
    solve_nlp

from oracles import \
    grid_minimum, \
    qp_dispatch, \
    random_instance

START = np.array([[40.0, 50.0, 60.0], [40.0, 70.0, 90.0]])
STEP = 1e-6


def _perturbed_point(problem, seed=0):
    x = initialize(problem, Schedule(START))
    rng = np.random.default_rng(seed)
    return x + rng.uniform(-0.5, 0.5, size=x.shape) * 1e-2


def _two_unit_problems(two_unit):
    units = (two_unit.units[0]._replace(initial_output=35.0),
             two_unit.units[1])
    instance = two_unit._replace(units=units)
    return [
        build_nlp(two_unit, include_loss=False),
        build_nlp(two_unit),
        build_nlp(instance, reserve=True),
    ]


def test_dimensions(two_unit):
    problem = build_nlp(two_unit, include_loss=False)
    # 6 outputs, 6 sine blocks of 3, 4 ramp slacks
    assert problem.n == 6 + 18 + 4
    assert problem.m == 3 + 6 + 6 + 4
    with_reserve = build_nlp(two_unit, include_loss=False, reserve=True)
    assert with_reserve.n == problem.n + 6 + 6 + 3
    assert with_reserve.m == problem.m + 6 + 3


def test_fixed_unit_has_no_columns(ten_unit):
    problem = build_nlp(ten_unit)
    assert problem.p_index[9].tolist() == [-1] * 24
    assert 9 not in problem.ripple_unit


def test_objective_matches_cost_at_start(two_unit):
    problem = build_nlp(two_unit)
    x = initialize(problem, Schedule(START), slack_floor=1e-9)
    assert problem.objective(x) == pytest.approx(
        cost.total_cost(two_unit, Schedule(START)), abs=1e-5)


def test_gradient_against_differences(two_unit):
    for problem in _two_unit_problems(two_unit):
        x = _perturbed_point(problem)
        gradient = problem.gradient(x)
        for j in range(problem.n):
            bumped = x.copy()
            bumped[j] += STEP
            difference = (problem.objective(bumped)
                          - problem.objective(x)) / STEP
            assert gradient[j] == pytest.approx(difference, abs=1e-4)


def test_jacobian_against_differences(two_unit):
    for problem in _two_unit_problems(two_unit):
        x = _perturbed_point(problem, seed=1)
        jacobian = problem.jacobian(x).toarray()
        c = problem.constraints(x)
        for j in range(problem.n):
            bumped = x.copy()
            bumped[j] += STEP
            difference = (problem.constraints(bumped) - c) / STEP
            np.testing.assert_allclose(
                jacobian[:, j], difference, rtol=0, atol=1e-5)


def test_hessian_against_differences(two_unit):
    for problem in _two_unit_problems(two_unit):
        x = _perturbed_point(problem, seed=2)
        multipliers = np.random.default_rng(3).normal(size=problem.m)

        def lagrangian_gradient(point):
            return problem.gradient(point) \
                + problem.jacobian(point).T @ multipliers

        hessian = problem.hessian(x, multipliers)
        np.testing.assert_allclose(hessian, hessian.T, atol=1e-12)
        base = lagrangian_gradient(x)
        for j in range(problem.n):
            bumped = x.copy()
            bumped[j] += STEP
            difference = (lagrangian_gradient(bumped) - base) / STEP
            np.testing.assert_allclose(
                hessian[:, j], difference, rtol=0, atol=1e-4)


def test_initialize_is_interior_and_satisfies_sine_rows(two_unit):
    problem = build_nlp(two_unit, reserve=True)
    x = initialize(problem, Schedule(START), slack_floor=1e-2)
    assert np.all(x > problem.lower) and np.all(x < problem.upper)
    c = problem.constraints(x)
    k = problem.n_ripple_cells
    np.testing.assert_allclose(c[problem.row_s:problem.row_sine + k], 0.0,
                               atol=1e-12)
    s, u, v = problem.sine_parts(x)
    np.testing.assert_allclose(s, u + v)


def test_initialize_moves_outputs_inside(two_unit):
    problem = build_nlp(two_unit, include_loss=False)
    start = START.copy()
    start[0, 0] = two_unit.units[0].p_min
    x = initialize(problem, Schedule(start), slack_floor=0.5)
    assert problem.outputs(x)[0, 0] == pytest.approx(
        two_unit.units[0].p_min + 0.5)


def test_solves_loss_free_instance(two_unit):
    problem = build_nlp(two_unit, include_loss=False)
    result = solve_nlp(problem, Schedule(START))
    assert result.status is IpmStatus.LOCAL_OPTIMUM
    assert result.primal_infeasibility <= 1e-6
    np.testing.assert_allclose(result.s, np.abs(
        np.sin(np.array([[0.042], [0.04]])
               * (result.schedule.outputs
                  - two_unit.p_min[:, None]))), atol=1e-6)
    assert audit(two_unit, result.schedule, include_loss=False).passed
    assert result.objective == pytest.approx(
        cost.total_cost(two_unit, result.schedule), abs=1e-3)


def test_solves_with_loss_and_reserve(two_unit):
    instance = two_unit.with_reserve(True)
    result = solve_nlp(build_nlp(instance, reserve=True), Schedule(START))
    assert result.status is IpmStatus.LOCAL_OPTIMUM
    report = audit(instance, result.schedule)
    assert report.passed, report


def test_local_optimum_beats_start(two_unit):
    problem = build_nlp(two_unit, include_loss=False)
    result = solve_nlp(problem, Schedule(START))
    assert result.objective <= cost.total_cost(two_unit, Schedule(START))


def test_callback_sees_every_iteration(two_unit):
    seen = []
    result = solve_nlp(
        build_nlp(two_unit, include_loss=False), Schedule(START),
        callback=lambda *args: seen.append(args))
    assert [args[0] for args in seen] == list(range(result.iterations + 1))
    assert seen[-1][4] > 0


def test_iteration_limit(two_unit):
    result = solve_nlp(build_nlp(two_unit), Schedule(START),
                       IpmConfig(max_iter=2))
    assert result.status is IpmStatus.MAX_ITER
    assert result.iterations == 2


def test_adaptive_barrier(two_unit):
    problem = build_nlp(two_unit, include_loss=False)
    adaptive = solve_nlp(problem, Schedule(START),
                         IpmConfig(mu_strategy='adaptive'))
    assert adaptive.status is IpmStatus.LOCAL_OPTIMUM
    assert audit(two_unit, adaptive.schedule, include_loss=False).passed


def test_loss_needs_bmatrix(rippled_unit):
    with pytest.raises(ConfigurationError):
        build_nlp(make_instance([rippled_unit], [40.0]))


def test_reserve_needs_data(rippled_unit):
    with pytest.raises(ConfigurationError):
        build_nlp(make_instance([rippled_unit], [40.0]), include_loss=False,
                  reserve=True)


@pytest.mark.parametrize('changes', [
    {'mu_strategy': 'probing'},
    {'initial_mu': 0.0},
    {'mu_decrease': 1.0},
    {'tau_min': 1.0},
    {'tol': -1e-8},
    {'max_iter': -1},
])
def test_config_rejected(two_unit, changes):
    with pytest.raises(ConfigurationError):
        solve_nlp(build_nlp(two_unit), Schedule(START), IpmConfig(**changes))


def test_monotone_barrier_never_increases(two_unit):
    seen = []
    solve_nlp(build_nlp(two_unit), Schedule(START),
              callback=lambda *args: seen.append(args[4]))
    assert all(later <= earlier for earlier, later in zip(seen, seen[1:]))


def _random_points(problem, count, seed):
    rng = np.random.default_rng(seed)
    lower, upper = problem.lower, problem.upper
    low = np.where(np.isfinite(lower), lower,
                   np.where(np.isfinite(upper), upper - 2.0, -1.0))
    high = np.where(np.isfinite(upper), upper, low + 2.0)
    return low + rng.uniform(size=(count, problem.n)) * (high - low)


def _central(function, x, direction, step=1e-5):
    return (function(x + step * direction)
            - function(x - step * direction)) / (2 * step)


def test_derivatives_at_random_points(two_unit):
    problem = _two_unit_problems(two_unit)[1]
    rng = np.random.default_rng(11)
    for x in _random_points(problem, 1000, 12):
        direction = rng.normal(size=problem.n)
        multipliers = rng.normal(size=problem.m)

        def lagrangian_gradient(point):
            return problem.gradient(point) \
                + problem.jacobian(point).T @ multipliers

        assert problem.gradient(x) @ direction == pytest.approx(
            _central(problem.objective, x, direction), rel=1e-6, abs=1e-6)
        np.testing.assert_allclose(
            problem.jacobian(x) @ direction,
            _central(problem.constraints, x, direction),
            rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(
            problem.hessian(x, multipliers) @ direction,
            _central(lagrangian_gradient, x, direction),
            rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize('which', [0, 2])
def test_derivatives_at_random_points_of_other_models(two_unit, which):
    problem = _two_unit_problems(two_unit)[which]
    rng = np.random.default_rng(20 + which)
    for x in _random_points(problem, 200, 30 + which):
        direction = rng.normal(size=problem.n)
        assert problem.gradient(x) @ direction == pytest.approx(
            _central(problem.objective, x, direction), rel=1e-6, abs=1e-6)
        np.testing.assert_allclose(
            problem.jacobian(x) @ direction,
            _central(problem.constraints, x, direction),
            rtol=1e-6, atol=1e-6)


def test_sine_split_is_complementary(two_unit):
    result = solve_nlp(build_nlp(two_unit, include_loss=False),
                       Schedule(START))
    assert result.status is IpmStatus.LOCAL_OPTIMUM
    assert np.all(np.minimum(result.u, result.v) <= 1e-6)
    np.testing.assert_allclose(result.s, result.u + result.v, atol=1e-8)


def test_restart_from_optimum_is_a_fixed_point(two_unit):
    units = [unit._replace(e=0.0, f=0.0, ramp_up=200.0, ramp_down=200.0)
             for unit in two_unit.units]
    instance = make_instance(units, two_unit.demand)
    problem = build_nlp(instance, include_loss=False)
    first = solve_nlp(problem, Schedule(START))
    assert first.status is IpmStatus.LOCAL_OPTIMUM
    np.testing.assert_allclose(first.schedule.outputs,
                               qp_dispatch(instance), atol=1e-4)
    restart = solve_nlp(problem, first.schedule, IpmConfig(initial_mu=1e-9))
    assert restart.status is IpmStatus.LOCAL_OPTIMUM
    assert restart.iterations <= 3
    np.testing.assert_allclose(restart.schedule.outputs,
                               first.schedule.outputs, atol=1e-6)


@pytest.mark.parametrize('seed', range(20))
def test_convex_instance_reaches_grid_minimum(seed):
    instance = random_instance(np.random.default_rng(500 + seed),
                               convex=True)
    midpoint = np.repeat(((instance.p_min + instance.p_max) / 2)[:, None],
                         instance.n_periods, axis=1)
    result = solve_nlp(build_nlp(instance, include_loss=False),
                       Schedule(midpoint))
    assert result.status is IpmStatus.LOCAL_OPTIMUM
    assert audit(instance, result.schedule, include_loss=False).passed
    assert cost.total_cost(instance, result.schedule) == pytest.approx(
        grid_minimum(instance), abs=0.05)


def test_merit_slope_matches_merit(two_unit):
    problem = build_nlp(two_unit)
    x = _perturbed_point(problem, seed=4)
    state = _InteriorPoint(problem, x, IpmConfig(), None)
    state.penalty = 50.0
    c = problem.constraints(x)
    assert np.all(c != 0)
    direction = np.random.default_rng(5).normal(size=problem.n)
    slope = state.merit_slope(
        state.barrier_gradient(x, state.obj_scale * problem.gradient(x)),
        c, direction, problem.jacobian(x) @ direction)
    step = 1e-6
    difference = (state.merit(x + step * direction)
                  - state.merit(x - step * direction)) / (2 * step)
    assert slope == pytest.approx(difference, rel=1e-4, abs=1e-3)


@pytest.mark.parametrize('include_loss', [False, True])
def test_proportional_start_converges(two_unit, include_loss):
    result = solve_single_ipm(
        two_unit, start_strategy='proportional-to-demand',
        include_loss=include_loss)
    assert result.status is IpmStatus.LOCAL_OPTIMUM
    assert result.primal_infeasibility <= 1e-6
    assert audit(two_unit, result.schedule,
                 include_loss=include_loss).passed


def test_converges_near_optimum_without_stalling(two_unit):
    problem = build_nlp(two_unit, include_loss=False)
    seen = []
    result = solve_nlp(problem, Schedule(START),
                       callback=lambda *args: seen.append(args))
    assert result.status is IpmStatus.LOCAL_OPTIMUM
    assert result.iterations < 100
    assert seen[-1][2] <= 1e-6
