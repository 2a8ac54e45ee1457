import numpy as np
import pytest

from dispatch.branch_and_bound import \
    BnbConfig, \
    BnbStatus, \
    NODE_SELECTIONS, \
    primal_heuristic_round, \
    relative_gap, \
    solve_milp
from dispatch.feasibility import audit
from dispatch.lp_simplex import solve_lp
from dispatch.milp_builder import \
    build_milp, \
    encode, \
    max_violation
from dispatch.model import \
    ConfigurationError, \
    Schedule, \
    make_instance

from oracles import \
    enumerate_milp, \
    random_instance


@pytest.mark.parametrize('seed', range(20))
def test_matches_enumeration(seed):
    instance = random_instance(np.random.default_rng(seed))
    model = build_milp(instance, 1)
    result = solve_milp(model, BnbConfig(rel_gap=0.0))
    assert result.status is BnbStatus.OPTIMAL
    assert result.objective == pytest.approx(
        enumerate_milp(model), rel=1e-7, abs=1e-6)
    assert result.bound == pytest.approx(result.objective, rel=1e-7)


@pytest.mark.parametrize('selection', NODE_SELECTIONS)
def test_node_selections_agree(selection):
    instance = random_instance(np.random.default_rng(42), n_periods=3)
    model = build_milp(instance, 2)
    reference = solve_milp(model, BnbConfig(rel_gap=0.0))
    result = solve_milp(
        model, BnbConfig(rel_gap=0.0, node_selection=selection))
    assert result.status is BnbStatus.OPTIMAL
    assert result.objective == pytest.approx(reference.objective, rel=1e-7)


def test_threads_give_the_same_optimum():
    instance = random_instance(np.random.default_rng(3), n_units=3,
                               n_periods=2)
    model = build_milp(instance, 2)
    serial = solve_milp(model, BnbConfig(rel_gap=0.0))
    parallel = solve_milp(model, BnbConfig(rel_gap=0.0, threads=2))
    assert parallel.status is BnbStatus.OPTIMAL
    assert parallel.objective == pytest.approx(serial.objective, rel=1e-7)


def test_incumbent_is_feasible_schedule(two_unit):
    model = build_milp(two_unit, 4)
    result = solve_milp(model, BnbConfig(rel_gap=1e-4))
    assert result.status in (BnbStatus.OPTIMAL, BnbStatus.GAP_REACHED)
    assert result.gap <= 1e-4
    assert result.bound <= result.objective + 1e-9
    assert max_violation(model.lp, result.x) <= 1e-6
    assert audit(two_unit, result.schedule, include_loss=False).passed


def test_bound_never_exceeds_incumbent_along_the_way(two_unit):
    seen = []
    result = solve_milp(build_milp(two_unit, 4), BnbConfig(rel_gap=0.0),
                        progress=lambda *args: seen.append(args))
    assert seen and seen[-1][0] == result.nodes
    for _, bound, incumbent, _ in seen:
        assert bound <= incumbent + 1e-9
    bounds = [bound for _, bound, _, _ in seen]
    assert all(b2 >= b1 - 1e-9 for b1, b2 in zip(bounds, bounds[1:]))


def test_root_bound_is_lp_relaxation(two_unit):
    model = build_milp(two_unit, 4)
    relaxation = solve_lp(model.lp)
    result = solve_milp(model, BnbConfig(rel_gap=0.0))
    assert result.bound >= relaxation.objective - 1e-7


def test_infeasible_ramps(rippled_unit):
    # ramp of 30 cannot follow a load step of 50
    model = build_milp(make_instance([rippled_unit], [20.0, 70.0]), 4)
    result = solve_milp(model)
    assert result.status is BnbStatus.INFEASIBLE
    assert result.schedule is None
    assert result.objective == np.inf


def test_node_limit(five_unit):
    result = solve_milp(build_milp(five_unit, 4),
                        BnbConfig(rel_gap=0.0, node_limit=3))
    assert result.status is BnbStatus.LIMIT
    assert result.nodes == 3


def test_heuristic_keeps_integral_solution(two_unit):
    model = build_milp(two_unit, 4)
    outputs = np.array([[40.0, 50.0, 60.0], [40.0, 70.0, 90.0]])
    schedule = primal_heuristic_round(
        model, encode(model, Schedule(outputs)))
    np.testing.assert_allclose(schedule.outputs, outputs)


def test_heuristic_result_is_feasible(two_unit):
    model = build_milp(two_unit, 4)
    schedule = primal_heuristic_round(model, solve_lp(model.lp).x)
    if schedule is not None:
        assert max_violation(model.lp, encode(model, schedule)) <= 1e-6
        np.testing.assert_allclose(
            schedule.outputs.sum(axis=0), two_unit.demand, atol=1e-6)


def test_heuristic_moves_across_chords(two_unit):
    model = build_milp(two_unit, 4)
    outputs = np.array([[40.0, 50.0, 60.0], [40.0, 70.0, 90.0]])
    x = encode(model, Schedule(outputs))
    x[model.p_columns[0]] -= 15.0
    schedule = primal_heuristic_round(model, x)
    assert schedule is not None
    np.testing.assert_allclose(
        schedule.outputs.sum(axis=0), two_unit.demand, atol=1e-6)
    assert max_violation(model.lp, encode(model, schedule)) <= 1e-6
    assert audit(two_unit, schedule, include_loss=False).passed


def test_heuristic_respects_ramps_from_rounded_period(rippled_unit):
    instance = make_instance([rippled_unit, rippled_unit], [60.0, 110.0])
    model = build_milp(instance, 4)
    x = encode(model, Schedule(np.array([[30.0, 55.0], [30.0, 55.0]])))
    x[model.p_columns[:, 0]] = [20.0, 40.0]
    schedule = primal_heuristic_round(model, x)
    assert schedule is not None
    steps = np.diff(schedule.outputs, axis=1)
    assert np.all(np.abs(steps) <= rippled_unit.ramp_up + 1e-9)
    np.testing.assert_allclose(
        schedule.outputs.sum(axis=0), instance.demand, atol=1e-6)


def test_root_finds_incumbent_on_five_unit(five_unit):
    result = solve_milp(build_milp(five_unit, 4), BnbConfig(node_limit=1))
    assert result.status in (BnbStatus.LIMIT, BnbStatus.GAP_REACHED)
    assert np.isfinite(result.objective)
    assert result.bound <= result.objective
    assert audit(five_unit, result.schedule, include_loss=False).passed


@pytest.mark.slow
def test_five_unit_reaches_gap(five_unit):
    result = solve_milp(build_milp(five_unit, 4),
                        BnbConfig(rel_gap=0.032, time_limit=240.0))
    assert result.status in (BnbStatus.OPTIMAL, BnbStatus.GAP_REACHED)
    assert result.gap <= 0.032
    assert result.objective <= 42563 * 1.032


def test_relative_gap():
    assert relative_gap(100.0, 99.0) == pytest.approx(0.01)
    assert relative_gap(0.5, 0.0) == pytest.approx(0.5)
    assert relative_gap(100.0, 101.0) == 0.0
    assert relative_gap(np.inf, 0.0) == np.inf


@pytest.mark.parametrize('changes', [
    {'rel_gap': -0.1},
    {'node_limit': 0},
    {'time_limit': -1.0},
    {'branching': 'strong'},
    {'node_selection': 'breadth-first'},
    {'int_tol': 0.5},
    {'threads': 0},
])
def test_config_rejected(two_unit, changes):
    with pytest.raises(ConfigurationError):
        solve_milp(build_milp(two_unit, 4), BnbConfig(**changes))
