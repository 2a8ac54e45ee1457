import pytest

from subcommands.bench import \
    CASES, \
    BenchCase, \
    BenchRow, \
    format_bench, \
    run_case


def test_format_bench():
    rows = [
        BenchRow('case1', 'milp', 42600.0, 0.5, 42563, 0.82, 'optimal'),
        BenchRow('case3', 'ipm:flat-midpoint', 43500.0, 0.01, None, None,
                 'local-optimum'),
    ]
    lines = format_bench(rows).splitlines()
    assert lines[0].split() == ['case', 'method', 'cost', 'published',
                                'diff%', 's_time', 'pub_time', 'status']
    assert lines[1].split() == ['case1', 'milp', '42600.00', '42563',
                                '+0.087', '0.5000', '0.82', 'optimal']
    assert lines[2].split()[3:5] == ['n/a', 'n/a']


def test_cases_cover_both_systems():
    assert [case.fixture for case in CASES] == [
        'five_unit.txt', 'ten_unit.txt', 'five_unit.txt', 'ten_unit.txt']
    assert [case.include_loss for case in CASES] == [
        False, False, True, True]


def test_loss_free_case_reports_milp(two_unit):
    case = BenchCase('small', 'two_unit.txt', False, 0.0,
                     {'milp': (100.0, 1.0)})
    rows = run_case(case, two_unit)
    assert [row.method for row in rows] == ['milp', 'hybrid']
    assert rows[0].published_cost == 100.0
    assert rows[1].published_cost is None
    assert rows[1].cost <= rows[0].cost + 1e-6


def test_lossy_case_reports_both_starts(two_unit):
    case = BenchCase('small', 'two_unit.txt', True, 0.0,
                     {'ipm': (100.0, 1.0)})
    rows = run_case(case, two_unit, given_ghz=4.8)
    assert [row.method for row in rows] == [
        'ipm:flat-midpoint', 'ipm:proportional-to-demand', 'hybrid']
    assert [row.published_cost for row in rows] == [100.0, 100.0, None]
    assert all(row.minutes >= 0 for row in rows)
    assert rows[-1].status == 'solved'


@pytest.mark.slow
def test_first_case(five_unit):
    rows = run_case(CASES[0], five_unit)
    assert rows[0].cost <= 42563 * 1.001
