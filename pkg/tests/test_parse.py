import os

import numpy as np
import pytest

from dispatch.feasibility import Tolerances
from dispatch.model import Schedule
from subcommands.audit import audit_schedule_file
from util.parse import \
    ParseError, \
    RunSummary, \
    format_instance, \
    format_report, \
    format_schedule, \
    instance_hash, \
    parse_instance, \
    parse_report, \
    parse_schedule, \
    scaled_time

from conftest import read_data

SMALL = """\
# two units
[units]
1  25  2.0  0.008  100  0.042  10  75   30  30
2  60  1.8  0.003  140  0.040  20  125  30  30  45

[demand]
1  80   # light
2  120

[bmatrix]
4.9e-5  1.4e-5
1.4e-5  4.5e-5

[reserve]
tau  0.5
1  10
2  10
"""


def test_parse_small_instance():
    instance = parse_instance(SMALL)
    assert (instance.n_units, instance.n_periods) == (2, 2)
    assert instance.units[1].initial_output == 45.0
    assert instance.units[0].initial_output is None
    assert instance.demand.tolist() == [80.0, 120.0]
    assert instance.b_matrix[0, 1] == 1.4e-5
    assert instance.tau == 0.5
    assert not instance.reserve_enabled


def test_instance_round_trip(five_unit, ten_unit):
    for instance in (parse_instance(SMALL), five_unit, ten_unit):
        again = parse_instance(format_instance(instance))
        assert again.units == instance.units
        np.testing.assert_array_equal(again.demand, instance.demand)
        np.testing.assert_array_equal(again.b_matrix, instance.b_matrix)
        assert instance_hash(again) == instance_hash(instance)


def test_hash_changes_with_data(five_unit):
    changed = five_unit._replace(demand=five_unit.demand + 1.0)
    assert instance_hash(changed) != instance_hash(five_unit)


@pytest.mark.parametrize('edit, message', [
    (('[bmatrix]\n4.9e-5  1.4e-5\n1.4e-5  4.5e-5\n', '[bmatrix]\n4.9e-5  '
      '1.4e-5\n'), 'line 10 [bmatrix]: 1 rows for 2 units'),
    (('2  120', '3  120'), 'line 8 [demand]: expected period 2, got 3'),
    (('0.003', 'x'), "line 4 [units]: not a number: 'x'"),
    (('[reserve]', '[spinning]'), 'line 14 [spinning]: unknown section'),
    (('[reserve]', '[b0]'), 'line 14 [b0]: linear loss coefficients'),
    (('tau  0.5\n', ''), 'line 14 [reserve]: missing tau'),
    (('# two units\n', '1  2\n'), 'line 1: data before the first section'),
])
def test_parse_errors_name_position(edit, message):
    text = SMALL.replace(*edit)
    with pytest.raises(ParseError) as error:
        parse_instance(text)
    assert str(error.value).startswith(message)


def test_parse_error_from_validation():
    text = SMALL.replace('10  75', '80  75')
    with pytest.raises(ParseError, match='unit 1: p_min 80.0') as error:
        parse_instance(text)
    assert error.value.section == 'units'


def test_sections_in_order():
    text = SMALL.replace('[demand]\n1  80   # light\n2  120\n\n', '') \
        + '\n[demand]\n1  80\n2  120\n'
    with pytest.raises(ParseError, match='sections must appear'):
        parse_instance(text)


def test_missing_demand():
    with pytest.raises(ParseError, match='missing section'):
        parse_instance('[units]\n1 25 2 0.008 100 0.042 10 75 30 30\n')


def test_reference_schedule_loss_column(five_unit):
    parsed = parse_schedule(read_data('schedules', 'five_unit_loss.txt'))
    assert parsed.decimals == 4
    assert parsed.header['loss'] == 'on'
    assert parsed.objective == 43084
    assert parsed.schedule.shape == (5, 24)
    assert parsed.loss[0] == 3.8155


@pytest.mark.parametrize('name, fixture, total', [
    ('five_unit_loss.txt', 'five_unit', 43084),
    ('five_unit_no_loss.txt', 'five_unit', 42524),
    ('ten_unit_loss.txt', 'ten_unit', 1040676),
    ('ten_unit_no_loss.txt', 'ten_unit', 1016311),
])
def test_reference_schedules_recompute(request, data_dir, name, fixture,
                                       total):
    instance = request.getfixturevalue(fixture)
    with open(os.path.join(data_dir, 'schedules', name), 'rb') as stream:
        raw = stream.read()
    assert b'\r' not in raw
    result = audit_schedule_file(instance, parse_schedule(raw.decode()))
    assert result.loss_error <= 5e-4
    assert result.balance_error <= 1e-4 + 5e-5
    assert not result.report.bound_violations
    assert result.objective_ok
    assert result.objective == pytest.approx(total, abs=1.0)


def test_five_unit_no_loss_schedule_passes_audit(five_unit):
    parsed = parse_schedule(read_data('schedules', 'five_unit_no_loss.txt'))
    result = audit_schedule_file(
        five_unit, parsed, tolerances=Tolerances(balance=1e-3))
    assert not result.include_loss
    assert result.passed


def test_schedule_round_trip(two_unit):
    outputs = np.array([[40.0, 50.0, 60.0], [40.123456789, 70.0, 90.0]])
    text = format_schedule(two_unit, Schedule(outputs),
                           {'method': 'hybrid', 'objective': 123.5},
                           decimals=None)
    parsed = parse_schedule(text)
    np.testing.assert_array_equal(parsed.schedule.outputs, outputs)
    assert parsed.decimals is None
    assert parsed.header['instance'] == instance_hash(two_unit)
    assert parsed.header['method'] == 'hybrid'
    assert parsed.objective == 123.5
    assert list(parsed.header)[:3] == ['loss', 'decimals', 'instance']


def test_schedule_rounded_body(two_unit):
    outputs = np.array([[40.0, 50.0, 60.0], [40.123456789, 70.0, 90.0]])
    text = format_schedule(two_unit, Schedule(outputs), include_loss=False)
    parsed = parse_schedule(text)
    assert parsed.decimals == 4
    assert parsed.header['loss'] == 'off'
    assert parsed.schedule.outputs[1, 0] == 40.1235
    np.testing.assert_array_equal(parsed.loss, 0.0)


@pytest.mark.parametrize('text, message', [
    ('# loss: on\n1 2 3\n', 'expected column line'),
    ('t P_1 loss dP\n1 40 0\n', 'expected 4 columns, got 3'),
    ('t P_1 loss dP\n2 40 0 0\n', 'expected period 1, got 2'),
    ('# only a header\n', 'no schedule rows'),
])
def test_schedule_errors(text, message):
    with pytest.raises(ParseError, match=message):
        parse_schedule(text)


def test_scaled_time():
    assert scaled_time(0.82, 2.5) == pytest.approx(0.8542, abs=1e-4)
    assert scaled_time(1.0, 2.4) == 1.0
    with pytest.raises(ValueError):
        scaled_time(1.0, 0.0)


def test_report_round_trip():
    summary = RunSummary(
        method='hybrid', status='solved', cost=43084.123, gap=0.0031,
        max_balance=7e-7, minutes=0.86, given_ghz=2.5, milp_cost=43210.5,
        unchanged_fraction=2 / 3)
    text = format_report(summary)
    assert 's_time_min: 0.8958' in text
    assert parse_report(text) == summary


def test_report_missing_field():
    with pytest.raises(ParseError, match='missing'):
        parse_report('method: milp\nstatus: proven-optimal\n')
