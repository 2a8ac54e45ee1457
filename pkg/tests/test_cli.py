import numpy as np
import pytest

import ded_vpe
from dispatch.model import \
    Schedule, \
    make_instance
from subcommands import \
    EXIT_INFEASIBLE, \
    EXIT_INPUT, \
    EXIT_OK
from util.parse import \
    format_instance, \
    format_schedule, \
    parse_report, \
    parse_schedule


def _run(tmp_path, *argv):
    """Run the driver and return its exit code, None if it returned."""
    log = str(tmp_path / 'log.txt')
    try:
        ded_vpe.main(['--log', log, '-v'] + [str(arg) for arg in argv])
    except SystemExit as error:
        return error.code
    return None


@pytest.fixture
def instance_file(tmp_path, two_unit):
    path = tmp_path / 'two_unit.txt'
    path.write_text(format_instance(two_unit))
    return path


def test_solve_then_audit(tmp_path, instance_file):
    schedule_path = tmp_path / 'schedule.txt'
    report_path = tmp_path / 'report.txt'
    code = _run(tmp_path, 'solve', instance_file, '--out', schedule_path,
                '--report', report_path, '--decimals', '-1')
    assert code == EXIT_OK
    parsed = parse_schedule(schedule_path.read_text())
    assert parsed.header['method'] == 'hybrid'
    assert parsed.header['loss'] == 'on'
    assert parsed.decimals is None
    assert parsed.schedule.shape == (2, 3)
    summary = parse_report(report_path.read_text())
    assert summary.cost == pytest.approx(parsed.objective)
    assert summary.status == 'solved'

    audit_path = tmp_path / 'audit.txt'
    code = _run(tmp_path, 'audit', schedule_path, instance_file,
                '--strict-objective', '--output', audit_path)
    assert code == EXIT_OK
    text = audit_path.read_text()
    assert 'result: passed' in text
    assert 'instance: ok' in text


def test_rounded_schedule_passes_audit(tmp_path, instance_file):
    schedule_path = tmp_path / 'schedule.txt'
    assert _run(tmp_path, 'solve', instance_file, '--out',
                schedule_path) == EXIT_OK
    assert parse_schedule(schedule_path.read_text()).decimals == 4
    assert _run(tmp_path, 'audit', schedule_path, instance_file, '--output',
                tmp_path / 'audit.txt') == EXIT_OK


@pytest.mark.parametrize('method, loss', [('milp', 'off'), ('ipm', 'on')])
def test_other_methods(tmp_path, instance_file, method, loss):
    schedule_path = tmp_path / 'schedule.txt'
    code = _run(tmp_path, 'solve', instance_file, '--method', method,
                '--out', schedule_path)
    assert code == EXIT_OK
    parsed = parse_schedule(schedule_path.read_text())
    assert parsed.header['method'] == method
    assert parsed.header['loss'] == loss


def test_solve_with_reserve(tmp_path, instance_file):
    schedule_path = tmp_path / 'schedule.txt'
    assert _run(tmp_path, 'solve', instance_file, '--reserve', 'on',
                '--out', schedule_path) == EXIT_OK
    assert _run(tmp_path, 'audit', schedule_path, instance_file,
                '--reserve', 'on', '--output',
                tmp_path / 'audit.txt') == EXIT_OK


def test_cpu_speed_from_environment(tmp_path, instance_file, monkeypatch):
    monkeypatch.setenv('DED_VPE_CPU_GHZ', '3.0')
    report_path = tmp_path / 'report.txt'
    _run(tmp_path, 'solve', instance_file, '--method', 'milp', '--out',
         tmp_path / 'schedule.txt', '--report', report_path)
    assert parse_report(report_path.read_text()).given_ghz == 3.0


def test_audit_fails_on_missing_loss(tmp_path, instance_file, two_unit):
    schedule_path = tmp_path / 'schedule.txt'
    outputs = np.array([[40.0, 50.0, 60.0], [40.0, 70.0, 90.0]])
    schedule_path.write_text(format_schedule(
        two_unit, Schedule(outputs), include_loss=False))
    assert _run(tmp_path, 'audit', schedule_path, instance_file, '--output',
                tmp_path / 'ok.txt') == EXIT_OK
    assert _run(tmp_path, 'audit', schedule_path, instance_file, '--loss',
                'on', '--output',
                tmp_path / 'failed.txt') == EXIT_INFEASIBLE
    assert 'result: failed' in (tmp_path / 'failed.txt').read_text()


def test_audit_rejects_wrong_shape(tmp_path, instance_file):
    schedule_path = tmp_path / 'schedule.txt'
    schedule_path.write_text('t P_1 loss dP\n1 40 0 0\n')
    assert _run(tmp_path, 'audit', schedule_path, instance_file, '--output',
                tmp_path / 'audit.txt') == EXIT_INPUT


def test_export_mps(tmp_path, instance_file):
    mps_path = tmp_path / 'model.mps'
    assert _run(tmp_path, 'export-mps', instance_file, '--name', 'TWO',
                '--output', mps_path) is None
    lines = mps_path.read_text().splitlines()
    assert lines[0] == 'NAME          TWO'
    assert lines[-1] == 'ENDATA'


@pytest.mark.parametrize('command, output', [
    ('solve', '--out'), ('export-mps', '--output')])
def test_bad_instance(tmp_path, command, output):
    path = tmp_path / 'bad.txt'
    path.write_text('[units]\n1 25 2 0.008\n')
    assert _run(tmp_path, command, path, output,
                tmp_path / 'out.txt') == EXIT_INPUT


def test_loss_without_bmatrix(tmp_path, rippled_unit):
    path = tmp_path / 'one.txt'
    path.write_text(format_instance(make_instance([rippled_unit], [40.0])))
    assert _run(tmp_path, 'solve', path, '--loss', 'on', '--out',
                tmp_path / 'out.txt') == EXIT_INPUT


@pytest.mark.parametrize('demand', [[20.0, 70.0], [80.0]])
def test_infeasible_instance(tmp_path, rippled_unit, demand):
    path = tmp_path / 'one.txt'
    path.write_text(format_instance(make_instance([rippled_unit], demand)))
    assert _run(tmp_path, 'solve', path, '--out',
                tmp_path / 'out.txt') == EXIT_INFEASIBLE


def test_bad_settings(tmp_path, instance_file):
    for option in [['--segments', '0'], ['--gap', '-1']]:
        assert _run(tmp_path, 'solve', instance_file, '--out',
                    tmp_path / 'out.txt', *option) == EXIT_INPUT
