"""Shared fixtures of the test suite."""
import os

import numpy as np
import pytest

from dispatch.model import \
    UnitParams, \
    make_instance
from util.parse import parse_instance


DATA_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'data')


def pytest_addoption(parser):
    parser.addoption(
        '--runslow', action='store_true', default=False,
        help='Run benchmark-scale solves.')


def pytest_configure(config):
    config.addinivalue_line(
        'markers', 'slow: benchmark-scale solve, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def read_data(*parts: str) -> str:
    with open(os.path.join(DATA_DIR, *parts)) as stream:
        return stream.read()


@pytest.fixture(scope='session')
def data_dir():
    return DATA_DIR


@pytest.fixture(scope='session')
def five_unit():
    return parse_instance(read_data('five_unit.txt'))


@pytest.fixture(scope='session')
def ten_unit():
    return parse_instance(read_data('ten_unit.txt'))


@pytest.fixture
def rippled_unit():
    return UnitParams(
        alpha=25.0, beta=2.0, gamma=0.008, e=100.0, f=0.042, p_min=10.0,
        p_max=75.0, ramp_up=30.0, ramp_down=30.0)


@pytest.fixture
def one_unit(rippled_unit):
    """One unit, one period, demand inside the range."""
    return make_instance([rippled_unit], [40.0])


@pytest.fixture
def two_unit():
    """Two units over three periods with binding ramps and a B-matrix."""
    units = [
        UnitParams(alpha=25.0, beta=2.0, gamma=0.008, e=100.0, f=0.042,
                   p_min=10.0, p_max=75.0, ramp_up=30.0, ramp_down=30.0),
        UnitParams(alpha=60.0, beta=1.8, gamma=0.003, e=140.0, f=0.04,
                   p_min=20.0, p_max=125.0, ramp_up=30.0, ramp_down=30.0),
        ]
    b_matrix = np.array([[4.9e-5, 1.4e-5], [1.4e-5, 4.5e-5]])
    return make_instance(units, [80.0, 120.0, 150.0], b_matrix,
                         reserve_req=[10.0, 10.0, 15.0], tau=0.5)
