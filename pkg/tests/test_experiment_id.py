import re
import time

import pytest

from keybench.clock import DEFAULT_VIRTUAL_EPOCH, VirtualClock
from keybench.common import ConfigurationError
from keybench.experiment_id import (EXPERIMENT_ID_ENV, EXPERIMENT_ID_FORMAT, batch_experiment_id,
                                    establish_experiment_id)
from tests.basetest import envvar


def test_argument_wins():
    with envvar(EXPERIMENT_ID_ENV, 'from-env'):
        assert establish_experiment_id('from-arg') == 'from-arg'


def test_environment():
    with envvar(EXPERIMENT_ID_ENV, 'from-env'):
        assert establish_experiment_id(None) == 'from-env'


def test_from_clock():
    experiment_id = establish_experiment_id(None, VirtualClock())
    assert experiment_id == time.strftime(EXPERIMENT_ID_FORMAT, time.localtime(DEFAULT_VIRTUAL_EPOCH))


def test_from_system_time():
    assert re.match(r'[0-9]{14}\Z', establish_experiment_id(None))


def test_separator_rejected():
    with pytest.raises(ConfigurationError):
        establish_experiment_id('run|1')


def test_batch_numbers_forced_id():
    with envvar(EXPERIMENT_ID_ENV, 'from-env'):
        assert batch_experiment_id(1, None, VirtualClock()) == 'from-env-1'
        assert batch_experiment_id(2, 'from-env-1', VirtualClock()) == 'from-env-2'
    assert batch_experiment_id(3, experiment_id_arg='from-arg') == 'from-arg-3'


def test_batch_waits_for_next_second():
    clock = VirtualClock(start=0.25)
    first = batch_experiment_id(1, None, clock)
    assert clock.now() == 0.25
    second = batch_experiment_id(2, first, clock)
    assert second != first
    assert 1.0 <= clock.now() < 1.01
    assert second == time.strftime(EXPERIMENT_ID_FORMAT, time.localtime(DEFAULT_VIRTUAL_EPOCH + 1))
