import logging
import os
import time

from keybench import common
from keybench.clock import SystemClock
from keybench.protocol import FIELD_SEPARATOR

logger = logging.getLogger(__name__)

EXPERIMENT_ID_ENV = 'KEYBENCH_EXPERIMENT_ID'
EXPERIMENT_ID_FORMAT = '%Y%m%d%H%M%S'


def establish_experiment_id(experiment_id_arg, clock=None):
    """determine and return an experiment id based on (in preference order):
       the --id argument,
       the KEYBENCH_EXPERIMENT_ID environment variable,
       the local date/time as YYYYmmddHHMMSS
    The id names the collector's data file and fills the timestamp column of
    AllResults.csv, so it must not contain the control-message separator.
    """
    experiment_id = experiment_id_arg or get_experiment_id(clock)
    if not experiment_id or FIELD_SEPARATOR in experiment_id:
        raise common.ConfigurationError("invalid experiment id '%s'" % experiment_id)
    logger.debug("Experiment id %s" % experiment_id)
    return experiment_id


def get_experiment_id(clock=None) -> str:
    if os.environ.get(EXPERIMENT_ID_ENV):
        return os.environ[EXPERIMENT_ID_ENV]
    when = clock.wall() if clock is not None else time.time()
    return time.strftime(EXPERIMENT_ID_FORMAT, time.localtime(when))


def batch_experiment_id(number, previous=None, clock=None, experiment_id_arg=None):
    """
    The id for experiment number (1-based) of a batch. The collector takes a
    repeated GETREADY for a duplicate, so consecutive ids must differ: a
    forced id gets '-<number>' appended, and a clock id waits for the next
    second when it would repeat the previous one.
    """
    forced = experiment_id_arg or os.environ.get(EXPERIMENT_ID_ENV)
    if forced:
        return establish_experiment_id("%s-%d" % (forced, number))
    clock = clock or SystemClock()
    experiment_id = establish_experiment_id(None, clock)
    while experiment_id == previous:
        clock.sleep(max(1.0 - clock.wall() % 1.0, 0.001))
        experiment_id = establish_experiment_id(None, clock)
    return experiment_id
