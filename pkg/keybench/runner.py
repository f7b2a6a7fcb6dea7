"""
The device-under-test side of an experiment.

run_experiment() pins the platform, tells the collector to get ready, runs
the workload a fixed number of times between START and STOP, and puts the
platform back the way it was. The loop is deliberately single-threaded and
prints nothing while the workload runs.
"""
from __future__ import annotations

import logging
import re
import shlex
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Optional, Tuple

from keybench import common
from keybench.clock import Clock, SystemClock
from keybench.executable import Executable
from keybench.experiment_id import batch_experiment_id, establish_experiment_id
from keybench.protocol import (MAX_POLL_HZ, ControlClient, ControlMessage, ExperimentParams,
                               as_poll_hz)

logger = logging.getLogger('keybench.runner')

NULL_ALGORITHM = 'NULL'
# a NULL iteration stands in for one key generation
NULL_DELAY = 0.005
DEFAULT_SETTLE_SECONDS = 5.0

_COUNT_RE = re.compile(r'[0-9]+\Z')
_TEMPERATURE_RE = re.compile(r'-?[0-9]+(?:\.[0-9]+)?')


class BatchParseError(common.ConfigurationError):
    def __init__(self, line_number: int, message: str):
        super(BatchParseError, self).__init__("batch line %d: %s" % (line_number, message))
        self.line_number = line_number


class KeygenEnvironmentError(common.EnvironmentProblem):
    pass


class KeygenError(common.WorkloadError):
    def __init__(self, algorithm_label: str, iteration: int, detail: str = ''):
        message = "key generation '%s' failed at iteration %d" % (algorithm_label, iteration)
        if detail:
            message += ": " + detail
        super(KeygenError, self).__init__(message)
        self.algorithm_label = algorithm_label
        self.iteration = iteration


@dataclass(frozen=True)
class ExperimentSpec:
    algorithm_label: str
    iterations: int
    settle_seconds: float = DEFAULT_SETTLE_SECONDS
    poll_hz: Fraction = Fraction(10)

    def __post_init__(self):
        if not self.algorithm_label or not self.algorithm_label.strip():
            raise common.ConfigurationError("no algorithm given")
        if isinstance(self.iterations, bool) or not isinstance(self.iterations, int) or self.iterations < 1:
            raise common.ConfigurationError("iterations must be a positive integer, not %r" % (self.iterations,))
        if self.settle_seconds < 0:
            raise common.ConfigurationError("settle time must be >= 0, not %s" % self.settle_seconds)
        hz = as_poll_hz(self.poll_hz)
        if not 0 < hz <= MAX_POLL_HZ:
            raise common.ConfigurationError("poll rate %s Hz outside (0, %s]" % (hz, MAX_POLL_HZ))
        object.__setattr__(self, 'poll_hz', hz)

    @property
    def is_null(self) -> bool:
        return self.algorithm_label == NULL_ALGORITHM


@dataclass(frozen=True)
class BatchLine:
    algorithm_label: str
    iterations: int

    def render(self) -> str:
        return "%s,%d" % (self.algorithm_label, self.iterations)


def parse_batch_file(text: str) -> List[BatchLine]:
    """
    One '<algorithm>,<iterations>' per line; blank lines and '#' comments are
    skipped. Lines split at the last comma since algorithm descriptors hold
    spaces and colons but no commas.
    """
    lines = []
    for line_number, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        label, comma, count = stripped.rpartition(',')
        if not comma:
            raise BatchParseError(line_number, "missing comma in '%s'" % stripped)
        label = label.strip()
        count = count.strip()
        if not label:
            raise BatchParseError(line_number, "no algorithm before the comma")
        if not _COUNT_RE.match(count) or int(count) < 1:
            raise BatchParseError(line_number, "iterations '%s' is not a positive integer" % count)
        lines.append(BatchLine(label, int(count)))
    return lines


def read_batch_file(path: str) -> List[BatchLine]:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as err:
        raise common.ConfigurationError("cannot read batch file %s: %s" % (path, err))
    return parse_batch_file(text)


def null_iteration(clock: Optional[Clock] = None):
    (clock or SystemClock()).sleep(NULL_DELAY)


def split_algorithm(algorithm_label: str) -> Tuple[str, List[str]]:
    """'EC -pkeyopt ec_paramgen_curve:P-521' -> ('EC', ['-pkeyopt', 'ec_paramgen_curve:P-521'])"""
    try:
        tokens = shlex.split(algorithm_label)
    except ValueError as err:
        raise common.ConfigurationError("cannot parse algorithm '%s': %s" % (algorithm_label, err))
    if not tokens:
        raise common.ConfigurationError("empty algorithm")
    return tokens[0], tokens[1:]


def default_keygen() -> Executable:
    return Executable(command='openssl',
                      options=['genpkey', '-algorithm', '{algorithm}', '{params}'])


def resolve_keygen(keygen: Optional[Executable] = None) -> Executable:
    """Locate the key generator once; the per-iteration calls skip the PATH search."""
    keygen = keygen or default_keygen()
    found = keygen.resolve()
    if found is None:
        raise KeygenEnvironmentError("key generator '%s' not found on PATH" % keygen.get_command())
    return Executable(command=found, parent=keygen)


def keygen_invoke(algorithm_label: str, keygen: Optional[Executable] = None) -> bool:
    """Generate and discard one key; True iff the generator exited 0."""
    if algorithm_label == NULL_ALGORITHM:
        raise common.ConfigurationError("NULL runs do not invoke the key generator")
    algorithm, params = split_algorithm(algorithm_label)
    keygen = resolve_keygen(keygen)
    try:
        status = keygen(substitutions=dict(algorithm=algorithm, params=params))
    except OSError as err:
        raise KeygenEnvironmentError("cannot run '%s': %s" % (keygen.get_command(), err))
    if status != 0:
        logger.debug("'%s' exited %s" % (algorithm_label, status))
    return status == 0


def make_workload(algorithm_label: str, keygen: Optional[Executable] = None,
                  clock: Optional[Clock] = None) -> Callable[[], bool]:
    """A zero-argument callable performing one iteration, returning success."""
    clock = clock or SystemClock()
    if algorithm_label == NULL_ALGORITHM:
        def workload():
            null_iteration(clock)
            return True
        return workload
    split_algorithm(algorithm_label)
    resolved = resolve_keygen(keygen)
    return lambda: keygen_invoke(algorithm_label, resolved)


def parse_temperature(text: str) -> Optional[float]:
    """First decimal number in a temperature sensor's output: "temp=45.2'C" -> 45.2"""
    match = _TEMPERATURE_RE.search(text or '')
    return float(match.group(0)) if match else None


class PlatformHooks(object):
    """
    Optional commands that pin and restore the DUT: fan to full, CPU clock
    fixed, and a temperature sensor. Every hook defaults to a no-op.
    """

    def __init__(self, set_fan_max: Optional[Executable] = None, pin_cpu_clock: Optional[Executable] = None,
                 restore: Optional[Executable] = None, read_temp: Optional[Executable] = None):
        self.set_fan_max = set_fan_max
        self.pin_cpu_clock = pin_cpu_clock
        self.restore_command = restore
        self.read_temp_command = read_temp

    @classmethod
    def from_config(cls, config) -> 'PlatformHooks':
        return cls(**config.get_hooks())

    def _run(self, name: str, hook: Optional[Executable]) -> bool:
        if hook is None:
            logger.debug("no %s hook" % name)
            return False
        try:
            status = hook()
        except OSError as err:
            logger.warning("%s hook '%s' could not run: %s" % (name, hook, err))
            return False
        if status != 0:
            logger.warning("%s hook '%s' exited %s" % (name, hook, status))
            return False
        return True

    def apply(self) -> bool:
        """Run the pinning hooks; True only if all of them are present and succeed."""
        fan = self._run('set_fan_max', self.set_fan_max)
        cpu = self._run('pin_cpu_clock', self.pin_cpu_clock)
        return fan and cpu

    def restore(self) -> bool:
        return self._run('restore', self.restore_command)

    def read_temp(self) -> Optional[float]:
        if self.read_temp_command is None:
            return None
        try:
            status, output = self.read_temp_command.output()
        except OSError as err:
            logger.warning("read_temp hook could not run: %s" % err)
            return None
        if status != 0:
            logger.warning("read_temp hook exited %s" % status)
            return None
        temperature = parse_temperature(output)
        if temperature is None:
            logger.warning("no temperature in read_temp output %r" % output)
        return temperature


@dataclass
class DutRunReport:
    experiment_id: str
    algorithm_label: str
    iterations: int
    wall_seconds: float = 0.0
    workload_seconds: float = 0.0
    start_temp: Optional[float] = None
    stop_temp: Optional[float] = None
    iterations_completed: int = 0
    unpinned: bool = True


def _format_temp(temp: Optional[float]) -> str:
    return "n/a" if temp is None else "%.1f'C" % temp


def run_experiment(spec: ExperimentSpec, hooks: Optional[PlatformHooks] = None,
                   collector_addr: Optional[Tuple[str, int]] = None,
                   keygen: Optional[Executable] = None,
                   clock: Optional[Clock] = None,
                   experiment_id: Optional[str] = None,
                   client: Optional[ControlClient] = None,
                   workload: Optional[Callable[[], bool]] = None,
                   dry_run: bool = False,
                   say: Callable[[str], None] = print) -> DutRunReport:
    """
    GETREADY, pin, settle, START, exactly spec.iterations workload calls,
    STOP, restore. The restore hook runs on every exit path; a failing
    workload still gets its STOP sent before the error propagates.
    """
    clock = clock or SystemClock()
    hooks = hooks or PlatformHooks()
    experiment_id = establish_experiment_id(experiment_id, clock)
    report = DutRunReport(experiment_id, spec.algorithm_label, spec.iterations)

    if dry_run:
        if spec.is_null:
            say("Would run %d NULL iterations of %.0f ms" % (spec.iterations, NULL_DELAY * 1000))
        else:
            algorithm, params = split_algorithm(spec.algorithm_label)
            command = (keygen or default_keygen()).command_list(
                substitutions=dict(algorithm=algorithm, params=params))
            say("Would run %d times: %s" % (spec.iterations, ' '.join(command)))
        return report

    if workload is None:
        workload = make_workload(spec.algorithm_label, keygen, clock)
    params = ExperimentParams(experiment_id, spec.algorithm_label, spec.iterations, spec.poll_hz)
    if client is None:
        if collector_addr is None:
            raise common.ConfigurationError("no collector address")
        client = ControlClient(collector_addr)

    began = clock.now()
    with client:
        say("UDP: Sent '%s'" % client.send(ControlMessage.get_ready(params)))
        say("Starting experiment %s: %d x %s" % (experiment_id, spec.iterations, spec.algorithm_label))
        try:
            say("Setting up environment (fan to maximum, CPU clock fixed)")
            report.unpinned = not hooks.apply()
            if report.unpinned:
                logger.warning("unpinned environment: fan/CPU hooks absent or failed")
            clock.sleep(spec.settle_seconds)
            report.start_temp = hooks.read_temp()
            say("Start Temperature: %s" % _format_temp(report.start_temp))

            say("UDP: Sent '%s'" % client.send(ControlMessage.start()))
            say("STARTing experiment: %d iterations of %s" % (spec.iterations, spec.algorithm_label))
            workload_began = clock.now()
            try:
                for index in range(spec.iterations):
                    try:
                        succeeded = workload()
                    except common.KeybenchError:
                        raise
                    except OSError as err:
                        raise KeygenError(spec.algorithm_label, index + 1, str(err))
                    if not succeeded:
                        raise KeygenError(spec.algorithm_label, index + 1)
                    report.iterations_completed += 1
            finally:
                report.workload_seconds = clock.now() - workload_began
                stop_text = client.send(ControlMessage.stop())
            say("Experiment finished")
            say("UDP: Sent '%s'" % stop_text)
            report.stop_temp = hooks.read_temp()
            report.wall_seconds = clock.now() - began
            say("Time to run: %.3f seconds (workload %.3f s)" % (report.wall_seconds, report.workload_seconds))
            say("Start Temperature: %s" % _format_temp(report.start_temp))
            say("Stop Temperature: %s" % _format_temp(report.stop_temp))
        finally:
            hooks.restore()
            say("Environment restored to defaults")
    return report


def run_batch(path, iteration_override: Optional[int] = None,
              run: Optional[Callable[[ExperimentSpec], DutRunReport]] = None,
              settle_seconds: float = DEFAULT_SETTLE_SECONDS,
              poll_hz: Fraction = Fraction(10),
              **run_kwds) -> List[DutRunReport]:
    """
    Run every line of the batch file at path (or an already-parsed list of
    BatchLine) in order, each with its own experiment id. The first failure
    propagates; reports of the experiments before it are attached to the
    exception as 'reports'. A custom run picks its own ids.
    """
    if iteration_override is not None and iteration_override < 1:
        raise common.ConfigurationError("iteration override must be >= 1, not %s" % iteration_override)
    lines = read_batch_file(path) if isinstance(path, str) else list(path)
    forced_id = run_kwds.pop('experiment_id', None)
    experiment_id = None
    reports = []
    for number, line in enumerate(lines, 1):
        iterations = iteration_override if iteration_override is not None else line.iterations
        spec = ExperimentSpec(line.algorithm_label, iterations, settle_seconds, poll_hz)
        logger.info("batch experiment %d of %d: %s" % (number, len(lines), BatchLine(spec.algorithm_label, iterations).render()))
        try:
            if run is not None:
                reports.append(run(spec))
                continue
            if run_kwds.get('dry_run'):
                experiment_id = forced_id
            else:
                experiment_id = batch_experiment_id(number, experiment_id, run_kwds.get('clock'), forced_id)
            reports.append(run_experiment(spec, experiment_id=experiment_id, **run_kwds))
        except common.KeybenchError as err:
            err.reports = reports
            raise
    return reports
