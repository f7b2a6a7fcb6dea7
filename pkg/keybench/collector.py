"""
The measurement node: listens for control datagrams, polls the meter between
START and STOP, writes one data CSV per experiment and one summary line per
experiment to AllResults.csv.

Three roles run concurrently and only ever exchange values through the
coordinator's inbox queue:

    listener     UDP socket -> ('control', ControlMessage, sender)
    acquisition  meter      -> ('reading', MeterReading) ... ('acquisition-done', None)
    coordinator  owns the CollectorState, the session and its files
"""
from __future__ import annotations

import collections
import csv
import datetime
import logging
import os
import queue
import re
import socket
import sys
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

from keybench import common, interactive
from keybench.analysis import ALL_RESULTS_COLUMNS, ALL_RESULTS_FILE, mwh_to_joules
from keybench.clock import Clock, SystemClock
from keybench.meter import MeterBackend, MeterReading, MeterSampleError
from keybench.protocol import (CollectorState, ControlDecodeError, ControlMessage, ExperimentParams,
                               MessageKind, ProtocolOrderError, advance_state, decode_control,
                               format_poll_hz, is_duplicate)

logger = logging.getLogger('keybench.collector')

DATA_FILE_VERSION = 1
DATA_COLUMNS = ('timestamp', 'elapsed_s', 'voltage_v', 'current_a', 'power_w', 'energy_mwh', 'energy_j')
DEFAULT_IDLE_TIMEOUT = 120.0
MAX_CONSECUTIVE_FAILURES = 3
FLUSH_INTERVAL = 1.0
# real seconds the coordinator and listener block before rechecking for shutdown
RECHECK_INTERVAL = 0.05
# shortest session the summary line can express (wall time is written to the millisecond)
MIN_SESSION_SECONDS = 0.001

STATUS_OK = 'ok'
STATUS_TRUNCATED = 'truncated'
STATUS_NO_DATA = 'no-data'

_UNSAFE_FILE_CHARS = re.compile(r'[^A-Za-z0-9._-]')


class CollectorStartupError(common.EnvironmentProblem):
    pass


class NoSerialPortError(common.EnvironmentProblem):
    pass


def sanitize_label(label: str) -> str:
    return _UNSAFE_FILE_CHARS.sub('_', label)


def data_file_name(params: ExperimentParams) -> str:
    return "%s-%s-%d_data.csv" % (params.experiment_id, sanitize_label(params.algorithm_label), params.iterations)


def _iso(wall: float) -> str:
    stamp = datetime.datetime.fromtimestamp(wall)
    return stamp.strftime('%Y-%m-%dT%H:%M:%S') + '.%04d' % (stamp.microsecond // 100)



@dataclass(frozen=True)
class SummaryRow:
    timestamp: str
    algorithm_label: str
    iterations: int
    gross_joules: float
    wall_seconds: float
    joules_per_1000: float
    seconds_per_1000: float
    status: str = STATUS_OK

    @classmethod
    def build(cls, timestamp, algorithm_label, iterations, gross_joules, wall_seconds, status=STATUS_OK):
        return cls(timestamp, algorithm_label, iterations, gross_joules, wall_seconds,
                   gross_joules / iterations * 1000, wall_seconds / iterations * 1000, status)

    def as_csv_row(self) -> List[str]:
        return [self.timestamp, self.algorithm_label, str(self.iterations),
                "%.1f" % self.gross_joules, "%.3f" % self.wall_seconds,
                "%.4f" % self.joules_per_1000, "%.4f" % self.seconds_per_1000, self.status]


def append_summary(out_dir: str, row: SummaryRow) -> str:
    """Append one line to AllResults.csv, writing the header if the file is new or empty."""
    path = os.path.join(out_dir, ALL_RESULTS_FILE)
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, 'a', newline='') as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(ALL_RESULTS_COLUMNS)
        writer.writerow(row.as_csv_row())
    return path


class AcquisitionSession(object):
    """
    One experiment's data file. Energy is counted from the first reading
    recorded, since the meter's cumulative counters are never reset.
    """

    def __init__(self, params: ExperimentParams, out_dir: str, clock: Optional[Clock] = None,
                 say: Callable[[str], None] = print):
        self.params = params
        self.out_dir = out_dir
        self.clock = clock or SystemClock()
        self.say = say
        self.data_path = os.path.join(out_dir, data_file_name(params))
        self.start_reading: Optional[MeterReading] = None
        self.last_reading: Optional[MeterReading] = None
        self.sample_count = 0
        self._file = None
        self._last_flush = None

    def open(self):
        os.makedirs(self.out_dir, exist_ok=True)
        self._file = open(self.data_path, 'w', newline='')
        self._file.write("# keybench data v%d: %s x %d, poll %s Hz\n" %
                         (DATA_FILE_VERSION, self.params.algorithm_label, self.params.iterations,
                          format_poll_hz(self.params.poll_hz)))
        self._file.write(','.join(DATA_COLUMNS) + '\n')
        self._file.flush()
        return self

    @property
    def energy_mwh_delta(self) -> int:
        if self.start_reading is None:
            return 0
        return self.last_reading.energy_mwh - self.start_reading.energy_mwh

    @property
    def elapsed(self) -> float:
        if self.start_reading is None:
            return 0.0
        return self.last_reading.t - self.start_reading.t

    def sample_row(self, reading: MeterReading) -> str:
        start = self.start_reading or reading
        delta = reading.energy_mwh - start.energy_mwh
        wall = reading.wall if reading.wall is not None else self.clock.wall()
        return "%s,%.3f,%.4f,%.5f,%.4f,%d,%.1f" % (
            _iso(wall), reading.t - start.t, reading.voltage, reading.current, reading.power,
            delta, mwh_to_joules(delta))

    def record(self, reading: MeterReading) -> bool:
        """Write one sample; False if it was dropped for breaking time or energy order."""
        if self._file is None:
            raise common.KeybenchError("session %s is not open" % self.params.experiment_id)
        last = self.last_reading
        if last is not None:
            if reading.t <= last.t:
                logger.debug("dropping sample at %.3f: not after %.3f" % (reading.t, last.t))
                return False
            if reading.energy_mwh < last.energy_mwh:
                logger.warning("dropping sample: meter energy went back from %d to %d mWh" %
                               (last.energy_mwh, reading.energy_mwh))
                return False
        if self.start_reading is None:
            self.start_reading = reading
            self._last_flush = reading.t
        self._file.write(self.sample_row(reading) + '\n')
        self.last_reading = reading
        self.sample_count += 1
        if reading.t - self._last_flush >= FLUSH_INTERVAL:
            self._file.flush()
            self._last_flush = reading.t
        return True

    def close(self):
        if self._file is not None:
            self._file.flush()
            self._file.close()
            self._file = None

    def finalize(self, dut_wall_seconds: Optional[float] = None, truncated: bool = False) -> SummaryRow:
        """Close the data file and append the experiment's line to AllResults.csv."""
        self.close()
        params = self.params
        if self.sample_count == 0:
            logger.error("experiment %s recorded no samples" % params.experiment_id)
            row = SummaryRow.build(params.experiment_id, params.algorithm_label, params.iterations,
                                   0.0, dut_wall_seconds or 0.0, STATUS_NO_DATA)
        else:
            gross = mwh_to_joules(self.energy_mwh_delta)
            wall = dut_wall_seconds if dut_wall_seconds is not None else self.elapsed
            status = STATUS_TRUNCATED if truncated else STATUS_OK
            if self.sample_count < 2 or self.elapsed < MIN_SESSION_SECONDS or wall < MIN_SESSION_SECONDS:
                logger.error("experiment %s spans %.6f s in %d samples, too short to rate" %
                             (params.experiment_id, self.elapsed, self.sample_count))
                status = STATUS_NO_DATA
            row = SummaryRow.build(params.experiment_id, params.algorithm_label, params.iterations,
                                   gross, wall, status)
        path = append_summary(self.out_dir, row)
        self.say("*Total Energy: %.1f J (%d mWh) over %.3f s, %d samples" %
                 (row.gross_joules, self.energy_mwh_delta, row.wall_seconds, self.sample_count))
        self.say("*Energy Rate: %.4f J per 1,000 x %s" % (row.joules_per_1000, params.algorithm_label))
        self.say("Master:%s <- %s" % (os.path.basename(path), ','.join(row.as_csv_row())))
        if row.status != STATUS_OK:
            self.say("Experiment %s flagged '%s'" % (params.experiment_id, row.status))
        return row


class Acquisition(threading.Thread):
    """
    Polls the meter every 1/poll_hz seconds of clock time until told to stop,
    then takes one closing sample. Owns the backend and closes it on exit.
    """

    def __init__(self, backend: MeterBackend, poll_hz: Fraction, clock: Clock, inbox: queue.Queue):
        super(Acquisition, self).__init__(name='acquisition', daemon=True)
        self.backend = backend
        self.period = 1 / float(poll_hz)
        self.clock = clock
        self.inbox = inbox
        self.stop_event = threading.Event()
        self.failures = 0

    def _sample(self) -> bool:
        try:
            reading = self.backend.poll()
        except MeterSampleError as err:
            self.failures += 1
            logger.warning("meter sample failed (%d in a row): %s" % (self.failures, err))
            if self.failures >= MAX_CONSECUTIVE_FAILURES:
                self.inbox.put(('meter-failed', err))
                return False
            return True
        self.failures = 0
        self.inbox.put(('reading', reading))
        return True

    def run(self):
        try:
            deadline = self.clock.now()
            while not self.clock.wait_until(deadline, self.stop_event):
                if not self._sample():
                    return
                deadline += self.period
                now = self.clock.now()
                while deadline < now:
                    # missed slots are skipped, the grid is kept
                    deadline += self.period
            self._sample()
        except Exception as err:
            logger.exception("acquisition failed")
            self.inbox.put(('meter-failed', err))
        finally:
            self.backend.close()
            self.inbox.put(('acquisition-done', None))

    def stop(self):
        self.stop_event.set()


class Listener(threading.Thread):
    def __init__(self, sock: socket.socket, inbox: queue.Queue, shutdown: threading.Event):
        super(Listener, self).__init__(name='listener', daemon=True)
        self.sock = sock
        self.inbox = inbox
        self.shutdown = shutdown

    def run(self):
        self.sock.settimeout(RECHECK_INTERVAL)
        while not self.shutdown.is_set():
            try:
                datagram, sender = self.sock.recvfrom(4096)
            except socket.timeout:
                continue
            except OSError as err:
                if not self.shutdown.is_set():
                    logger.error("listener socket failed: %s" % err)
                    self.inbox.put(('listener-failed', err))
                return
            try:
                self.inbox.put(('control', decode_control(datagram), sender))
            except ControlDecodeError as err:
                logger.warning("ignoring datagram %r from %s:%s: %s" % ((datagram[:64],) + sender[:2] + (err,)))


def select_port(candidates: Sequence[Tuple[str, str]], forced: Optional[str] = None,
                timeout: float = interactive.DEFAULT_TIMEOUT, reader=input) -> str:
    """forced wins; otherwise ask, defaulting to the first candidate when nobody answers."""
    if forced:
        print("Selected COM port: %s (forced)" % forced)
        return forced
    if not candidates:
        raise NoSerialPortError("no serial ports found; connect the meter or pass --com")
    port = interactive.choose(list(candidates), "Please select the meter's serial port:", timeout, reader)
    print("Selected COM port: %s" % port)
    return port


def open_listener(bind: Tuple[str, int]) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.bind(bind)
    except OSError as err:
        sock.close()
        raise CollectorStartupError("cannot listen on %s:%d: %s" % (bind[0], bind[1], err))
    return sock


class Collector(object):
    """
    The coordinator role. serve() runs until shutdown is set, or with
    once=True until the first session is finalized.
    """

    def __init__(self, backend_factory: Callable[[], MeterBackend], out_dir: str,
                 bind: Tuple[str, int] = ('0.0.0.0', common.DEFAULT_CONTROL_PORT),
                 clock: Optional[Clock] = None, idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
                 say: Callable[[str], None] = print, status: Optional[Callable[[str], None]] = None):
        self.backend_factory = backend_factory
        self.out_dir = out_dir
        self.bind = bind
        self.clock = clock or SystemClock()
        self.idle_timeout = idle_timeout
        self.say = say
        self.status = status if status is not None else self._status_line
        self.inbox: queue.Queue = queue.Queue()
        self._deferred = collections.deque()
        self.shutdown = threading.Event()
        self.sock: Optional[socket.socket] = None
        self.rows: List[SummaryRow] = []

        self.state = CollectorState.IDLE
        self.params: Optional[ExperimentParams] = None
        self.session: Optional[AcquisitionSession] = None
        self.backend: Optional[MeterBackend] = None
        self.acquisition: Optional[Acquisition] = None
        self._last_change = None

    @staticmethod
    def _status_line(text):
        sys.stdout.write('\r' + text)
        sys.stdout.flush()

    @property
    def address(self) -> Tuple[str, int]:
        """The bound address; port 0 in bind becomes the port the OS picked."""
        return self.sock.getsockname()[:2] if self.sock is not None else self.bind

    def start_listening(self):
        if self.sock is not None:
            return
        self.sock = open_listener(self.bind)
        host, port = self.address
        self.say("Network Listener using UDP")
        self.say("Listening for GETREADY on %s:%d" % (host, port))

    def serve(self, once: bool = False) -> List[SummaryRow]:
        self.start_listening()
        listener = Listener(self.sock, self.inbox, self.shutdown)
        listener.start()
        try:
            while not self.shutdown.is_set():
                if self._deferred:
                    item = self._deferred.popleft()
                else:
                    try:
                        item = self.inbox.get(timeout=RECHECK_INTERVAL)
                    except queue.Empty:
                        item = None
                finished = self._handle(item) if item is not None else self._check_idle(None)
                if finished and once:
                    break
        finally:
            self.shutdown.set()
            self._abandon()
            listener.join(1.0)
            self.sock.close()
            self.sock = None
            self.say("Network Listener stopped")
        return self.rows

    def stop(self):
        self.shutdown.set()

    def _handle(self, item) -> bool:
        """Process one inbox item; True when a session was finalized."""
        kind = item[0]
        if kind == 'control':
            return self._on_control(item[1], item[2])
        if kind == 'reading':
            return self._on_reading(item[1])
        if kind == 'meter-failed':
            if self.state is CollectorState.ACQUIRING:
                logger.error("meter failed, truncating experiment: %s" % item[1])
                return self._finish(truncated=True)
            return False
        if kind == 'listener-failed':
            raise CollectorStartupError("control listener failed: %s" % item[1])
        return False

    def _on_control(self, msg: ControlMessage, sender) -> bool:
        self.say("Received: '%s' from %s:%s" % (msg, sender[0], sender[1]))
        if self.state is CollectorState.DONE and msg.kind is MessageKind.GETREADY:
            if msg.params == self.params:
                logger.debug("ignoring repeated GETREADY for finished experiment %s" % self.params.experiment_id)
                return False
            self.state = CollectorState.IDLE
        if is_duplicate(self.state, self.params, msg):
            logger.debug("ignoring duplicate %s while %s" % (msg.kind.value, self.state.value))
            return False
        try:
            new_state = advance_state(self.state, msg)
        except ProtocolOrderError as err:
            logger.warning("protocol order: %s; ignored" % err)
            self.say("Warning: %s; ignored" % err)
            return False

        if msg.kind is MessageKind.GETREADY:
            self._get_ready(msg.params)
        elif msg.kind is MessageKind.START:
            self._start()
        self.state = new_state
        if msg.kind is MessageKind.STOP:
            self.say("STOP signal received")
            return self._finish(truncated=False)
        return False

    def _get_ready(self, params: ExperimentParams):
        self.params = params
        self.say("Experiment parameters: id=%s algorithm=%s iterations=%d poll=%s Hz" %
                 (params.experiment_id, params.algorithm_label, params.iterations, format_poll_hz(params.poll_hz)))
        self.session = AcquisitionSession(params, self.out_dir, self.clock, self.say).open()
        self.say("Output file opened: %s" % self.session.data_path)
        self.backend = self.backend_factory()
        self.backend.open()
        self.say("Meter initialised; waiting for START")

    def _start(self):
        self.say("START signal received; sampling at %s Hz" % format_poll_hz(self.params.poll_hz))
        self.acquisition = Acquisition(self.backend, self.params.poll_hz, self.clock, self.inbox)
        self.backend = None
        self._last_change = None
        self.acquisition.start()
        self.say("Data Acquisition started, counters to 0")

    def _on_reading(self, reading: MeterReading) -> bool:
        if self.state is not CollectorState.ACQUIRING or self.session is None:
            return False
        previous = self.session.last_reading
        if self.session.record(reading):
            if previous is None or not reading.same_values(previous) or self._last_change is None:
                self._last_change = reading.t
            self.status("Joules thus far: %.1f J  elapsed %.1f s  (%d samples)   " %
                        (mwh_to_joules(self.session.energy_mwh_delta), self.session.elapsed,
                         self.session.sample_count))
        return self._check_idle(reading.t)

    def _check_idle(self, now: Optional[float]) -> bool:
        if self.state is not CollectorState.ACQUIRING or self._last_change is None:
            return False
        now = self.clock.now() if now is None else now
        if now - self._last_change < self.idle_timeout:
            return False
        logger.warning("no change in readings for %.1f s and no STOP; truncating experiment %s" %
                       (now - self._last_change, self.params.experiment_id))
        self.say("")
        self.say("Idle timeout: no STOP received")
        self.state = CollectorState.DONE
        return self._finish(truncated=True)

    def _drain_acquisition(self):
        """Stop the poller and record whatever it still delivers, closing sample included."""
        acquisition, self.acquisition = self.acquisition, None
        if acquisition is None:
            return
        acquisition.stop()
        while True:
            try:
                item = self.inbox.get(timeout=RECHECK_INTERVAL)
            except queue.Empty:
                if not acquisition.is_alive():
                    break
                continue
            if item[0] == 'acquisition-done':
                break
            if item[0] == 'reading' and self.session is not None:
                self.session.record(item[1])
            elif item[0] == 'control':
                # handled once the session is closed, in arrival order
                self._deferred.append(item)
        acquisition.join()

    def _finish(self, truncated: bool) -> bool:
        self.state = CollectorState.DONE
        self.say("")
        self._drain_acquisition()
        session, self.session = self.session, None
        if session is None:
            return False
        self.say("Data logging flushed: %s (%d samples)" % (session.data_path, session.sample_count))
        self.say("Data Acquisition stopped")
        self._close_backend()
        self.say("Cleanup complete")
        self.rows.append(session.finalize(truncated=truncated))
        return True

    def _close_backend(self):
        if self.backend is not None:
            self.backend.close()
            self.backend = None

    def _abandon(self):
        """On shutdown mid-experiment, stop the poller and keep what was recorded."""
        if self.acquisition is not None:
            self.acquisition.stop()
            self.acquisition.join(2.0)
            self.acquisition = None
        self._close_backend()
        if self.session is not None:
            logger.warning("shutting down with experiment %s unfinished" % self.session.params.experiment_id)
            self.session.close()
            self.session = None


def serve(bind_addr: Tuple[str, int], backend_factory: Callable[[], MeterBackend], out_dir: str,
          **kwds) -> List[SummaryRow]:
    once = kwds.pop('once', False)
    return Collector(backend_factory, out_dir, bind=bind_addr, **kwds).serve(once=once)
