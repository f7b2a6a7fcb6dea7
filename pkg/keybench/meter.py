"""
Meter backends: one sampling interface over a real TC66C on a serial line
and a deterministic simulator.

A backend is opened, polled by exactly one acquisition loop, then closed.

    with make_backend('sim', profile=SimProfile.constant(5.0), clock=clock) as meter:
        reading = meter.poll()
"""
from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import serial
import serial.tools.list_ports

from keybench import common, tc66
from keybench.clock import Clock, SystemClock
from keybench.configfile import read_llsd

logger = logging.getLogger('keybench.meter')

BAUD_RATE = 115200
READ_TIMEOUT = 1.0
DEFAULT_SUPPLY_VOLTAGE = 5.1
JOULES_PER_MWH = 3.6
# no-load resistance the meter displays (9999.9 ohm)
OPEN_CIRCUIT_RESISTANCE = 9999.9


def quantize_mwh(mwh: float) -> int:
    """Cumulative energy as the device reports it: whole mWh, floored."""
    return math.floor(mwh)


class MeterSampleError(common.KeybenchError):
    """A single poll failed; the caller may retry."""
    pass


class MeterUsageError(common.KeybenchError):
    pass


class MeterOpenError(common.EnvironmentProblem):
    pass


@dataclass(frozen=True)
class MeterReading:
    t: float
    voltage: float
    current: float
    power: float
    energy_mwh: int
    wall: Optional[float] = None

    def same_values(self, other: 'MeterReading') -> bool:
        return (self.voltage, self.current, self.power, self.energy_mwh) == \
            (other.voltage, other.current, other.power, other.energy_mwh)


def reading_from_fields(fields: tc66.Tc66Fields, t: float, wall: Optional[float] = None) -> MeterReading:
    return MeterReading(t=t, voltage=fields.voltage, current=fields.current, power=fields.power,
                        energy_mwh=fields.energy_mwh, wall=wall)


@dataclass(frozen=True)
class SimProfile:
    """
    Power drawn over time: segments of (duration seconds, watts) played in
    order from the moment the meter is opened, zero once they run out.
    """
    segments: Tuple[Tuple[float, float], ...]
    supply_voltage: float = DEFAULT_SUPPLY_VOLTAGE
    sample_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        segments = tuple((float(d), float(w)) for d, w in self.segments)
        object.__setattr__(self, 'segments', segments)
        for duration, watts in segments:
            if not duration > 0:
                raise common.ConfigurationError("profile segment duration must be > 0, not %r" % duration)
            if not (watts >= 0 and math.isfinite(watts)):
                raise common.ConfigurationError("profile segment power must be >= 0, not %r" % watts)
        if not self.supply_voltage > 0:
            raise common.ConfigurationError("supply voltage must be > 0, not %r" % self.supply_voltage)
        if not 0 <= self.sample_jitter < 1:
            raise common.ConfigurationError("sample jitter must be in [0, 1), not %r" % self.sample_jitter)

    @classmethod
    def constant(cls, watts: float, **kwds) -> 'SimProfile':
        return cls(segments=((math.inf, watts),), **kwds)

    def power_at(self, elapsed: float) -> float:
        start = 0.0
        for duration, watts in self.segments:
            if elapsed < start + duration:
                return watts if elapsed >= 0 else 0.0
            start += duration
        return 0.0

    def joules_at(self, elapsed: float) -> float:
        """Exact integral of power over [0, elapsed]."""
        total = 0.0
        start = 0.0
        for duration, watts in self.segments:
            if elapsed <= start:
                break
            covered = min(elapsed, start + duration) - start
            total += watts * covered
            start += duration
        return total


def load_sim_profile(path: str) -> SimProfile:
    data = read_llsd(path, 'simulator profile')
    if not isinstance(data, dict) or 'segments' not in data:
        raise common.ConfigurationError("simulator profile %s has no 'segments'" % path)
    try:
        segments = [(pair[0], pair[1]) for pair in data['segments']]
    except (TypeError, IndexError, KeyError):
        raise common.ConfigurationError("simulator profile %s: segments must be [duration, watts] pairs" % path)
    logger.debug("loaded simulator profile %s: %d segments" % (path, len(segments)))
    return SimProfile(segments=tuple(segments),
                      supply_voltage=float(data.get('supply_voltage', DEFAULT_SUPPLY_VOLTAGE)),
                      sample_jitter=float(data.get('sample_jitter', 0.0)),
                      seed=int(data.get('seed', 0)))


class MeterBackend(object):
    """Common open/poll/close life cycle."""

    def __init__(self, clock: Optional[Clock] = None):
        self.clock = clock or SystemClock()
        self._opened = False

    @property
    def is_open(self) -> bool:
        return self._opened

    def open(self):
        self._opened = True

    def close(self):
        self._opened = False

    def poll(self) -> MeterReading:
        raise NotImplementedError

    def _require_open(self):
        if not self._opened:
            raise MeterUsageError("%s polled before open()" % self.__class__.__name__)

    def __enter__(self):
        self.open()
        return self

    def __exit__(self, *exc_info):
        self.close()


class SimulatedMeter(MeterBackend):
    """
    Readings straight from a SimProfile, at the same resolution the real
    device reports.
    """

    def __init__(self, profile: SimProfile, clock: Optional[Clock] = None, nominal_period: float = 0.1):
        super(SimulatedMeter, self).__init__(clock)
        self.profile = profile
        self.nominal_period = nominal_period
        self.origin = None
        self._rng = random.Random(profile.seed)

    def open(self):
        self.origin = self.clock.now()
        self._rng = random.Random(self.profile.seed)
        super(SimulatedMeter, self).open()

    def fields_at(self, elapsed: float) -> tc66.Tc66Fields:
        profile = self.profile
        watts = profile.power_at(elapsed)
        joules = profile.joules_at(elapsed)
        volts = profile.supply_voltage
        amps = watts / volts
        power_raw = round(watts * 10000)
        current_raw = round(amps * 100000)
        return tc66.Tc66Fields(
            voltage=round(volts * 10000) / 10000,
            current=current_raw / 100000,
            power=power_raw / 10000,
            resistance=round(volts / amps * 10) / 10 if current_raw else OPEN_CIRCUIT_RESISTANCE,
            group0_mah=math.floor(joules / volts / JOULES_PER_MWH),
            group0_mwh=quantize_mwh(joules / JOULES_PER_MWH),
            temperature=25,
        )

    def _jitter(self):
        if self.profile.sample_jitter:
            self.clock.sleep(self._rng.uniform(0, self.profile.sample_jitter * self.nominal_period))

    def poll(self):
        self._require_open()
        self._jitter()
        t = self.clock.now()
        return reading_from_fields(self.fields_at(t - self.origin), t, self.clock.wall())


def sim_advance(profile: SimProfile, clock: Clock):
    """
    Endless stream of simulated readings; each next() samples the profile at
    whatever time clock shows. Advancing the clock is up to the caller.
    """
    meter = SimulatedMeter(profile, clock)
    # the profile starts now, not at the first next()
    meter.open()
    return _readings(meter)


def _readings(meter: SimulatedMeter):
    while True:
        yield meter.poll()


class SimulatedTc66Port(object):
    """
    Stands in for a serial.Serial connected to a TC66C: answers the poll verb
    with an encrypted frame built from a SimProfile.
    """

    def __init__(self, profile: SimProfile, clock: Optional[Clock] = None, nominal_period: float = 0.1):
        self.port = 'SIM'
        self.timeout = READ_TIMEOUT
        self.meter = SimulatedMeter(profile, clock, nominal_period)
        self._pending = bytearray()
        self.is_open = False

    def open(self):
        # the profile restarts every time the port is opened
        self.meter.open()
        self._pending.clear()
        self.is_open = True

    def write(self, data: bytes) -> int:
        if not self.is_open:
            raise serial.PortNotOpenError()
        if data.strip() == tc66.POLL_COMMAND:
            self.meter._jitter()
            elapsed = self.meter.clock.now() - self.meter.origin
            self._pending.extend(tc66.encode_sim_frame(self.meter.fields_at(elapsed)))
        return len(data)

    def read(self, size: int = 1) -> bytes:
        chunk = bytes(self._pending[:size])
        del self._pending[:size]
        return chunk

    def reset_input_buffer(self):
        self._pending.clear()

    def close(self):
        self.meter.close()
        self.is_open = False


class Tc66Meter(MeterBackend):
    """
    A TC66C polled over a serial line. port is a device name to open with
    pyserial, or an already-open object with the same write/read interface.
    """

    def __init__(self, port, clock: Optional[Clock] = None):
        super(Tc66Meter, self).__init__(clock)
        self.port = port
        self.serial = None
        self.last_fields = None

    def open(self):
        if isinstance(self.port, str):
            try:
                self.serial = serial.Serial(self.port, baudrate=BAUD_RATE, bytesize=serial.EIGHTBITS,
                                            parity=serial.PARITY_NONE, stopbits=serial.STOPBITS_ONE,
                                            timeout=READ_TIMEOUT)
            except serial.SerialException as err:
                raise MeterOpenError("cannot open meter on %s: %s" % (self.port, err))
        else:
            self.serial = self.port
            if not self.serial.is_open:
                self.serial.open()
        logger.debug("meter open on %s" % getattr(self.serial, 'port', self.port))
        super(Tc66Meter, self).open()

    def close(self):
        if self.serial is not None:
            self.serial.close()
        self.serial = None
        super(Tc66Meter, self).close()

    def poll(self):
        self._require_open()
        try:
            self.serial.write(tc66.tc66_build_poll())
            raw = self.serial.read(tc66.FRAME_LENGTH)
        except serial.SerialException as err:
            raise MeterSampleError("serial error: %s" % err)
        t = self.clock.now()
        wall = self.clock.wall()
        if len(raw) < tc66.FRAME_LENGTH:
            self.serial.reset_input_buffer()
            raise MeterSampleError("short read: %d of %d bytes" % (len(raw), tc66.FRAME_LENGTH))
        try:
            fields = tc66.tc66_decode(raw)
        except tc66.Tc66DecodeError as err:
            self.serial.reset_input_buffer()
            raise MeterSampleError(str(err)) from err
        self.last_fields = fields
        return reading_from_fields(fields, t, wall)


def list_serial_ports() -> List[Tuple[str, str]]:
    """(device, description) for every serial port the OS reports."""
    return [(port.device, port.description) for port in sorted(serial.tools.list_ports.comports())]


BACKENDS = ('tc66', 'sim')


def make_backend(kind: str, com: Optional[str] = None, profile: Optional[SimProfile] = None,
                 clock: Optional[Clock] = None, nominal_period: float = 0.1) -> MeterBackend:
    """
    'tc66' opens the real meter on com; 'sim' puts a SimulatedTc66Port behind
    the same decoder path.
    """
    clock = clock or SystemClock()
    if kind == 'tc66':
        if not com:
            raise MeterUsageError("the tc66 backend needs a serial port")
        return Tc66Meter(com, clock)
    if kind == 'sim':
        return Tc66Meter(SimulatedTc66Port(profile or SimProfile.constant(0.0), clock, nominal_period), clock)
    raise common.ConfigurationError("unknown meter backend '%s' (choose from %s)" % (kind, ', '.join(BACKENDS)))
