"""
The UDP control plane between the DUT runner and the collector.

Three datagrams bracket every experiment:

    GETREADY|<experiment_id>|<algorithm>|<iterations>|<poll_hz>
    START
    STOP

Datagrams are plain ASCII, fire-and-forget, never acknowledged. The collector
tracks where it is with a CollectorState that only advance_state() may move.
"""
from __future__ import annotations

import enum
import logging
import re
import socket
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple, Union

from keybench import common

logger = logging.getLogger('keybench.protocol')

MAX_DATAGRAM = 512
MAX_POLL_HZ = Fraction(10)
FIELD_SEPARATOR = '|'

_ITERATIONS_RE = re.compile(r'[0-9]+\Z')
_POLL_HZ_RE = re.compile(r'(?:[0-9]+(?:\.[0-9]+)?|[0-9]+/[0-9]+)\Z')


class ControlEncodeError(common.ConfigurationError):
    """Parameters that cannot go on the wire."""
    pass


class ControlDecodeError(common.KeybenchError):
    def __init__(self, field: str, message: str):
        super(ControlDecodeError, self).__init__("bad %s: %s" % (field, message))
        self.field = field


class ProtocolOrderError(common.KeybenchError):
    def __init__(self, state: 'CollectorState', kind: 'MessageKind'):
        super(ProtocolOrderError, self).__init__(
            "%s is not allowed while %s" % (kind.value, state.value))
        self.state = state
        self.kind = kind


class MessageKind(enum.Enum):
    GETREADY = 'GETREADY'
    START = 'START'
    STOP = 'STOP'


class CollectorState(enum.Enum):
    IDLE = 'Idle'
    READY = 'Ready'
    ACQUIRING = 'Acquiring'
    DONE = 'Done'


def as_poll_hz(value: Union[int, float, str, Fraction]) -> Fraction:
    """Coerce a sampling rate to a Fraction; 0.1 becomes 1/10, not a binary approximation."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def format_poll_hz(hz: Fraction) -> str:
    if hz.denominator == 1:
        return str(hz.numerator)
    return "%d/%d" % (hz.numerator, hz.denominator)


@dataclass(frozen=True)
class ExperimentParams:
    experiment_id: str
    algorithm_label: str
    iterations: int
    poll_hz: Fraction = Fraction(10)

    def __post_init__(self):
        object.__setattr__(self, 'poll_hz', as_poll_hz(self.poll_hz))
        _check_text_field('experiment_id', self.experiment_id)
        _check_text_field('algorithm', self.algorithm_label)
        if isinstance(self.iterations, bool) or not isinstance(self.iterations, int) or self.iterations < 1:
            raise ControlEncodeError("iterations must be a positive integer, not %r" % (self.iterations,))
        if not 0 < self.poll_hz <= MAX_POLL_HZ:
            raise ControlEncodeError("poll_hz %s outside (0, %s]" % (self.poll_hz, MAX_POLL_HZ))


@dataclass(frozen=True)
class ControlMessage:
    kind: MessageKind
    params: Optional[ExperimentParams] = None

    def __post_init__(self):
        if (self.kind is MessageKind.GETREADY) != (self.params is not None):
            raise ValueError("only GETREADY carries experiment parameters")

    @classmethod
    def get_ready(cls, params: ExperimentParams) -> 'ControlMessage':
        return cls(MessageKind.GETREADY, params)

    @classmethod
    def start(cls) -> 'ControlMessage':
        return cls(MessageKind.START)

    @classmethod
    def stop(cls) -> 'ControlMessage':
        return cls(MessageKind.STOP)

    def __str__(self):
        return encode_control(self).decode('ascii')


def _printable(text: str) -> bool:
    return all(' ' <= c <= '~' for c in text)


def _check_text_field(name: str, value: str):
    if not isinstance(value, str) or not value:
        raise ControlEncodeError("%s must be a non-empty string" % name)
    if FIELD_SEPARATOR in value:
        raise ControlEncodeError("%s '%s' contains '%s'" % (name, value, FIELD_SEPARATOR))
    if not _printable(value):
        raise ControlEncodeError("%s %r contains a non-printable character" % (name, value))


def encode_control(msg: ControlMessage) -> bytes:
    if msg.kind is not MessageKind.GETREADY:
        return msg.kind.value.encode('ascii')

    params = msg.params
    text = FIELD_SEPARATOR.join((MessageKind.GETREADY.value,
                                 params.experiment_id,
                                 params.algorithm_label,
                                 str(params.iterations),
                                 format_poll_hz(params.poll_hz)))
    datagram = text.encode('ascii')
    if len(datagram) > MAX_DATAGRAM:
        raise ControlEncodeError("encoded GETREADY is %d bytes, limit %d" % (len(datagram), MAX_DATAGRAM))
    return datagram


def decode_control(datagram: bytes) -> ControlMessage:
    if len(datagram) > MAX_DATAGRAM:
        raise ControlDecodeError('datagram', "%d bytes exceeds %d" % (len(datagram), MAX_DATAGRAM))
    try:
        text = bytes(datagram).decode('ascii')
    except UnicodeDecodeError:
        raise ControlDecodeError('datagram', "not ASCII")
    if not _printable(text):
        raise ControlDecodeError('datagram', "contains a non-printable character")

    fields = text.split(FIELD_SEPARATOR)
    try:
        kind = MessageKind(fields[0])
    except ValueError:
        raise ControlDecodeError('verb', "unknown verb '%s'" % fields[0])

    if kind is not MessageKind.GETREADY:
        if len(fields) != 1:
            raise ControlDecodeError('field count', "%s takes no fields, got %d" % (kind.value, len(fields) - 1))
        return ControlMessage(kind)

    if len(fields) != 5:
        raise ControlDecodeError('field count', "GETREADY takes 4 fields, got %d" % (len(fields) - 1))
    _, experiment_id, algorithm, iterations_text, hz_text = fields
    if not experiment_id:
        raise ControlDecodeError('experiment_id', "empty")
    if not algorithm:
        raise ControlDecodeError('algorithm', "empty")
    if not _ITERATIONS_RE.match(iterations_text) or int(iterations_text) < 1:
        raise ControlDecodeError('iterations', "'%s' is not a positive integer" % iterations_text)
    if not _POLL_HZ_RE.match(hz_text):
        raise ControlDecodeError('poll_hz', "'%s' is not a number" % hz_text)
    try:
        hz = Fraction(hz_text)
    except ZeroDivisionError:
        raise ControlDecodeError('poll_hz', "'%s' has a zero denominator" % hz_text)
    if not 0 < hz <= MAX_POLL_HZ:
        raise ControlDecodeError('poll_hz', "%s outside (0, %s]" % (hz_text, MAX_POLL_HZ))
    return ControlMessage.get_ready(ExperimentParams(experiment_id, algorithm, int(iterations_text), hz))


_TRANSITIONS = {
    (CollectorState.IDLE, MessageKind.GETREADY): CollectorState.READY,
    (CollectorState.READY, MessageKind.START): CollectorState.ACQUIRING,
    (CollectorState.ACQUIRING, MessageKind.STOP): CollectorState.DONE,
}


def advance_state(state: CollectorState, msg: ControlMessage) -> CollectorState:
    try:
        return _TRANSITIONS[(state, msg.kind)]
    except KeyError:
        raise ProtocolOrderError(state, msg.kind)


def is_duplicate(state: CollectorState, current: Optional[ExperimentParams], msg: ControlMessage) -> bool:
    """
    UDP may deliver a datagram twice: an identical GETREADY while Ready, or
    a STOP while Done, is a no-op rather than an ordering error.
    """
    if state is CollectorState.READY and msg.kind is MessageKind.GETREADY:
        return msg.params == current
    return state is CollectorState.DONE and msg.kind is MessageKind.STOP


def parse_address(text: str, default_port: int = common.DEFAULT_CONTROL_PORT) -> Tuple[str, int]:
    """'host:port' or 'host' -> (host, port)"""
    host, sep, port_text = text.strip().rpartition(':')
    if not sep:
        host, port_text = port_text, ''
    if not host:
        raise common.ConfigurationError("no host in collector address '%s'" % text)
    if not port_text:
        return host, default_port
    try:
        port = int(port_text)
    except ValueError:
        raise common.ConfigurationError("bad port in collector address '%s'" % text)
    if not 0 < port < 65536:
        raise common.ConfigurationError("port %d out of range in '%s'" % (port, text))
    return host, port


class ControlClient(object):
    """Sends control datagrams to one collector."""

    def __init__(self, address: Tuple[str, int]):
        self.address = address
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def send(self, msg: ControlMessage) -> str:
        datagram = encode_control(msg)
        text = datagram.decode('ascii')
        try:
            self.sock.sendto(datagram, self.address)
        except OSError as err:
            # unacknowledged anyway: the collector's idle timeout covers a lost datagram
            logger.warning("UDP: could not send '%s' to %s:%d: %s" % ((text,) + self.address + (err,)))
        else:
            logger.debug("UDP: Sent '%s' to %s:%d" % ((text,) + self.address))
        return text

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
