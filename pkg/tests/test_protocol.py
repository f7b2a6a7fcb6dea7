import itertools
import socket
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keybench import common
from keybench.protocol import (MAX_DATAGRAM, CollectorState, ControlClient, ControlDecodeError,
                               ControlEncodeError, ControlMessage, ExperimentParams, MessageKind,
                               ProtocolOrderError, advance_state, as_poll_hz, decode_control,
                               encode_control, format_poll_hz, is_duplicate, parse_address)
from tests.basetest import ExpectError

_TEXT = st.text(alphabet=[chr(c) for c in range(32, 127) if chr(c) != '|'], min_size=1, max_size=100)

params_strategy = st.builds(
    ExperimentParams,
    experiment_id=_TEXT,
    algorithm_label=_TEXT,
    iterations=st.integers(min_value=1, max_value=10 ** 9),
    poll_hz=st.fractions(min_value=Fraction(1, 1000), max_value=10, max_denominator=1000))

messages = st.one_of(st.builds(ControlMessage.get_ready, params_strategy),
                     st.just(ControlMessage.start()),
                     st.just(ControlMessage.stop()))

SAMPLE_PARAMS = ExperimentParams("20250507133228", "ML-KEM-1024", 3200, 10)


def test_encode_start():
    assert encode_control(ControlMessage.start()) == b"START"


def test_encode_getready():
    assert encode_control(ControlMessage.get_ready(SAMPLE_PARAMS)) == b"GETREADY|20250507133228|ML-KEM-1024|3200|10"


def test_encode_fractional_rate():
    params = ExperimentParams("1", "NULL", 5, Fraction(1, 2))
    assert encode_control(ControlMessage.get_ready(params)) == b"GETREADY|1|NULL|5|1/2"


def test_encode_rejects_separator():
    with ExpectError("contains", "separator in algorithm should not encode", ControlEncodeError):
        encode_control(ControlMessage.get_ready(ExperimentParams("1", "ML|KEM", 1, 10)))


def test_encode_rejects_nonprintable():
    with ExpectError("non-printable", "tab in id should not encode", ControlEncodeError):
        encode_control(ControlMessage.get_ready(ExperimentParams("a\tb", "NULL", 1, 10)))


def test_encode_rejects_fast_poll():
    with pytest.raises(ControlEncodeError):
        encode_control(ControlMessage.get_ready(ExperimentParams("1", "NULL", 1, 11)))


def test_encode_rejects_oversized():
    with ExpectError("bytes", "a 600-character label cannot fit a datagram", ControlEncodeError):
        encode_control(ControlMessage.get_ready(ExperimentParams("1", "x" * 600, 1, 10)))


@pytest.mark.parametrize("fields", [
    ("1", "ML|KEM", 1, 10),
    ("run|1", "NULL", 1, 10),
    ("1", "", 1, 10),
    ("1", "NULL", 0, 10),
    ("1", "NULL", 1, 0),
    ("1", "NULL", 1, 11),
])
def test_params_checked_on_construction(fields):
    with pytest.raises(ControlEncodeError) as info:
        ExperimentParams(*fields)
    assert isinstance(info.value, common.ConfigurationError)
    assert info.value.exit_code == 2


def test_only_getready_carries_params():
    with pytest.raises(ValueError):
        ControlMessage(MessageKind.START, SAMPLE_PARAMS)
    with pytest.raises(ValueError):
        ControlMessage(MessageKind.GETREADY)


def test_decode_stop():
    assert decode_control(b"STOP") == ControlMessage.stop()


def test_decode_null_run():
    msg = decode_control(b"GETREADY|x|NULL|100000|10")
    assert msg.kind is MessageKind.GETREADY
    assert msg.params == ExperimentParams("x", "NULL", 100000, 10)


def test_decode_descriptor_with_spaces():
    msg = decode_control(b"GETREADY|1|RSA -pkeyopt rsa_keygen_bits:4096|200|2.5")
    assert msg.params.algorithm_label == "RSA -pkeyopt rsa_keygen_bits:4096"
    assert msg.params.poll_hz == Fraction(5, 2)


@pytest.mark.parametrize("datagram, field", [
    (b"START|extra", 'field count'),
    (b"GETREADY|1|NULL|10", 'field count'),
    (b"HELLO", 'verb'),
    (b"start", 'verb'),
    (b"GETREADY||NULL|10|10", 'experiment_id'),
    (b"GETREADY|1||10|10", 'algorithm'),
    (b"GETREADY|1|NULL|ten|10", 'iterations'),
    (b"GETREADY|1|NULL|0|10", 'iterations'),
    (b"GETREADY|1|NULL|-5|10", 'iterations'),
    (b"GETREADY|1|NULL|10|fast", 'poll_hz'),
    (b"GETREADY|1|NULL|10|11", 'poll_hz'),
    (b"GETREADY|1|NULL|10|0", 'poll_hz'),
    (b"GETREADY|1|NULL|10|1/0", 'poll_hz'),
    (b"\xff\xfe", 'datagram'),
    (b"STOP\n", 'datagram'),
    (b"S" * (MAX_DATAGRAM + 1), 'datagram'),
])
def test_decode_names_bad_field(datagram, field):
    with pytest.raises(ControlDecodeError) as info:
        decode_control(datagram)
    assert info.value.field == field


@given(messages)
@settings(max_examples=1000)
def test_round_trip(msg):
    datagram = encode_control(msg)
    assert len(datagram) <= MAX_DATAGRAM
    assert decode_control(datagram) == msg


@given(st.binary(max_size=600))
def test_decode_arbitrary_bytes(datagram):
    # either a message or a decode error, never anything else
    try:
        msg = decode_control(datagram)
    except ControlDecodeError:
        return
    assert encode_control(msg) == datagram or msg.kind is MessageKind.GETREADY


def test_transition_table_is_total():
    samples = {MessageKind.GETREADY: ControlMessage.get_ready(SAMPLE_PARAMS),
               MessageKind.START: ControlMessage.start(),
               MessageKind.STOP: ControlMessage.stop()}
    legal = {}
    for state, kind in itertools.product(CollectorState, MessageKind):
        try:
            legal[(state, kind)] = advance_state(state, samples[kind])
        except ProtocolOrderError as err:
            assert err.state is state
            assert err.kind is kind
    assert legal == {
        (CollectorState.IDLE, MessageKind.GETREADY): CollectorState.READY,
        (CollectorState.READY, MessageKind.START): CollectorState.ACQUIRING,
        (CollectorState.ACQUIRING, MessageKind.STOP): CollectorState.DONE,
    }


def test_stop_while_idle():
    with ExpectError("STOP is not allowed while Idle", "Stop before GetReady must be refused", ProtocolOrderError):
        advance_state(CollectorState.IDLE, ControlMessage.stop())


def test_duplicates():
    again = ControlMessage.get_ready(SAMPLE_PARAMS)
    other = ControlMessage.get_ready(ExperimentParams("20250507133229", "ML-KEM-1024", 3200, 10))
    assert is_duplicate(CollectorState.READY, SAMPLE_PARAMS, again)
    assert not is_duplicate(CollectorState.READY, SAMPLE_PARAMS, other)
    assert is_duplicate(CollectorState.DONE, SAMPLE_PARAMS, ControlMessage.stop())
    assert not is_duplicate(CollectorState.IDLE, None, ControlMessage.stop())
    assert not is_duplicate(CollectorState.ACQUIRING, SAMPLE_PARAMS, ControlMessage.start())


def test_poll_hz_coercion():
    assert as_poll_hz(0.1) == Fraction(1, 10)
    assert as_poll_hz("2.5") == Fraction(5, 2)
    assert format_poll_hz(Fraction(10)) == "10"
    assert format_poll_hz(Fraction(1, 3)) == "1/3"


@pytest.mark.parametrize("text, expected", [
    ("192.168.1.20:55555", ("192.168.1.20", 55555)),
    ("collector", ("collector", common.DEFAULT_CONTROL_PORT)),
    ("localhost:6000", ("localhost", 6000)),
])
def test_parse_address(text, expected):
    assert parse_address(text) == expected


@pytest.mark.parametrize("text", [":55555", "host:port", "host:0", "host:70000"])
def test_parse_address_rejects(text):
    with pytest.raises(common.ConfigurationError):
        parse_address(text)


def test_client_sends_datagrams():
    receiver = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    receiver.bind(('127.0.0.1', 0))
    receiver.settimeout(5)
    try:
        with ControlClient(receiver.getsockname()) as client:
            assert client.send(ControlMessage.get_ready(SAMPLE_PARAMS)) == "GETREADY|20250507133228|ML-KEM-1024|3200|10"
            client.send(ControlMessage.start())
            client.send(ControlMessage.stop())
        received = [decode_control(receiver.recvfrom(4096)[0]) for _ in range(3)]
    finally:
        receiver.close()
    assert [m.kind for m in received] == [MessageKind.GETREADY, MessageKind.START, MessageKind.STOP]
    assert received[0].params == SAMPLE_PARAMS
