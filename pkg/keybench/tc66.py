"""
Wire format of the RDTech TC66/TC66C USB meter.

The host writes the ASCII verb ``getva``; the meter answers with 192 bytes,
AES-256-ECB encrypted under a static vendor key. The plaintext is three
64-byte blocks tagged ``pac1``, ``pac2`` and ``pac3``, each made of
little-endian uint32 words and closed by a CRC-16/MODBUS of its first 60
bytes.

Every field position lives in FIELD_LAYOUT; a correction to the byte map
touches only that table.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields as dataclass_fields
from typing import NamedTuple

from Crypto.Cipher import AES

from keybench import common

FRAME_LENGTH = 192
BLOCK_LENGTH = 64
BLOCK_TAGS = (b'pac1', b'pac2', b'pac3')
# CRC covers bytes [0, CRC_OFFSET) of a block and is stored at CRC_OFFSET
CRC_OFFSET = 60

POLL_COMMAND = b'getva'

# vendor key as it appears in the device's companion app: signed Java bytes
_AES_KEY_SOURCE = (
    0x58, 0x21, -0x6, 0x56, 0x1, -0x4e, -0x10, 0x26, -0x79, -0x1, 0x12,
    0x4, 0x62, 0x2a, 0x4f, -0x50, -0x7a, -0xc, 0x2, 0x60, -0x7f, 0x6f,
    -0x66, 0xb, -0x59, -0xf, 0x6, 0x61, -0x66, -0x48, 0x72, -0x78,
)
TC66_AES_KEY = bytes(b & 0xFF for b in _AES_KEY_SOURCE)

_UINT32 = struct.Struct('<I')
UINT32_MAX = 0xFFFFFFFF


class Tc66DecodeError(common.KeybenchError):
    pass


class FrameLengthError(Tc66DecodeError):
    pass


class FrameTagError(Tc66DecodeError):
    pass


class FrameIntegrityError(Tc66DecodeError):
    pass


class Field(NamedTuple):
    name: str
    offset: int      # absolute byte offset in the 192-byte plaintext
    divisor: int     # SI value = raw / divisor


FIELD_LAYOUT = (
    # pac1
    Field('serial', 12, 1),
    Field('runs', 44, 1),
    Field('voltage', 48, 10000),
    Field('current', 52, 100000),
    Field('power', 56, 10000),
    # pac2
    Field('resistance', 68, 10),
    Field('group0_mah', 72, 1),
    Field('group0_mwh', 76, 1),
    Field('group1_mah', 80, 1),
    Field('group1_mwh', 84, 1),
    Field('temperature_negative', 88, 1),
    Field('temperature_magnitude', 92, 1),
    Field('data_plus', 96, 100),
    Field('data_minus', 100, 100),
)
PRODUCT_SLICE = slice(4, 8)
VERSION_SLICE = slice(8, 12)


@dataclass(frozen=True)
class Tc66Fields:
    """Decoded content of one frame, scaled to SI units."""
    product: str = 'TC66'
    version: str = '1.15'
    serial: int = 0
    runs: int = 0
    voltage: float = 0.0
    current: float = 0.0
    power: float = 0.0
    resistance: float = 0.0
    group0_mah: int = 0
    group0_mwh: int = 0
    group1_mah: int = 0
    group1_mwh: int = 0
    temperature: int = 0
    data_plus: float = 0.0
    data_minus: float = 0.0

    @property
    def energy_mwh(self) -> int:
        return self.group0_mwh


def crc16_modbus(data: bytes) -> int:
    crc = 0xFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ 0xA001
            else:
                crc >>= 1
    return crc


def tc66_build_poll() -> bytes:
    return POLL_COMMAND


def _cipher(key: bytes):
    return AES.new(bytes(key), AES.MODE_ECB)


def tc66_decode(raw: bytes, key: bytes = TC66_AES_KEY) -> Tc66Fields:
    if len(raw) != FRAME_LENGTH:
        raise FrameLengthError("TC66 frame is %d bytes, expected %d" % (len(raw), FRAME_LENGTH))
    plain = _cipher(key).decrypt(bytes(raw))

    for index, tag in enumerate(BLOCK_TAGS):
        block = plain[index * BLOCK_LENGTH:(index + 1) * BLOCK_LENGTH]
        if block[:4] != tag:
            raise FrameTagError("block %d tagged %r, expected %r" % (index, block[:4], tag))
        stored, = _UINT32.unpack_from(block, CRC_OFFSET)
        computed = crc16_modbus(block[:CRC_OFFSET])
        if stored != computed:
            raise FrameIntegrityError("block %s CRC %04x, computed %04x" % (tag.decode(), stored, computed))

    raw_values = {f.name: _UINT32.unpack_from(plain, f.offset)[0] for f in FIELD_LAYOUT}
    scaled = {}
    for f in FIELD_LAYOUT:
        value = raw_values[f.name]
        scaled[f.name] = value if f.divisor == 1 else value / f.divisor
    magnitude = scaled.pop('temperature_magnitude')
    negative = scaled.pop('temperature_negative')
    for name in ('voltage', 'current', 'power', 'resistance', 'data_plus', 'data_minus'):
        if not math.isfinite(scaled[name]):
            raise Tc66DecodeError("%s is not finite" % name)
    return Tc66Fields(product=plain[PRODUCT_SLICE].decode('ascii', 'replace'),
                      version=plain[VERSION_SLICE].decode('ascii', 'replace'),
                      temperature=-magnitude if negative == 1 else magnitude,
                      **scaled)


def _raw_word(name: str, value) -> int:
    raw = int(round(value)) if isinstance(value, float) else int(value)
    if not 0 <= raw <= UINT32_MAX:
        raise ValueError("%s raw value %d does not fit in uint32" % (name, raw))
    return raw


def encode_sim_frame(reading: Tc66Fields, key: bytes = TC66_AES_KEY) -> bytes:
    """
    Build the encrypted 192-byte answer a meter would send for reading.
    Inverse of tc66_decode() for any reading already at device resolution.
    """
    plain = bytearray(FRAME_LENGTH)
    for index, tag in enumerate(BLOCK_TAGS):
        plain[index * BLOCK_LENGTH:index * BLOCK_LENGTH + 4] = tag
    plain[PRODUCT_SLICE] = reading.product.encode('ascii')[:4].ljust(4, b'\0')
    plain[VERSION_SLICE] = reading.version.encode('ascii')[:4].ljust(4, b'\0')

    values = {f.name: getattr(reading, f.name) for f in dataclass_fields(reading)}
    values['temperature_negative'] = 1 if reading.temperature < 0 else 0
    values['temperature_magnitude'] = abs(reading.temperature)
    for f in FIELD_LAYOUT:
        value = values[f.name]
        _UINT32.pack_into(plain, f.offset, _raw_word(f.name, value * f.divisor))

    for index in range(len(BLOCK_TAGS)):
        base = index * BLOCK_LENGTH
        crc = crc16_modbus(plain[base:base + CRC_OFFSET])
        _UINT32.pack_into(plain, base + CRC_OFFSET, crc)
    return _cipher(key).encrypt(bytes(plain))
