"""SNTP wire format (RFC 4330).

Packets are immutable values. Timestamps keep the full 64-bit fixed-point
resolution; conversions to seconds go through :class:`fractions.Fraction`
so nothing is lost on the way in or out.

Only NTP era 0 is handled (valid until 2036-02-07).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from numbers import Real

__all__ = [
    "NTP_UNIX_DELTA",
    "PACKET_LEN",
    "CodecError",
    "WrongLength",
    "InvalidVersion",
    "InvalidMode",
    "OutOfRange",
    "LeapIndicator",
    "Mode",
    "NtpTimestamp",
    "SntpPacket",
    "encode",
    "decode",
    "ts_to_unix",
    "ts_from_unix",
]

#: Seconds between 1900-01-01 and 1970-01-01.
NTP_UNIX_DELTA = 2_208_988_800
PACKET_LEN = 48
_FRAC = 1 << 32
# key id (4) + MD5 digest (16), or key id + SHA-1 digest (20)
_AUTH_LENGTHS = (20, 24)
_HEADER = struct.Struct("!BBbbII4s")
_NTP_EPOCH = datetime(1900, 1, 1, tzinfo=timezone.utc)


class CodecError(ValueError):
    """Base class for frames that cannot be decoded."""


class WrongLength(CodecError):
    pass


class InvalidVersion(CodecError):
    pass


class InvalidMode(CodecError):
    pass


class OutOfRange(ValueError):
    """A time value does not fit in an era-0 NTP timestamp."""


class LeapIndicator(enum.IntEnum):
    NO_WARNING = 0
    LAST_MINUTE_61 = 1
    LAST_MINUTE_59 = 2
    ALARM = 3


class Mode(enum.IntEnum):
    CLIENT = 3
    SERVER = 4
    BROADCAST = 5


@dataclass(frozen=True, order=True)
class NtpTimestamp:
    """64-bit NTP timestamp: seconds since 1900 plus a 2**-32 s fraction."""

    seconds: int = 0
    fraction: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seconds < _FRAC:
            raise OutOfRange(f"seconds {self.seconds} outside 32-bit range")
        if not 0 <= self.fraction < _FRAC:
            raise OutOfRange(f"fraction {self.fraction} outside 32-bit range")

    @classmethod
    def from_raw(cls, raw: int) -> NtpTimestamp:
        return cls(raw >> 32, raw & (_FRAC - 1))

    @property
    def raw(self) -> int:
        return (self.seconds << 32) | self.fraction

    @classmethod
    def from_seconds(cls, value: Real | Fraction) -> NtpTimestamp:
        """Build from NTP-era seconds, truncating toward zero to 2**-32 s.

        Floats, Decimals and Fractions are all converted exactly before
        truncation.
        """
        exact = Fraction(value)
        if exact < 0:
            raise OutOfRange(f"{float(exact)} s is before the 1900 epoch")
        raw = int(exact * _FRAC)  # int() truncates; exact is non-negative
        if raw >= 1 << 64:
            raise OutOfRange(f"{float(exact)} s is past the end of NTP era 0")
        return cls.from_raw(raw)

    def to_seconds(self) -> Fraction:
        """Exact NTP-era seconds."""
        return Fraction(self.raw, _FRAC)

    def __float__(self) -> float:
        return self.raw / _FRAC

    def to_bytes(self) -> bytes:
        return self.raw.to_bytes(8, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> NtpTimestamp:
        if len(data) != 8:
            raise WrongLength(f"timestamp needs 8 bytes, got {len(data)}")
        return cls.from_raw(int.from_bytes(data, "big"))

    def to_datetime(self) -> datetime:
        """Civil UTC time, rounded to whole microseconds."""
        micros = (self.fraction * 1_000_000 + _FRAC // 2) >> 32
        return _NTP_EPOCH + timedelta(seconds=self.seconds, microseconds=micros)


def ts_to_unix(ts: NtpTimestamp) -> Fraction:
    """Exact seconds since 1970-01-01 (negative before 1970)."""
    return ts.to_seconds() - NTP_UNIX_DELTA


def ts_from_unix(unix_seconds: Real | Fraction) -> NtpTimestamp:
    """Inverse of :func:`ts_to_unix`; truncates toward zero to 2**-32 s."""
    return NtpTimestamp.from_seconds(Fraction(unix_seconds) + NTP_UNIX_DELTA)


def _check_bits(name: str, value: int, lo: int, hi: int) -> None:
    if not lo <= value <= hi:
        raise ValueError(f"{name}={value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class SntpPacket:
    """A decoded SNTP message.

    ``root_delay`` and ``root_dispersion`` hold the raw 16.16 fixed-point
    words; use :meth:`root_delay_s` / :meth:`root_dispersion_s` for seconds.
    ``authenticator`` is the optional key-id + digest trailer. It is carried
    through untouched and never verified.
    """

    leap_indicator: LeapIndicator = LeapIndicator.NO_WARNING
    version: int = 3
    mode: Mode = Mode.CLIENT
    stratum: int = 0
    poll_exponent: int = 0
    precision_exponent: int = 0
    root_delay: int = 0
    root_dispersion: int = 0
    reference_id: bytes = b"\x00\x00\x00\x00"
    reference_ts: NtpTimestamp = field(default_factory=NtpTimestamp)
    originate_ts: NtpTimestamp = field(default_factory=NtpTimestamp)
    receive_ts: NtpTimestamp = field(default_factory=NtpTimestamp)
    transmit_ts: NtpTimestamp = field(default_factory=NtpTimestamp)
    authenticator: bytes | None = None

    def __post_init__(self) -> None:
        _check_bits("leap_indicator", int(self.leap_indicator), 0, 3)
        _check_bits("version", self.version, 0, 7)
        _check_bits("mode", int(self.mode), 0, 7)
        _check_bits("stratum", self.stratum, 0, 255)
        _check_bits("poll_exponent", self.poll_exponent, -128, 127)
        _check_bits("precision_exponent", self.precision_exponent, -128, 127)
        _check_bits("root_delay", self.root_delay, 0, _FRAC - 1)
        _check_bits("root_dispersion", self.root_dispersion, 0, _FRAC - 1)
        if len(self.reference_id) != 4:
            raise ValueError("reference_id must be exactly 4 bytes")
        if self.authenticator is not None and len(self.authenticator) not in _AUTH_LENGTHS:
            raise ValueError(f"authenticator must be one of {_AUTH_LENGTHS} bytes")

    @property
    def has_authenticator(self) -> bool:
        return self.authenticator is not None

    @property
    def root_delay_s(self) -> Fraction:
        return Fraction(self.root_delay, 1 << 16)

    @property
    def root_dispersion_s(self) -> Fraction:
        return Fraction(self.root_dispersion, 1 << 16)

    def replace(self, **changes) -> SntpPacket:
        return replace(self, **changes)


def encode(packet: SntpPacket) -> bytes:
    """Serialize to the 48-byte frame (plus authenticator trailer, if any)."""
    first = (int(packet.leap_indicator) << 6) | (packet.version << 3) | int(packet.mode)
    head = _HEADER.pack(
        first,
        packet.stratum,
        packet.poll_exponent,
        packet.precision_exponent,
        packet.root_delay,
        packet.root_dispersion,
        packet.reference_id,
    )
    frame = b"".join(
        (
            head,
            packet.reference_ts.to_bytes(),
            packet.originate_ts.to_bytes(),
            packet.receive_ts.to_bytes(),
            packet.transmit_ts.to_bytes(),
        )
    )
    if packet.authenticator is not None:
        frame += packet.authenticator
    return frame


def decode(data: bytes) -> SntpPacket:
    """Parse a frame produced by :func:`encode` or a real SNTP peer.

    Raises:
        WrongLength: not 48 bytes (optionally followed by an authenticator).
        InvalidVersion: version other than 3 or 4.
        InvalidMode: mode other than client, server or broadcast.
    """
    data = bytes(data)
    extra = len(data) - PACKET_LEN
    if extra != 0 and extra not in _AUTH_LENGTHS:
        raise WrongLength(f"expected {PACKET_LEN} bytes, got {len(data)}")
    first, stratum, poll, precision, root_delay, root_disp, ref_id = _HEADER.unpack_from(data)
    version = (first >> 3) & 0x7
    if version not in (3, 4):
        raise InvalidVersion(f"unsupported NTP version {version}")
    mode = first & 0x7
    try:
        mode = Mode(mode)
    except ValueError:
        raise InvalidMode(f"unsupported mode {mode}") from None
    stamps = [NtpTimestamp.from_bytes(data[o : o + 8]) for o in (16, 24, 32, 40)]
    return SntpPacket(
        leap_indicator=LeapIndicator(first >> 6),
        version=version,
        mode=mode,
        stratum=stratum,
        poll_exponent=poll,
        precision_exponent=precision,
        root_delay=root_delay,
        root_dispersion=root_disp,
        reference_id=ref_id,
        reference_ts=stamps[0],
        originate_ts=stamps[1],
        receive_ts=stamps[2],
        transmit_ts=stamps[3],
        authenticator=data[PACKET_LEN:] if extra else None,
    )
