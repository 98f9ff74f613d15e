"""Binary wire protocol between master and slaves.

Frame layout (little-endian throughout):

    magic "VDAQ" | version u8 | msg_type u8 | payload_len u32 | payload | crc32 u32

The CRC32 (IEEE, reflected 0xEDB88320 — zlib's crc32) covers
version | msg_type | payload_len | payload. See docs/protocol.md for hex dumps.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

from .core import AcquisitionConfig, TestType, VibedaqError

MAGIC = b"VDAQ"
VERSION = 1
MAX_PAYLOAD = 1 << 20  # 1 MiB

HEADER = struct.Struct("<4sBBI")
CRC = struct.Struct("<I")
RECORD = struct.Struct("<Qhhh")  # t_local_us, x, y, z


class ProtocolError(VibedaqError):
    pass


class EncodeError(ProtocolError):
    pass


class FrameError(ProtocolError):
    """Unusable bytes; `skip` tells a stream decoder how far to advance before rescanning."""

    def __init__(self, message: str, skip: int):
        super().__init__(message)
        self.skip = skip


class BadMagicError(FrameError):
    pass


class CrcMismatchError(FrameError):
    pass


class UnsupportedFrameError(FrameError):
    pass


class NeedMoreData(Exception):
    """Buffer ends before the frame does; feed more bytes and retry."""


# --- message types ---------------------------------------------------------


@dataclass(frozen=True)
class Hello:
    slave_id: int
    sensors: tuple[int, ...]  # mux channels present

    TYPE = 0x01


@dataclass(frozen=True)
class Config:
    config: AcquisitionConfig

    TYPE = 0x02


@dataclass(frozen=True)
class Start:
    scheduled_start_us: int

    TYPE = 0x03


@dataclass(frozen=True)
class Stop:
    TYPE = 0x04


@dataclass(frozen=True)
class DataBatch:
    slave_id: int
    mux_channel: int
    seq_first: int
    records: tuple[tuple[int, int, int, int], ...]  # (t_local_us, x, y, z)

    TYPE = 0x05


@dataclass(frozen=True)
class Heartbeat:
    slave_id: int
    samples_acquired: int

    TYPE = 0x06


ACK_OK = 0
ACK_ERROR = 1


@dataclass(frozen=True)
class Ack:
    acked_type: int
    status: int

    TYPE = 0x07


@dataclass(frozen=True)
class TimesyncReq:
    t1_us: int

    TYPE = 0x08


@dataclass(frozen=True)
class TimesyncResp:
    t1_us: int
    t2_us: int
    t3_us: int

    TYPE = 0x09


@dataclass(frozen=True)
class RunEnd:
    slave_id: int
    total_samples: int

    TYPE = 0x0A


Message = (
    Hello | Config | Start | Stop | DataBatch | Heartbeat | Ack | TimesyncReq | TimesyncResp | RunEnd
)

_TEST_TYPE_CODE = {TestType.TVT: 0, TestType.AVT: 1}
_TEST_TYPE_FROM_CODE = {v: k for k, v in _TEST_TYPE_CODE.items()}

_CONFIG_BODY = struct.Struct("<IBdBIQ")
_BATCH_HEAD = struct.Struct("<BBIH")


def _encode_payload(msg: Message) -> bytes:
    if isinstance(msg, Hello):
        return struct.pack(f"<BB{len(msg.sensors)}B", msg.slave_id, len(msg.sensors), *msg.sensors)
    if isinstance(msg, Config):
        c = msg.config
        return _CONFIG_BODY.pack(
            c.run_id,
            _TEST_TYPE_CODE[c.test_type],
            float(c.odr_hz),
            c.range_g,
            c.duration_s,
            c.scheduled_start_us,
        )
    if isinstance(msg, Start):
        return struct.pack("<Q", msg.scheduled_start_us)
    if isinstance(msg, Stop):
        return b""
    if isinstance(msg, DataBatch):
        if not msg.records:
            raise EncodeError("DATA_BATCH requires at least one record")
        head = _BATCH_HEAD.pack(msg.slave_id, msg.mux_channel, msg.seq_first, len(msg.records))
        return head + b"".join(RECORD.pack(*r) for r in msg.records)
    if isinstance(msg, Heartbeat):
        return struct.pack("<BQ", msg.slave_id, msg.samples_acquired)
    if isinstance(msg, Ack):
        return struct.pack("<BB", msg.acked_type, msg.status)
    if isinstance(msg, TimesyncReq):
        return struct.pack("<Q", msg.t1_us)
    if isinstance(msg, TimesyncResp):
        return struct.pack("<QQQ", msg.t1_us, msg.t2_us, msg.t3_us)
    if isinstance(msg, RunEnd):
        return struct.pack("<BQ", msg.slave_id, msg.total_samples)
    raise EncodeError(f"unknown message {msg!r}")


def _decode_payload(msg_type: int, payload: bytes) -> Message:
    try:
        if msg_type == Hello.TYPE:
            slave_id, count = struct.unpack_from("<BB", payload)
            sensors = struct.unpack_from(f"<{count}B", payload, 2)
            if len(payload) != 2 + count:
                raise ValueError("HELLO length mismatch")
            return Hello(slave_id, tuple(sensors))
        if msg_type == Config.TYPE:
            run_id, tt, odr, rng, dur, start = _CONFIG_BODY.unpack(payload)
            if tt not in _TEST_TYPE_FROM_CODE:
                raise ValueError(f"unknown test type code {tt}")
            return Config(AcquisitionConfig(run_id, _TEST_TYPE_FROM_CODE[tt], odr, rng, dur, start))
        if msg_type == Start.TYPE:
            return Start(*struct.unpack("<Q", payload))
        if msg_type == Stop.TYPE:
            if payload:
                raise ValueError("STOP carries no payload")
            return Stop()
        if msg_type == DataBatch.TYPE:
            slave_id, mux, seq_first, count = _BATCH_HEAD.unpack_from(payload)
            if count < 1:
                raise ValueError("DATA_BATCH count must be >= 1")
            if len(payload) != _BATCH_HEAD.size + count * RECORD.size:
                raise ValueError("DATA_BATCH length mismatch")
            records = tuple(
                RECORD.unpack_from(payload, _BATCH_HEAD.size + i * RECORD.size)
                for i in range(count)
            )
            return DataBatch(slave_id, mux, seq_first, records)
        if msg_type == Heartbeat.TYPE:
            return Heartbeat(*struct.unpack("<BQ", payload))
        if msg_type == Ack.TYPE:
            return Ack(*struct.unpack("<BB", payload))
        if msg_type == TimesyncReq.TYPE:
            return TimesyncReq(*struct.unpack("<Q", payload))
        if msg_type == TimesyncResp.TYPE:
            return TimesyncResp(*struct.unpack("<QQQ", payload))
        if msg_type == RunEnd.TYPE:
            return RunEnd(*struct.unpack("<BQ", payload))
    except struct.error as exc:
        raise ValueError(str(exc)) from exc
    raise ValueError(f"unknown message type 0x{msg_type:02x}")


def encode_frame(msg: Message) -> bytes:
    """Serialize one message into a complete CRC-protected frame."""
    payload = _encode_payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise EncodeError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    body = struct.pack("<BBI", VERSION, msg.TYPE, len(payload)) + payload
    return MAGIC + body + CRC.pack(zlib.crc32(body))


def decode_frame(buf: bytes | bytearray | memoryview) -> tuple[Message, int]:
    """Decode the frame at the start of `buf`; returns (message, bytes consumed).

    Raises NeedMoreData on a truncated frame, BadMagicError / CrcMismatchError /
    UnsupportedFrameError on unusable bytes. The error's `skip` attribute is the
    number of bytes a caller should discard before rescanning for a frame.
    """
    buf = bytes(buf)
    if not buf:
        raise NeedMoreData
    pos = buf.find(MAGIC)
    if pos == -1:
        # a magic prefix may straddle the buffer end; keep it for the next feed
        keep = next((k for k in (3, 2, 1) if len(buf) >= k and buf[-k:] == MAGIC[:k]), 0)
        if keep == len(buf):
            raise NeedMoreData
        raise BadMagicError("no frame magic found", skip=len(buf) - keep)
    if pos != 0:
        raise BadMagicError("garbage before frame magic", skip=pos)
    if len(buf) < HEADER.size:
        raise NeedMoreData
    _, version, msg_type, payload_len = HEADER.unpack_from(buf)
    if payload_len > MAX_PAYLOAD:
        raise UnsupportedFrameError(f"payload_len {payload_len} exceeds limit", skip=1)
    total = HEADER.size + payload_len + CRC.size
    if len(buf) < total:
        raise NeedMoreData
    body = buf[4 : HEADER.size + payload_len]
    (crc,) = CRC.unpack_from(buf, HEADER.size + payload_len)
    if zlib.crc32(body) != crc:
        raise CrcMismatchError("frame crc mismatch", skip=1)
    if version != VERSION:
        raise UnsupportedFrameError(f"unsupported version {version}", skip=total)
    try:
        msg = _decode_payload(msg_type, buf[HEADER.size : HEADER.size + payload_len])
    except ValueError as exc:
        raise UnsupportedFrameError(f"bad payload: {exc}", skip=total) from exc
    return msg, total


@dataclass
class StreamStats:
    frames: int = 0
    resyncs: int = 0
    crc_errors: int = 0
    unsupported: int = 0


class StreamDecoder:
    """Incremental frame decoder for a byte stream.

    Feeding bytes yields every complete valid frame; garbage between frames is
    skipped by rescanning for the magic. finalize() drains what remains at end
    of stream, where a truncated candidate can no longer become complete.
    """

    def __init__(self):
        self._buf = bytearray()
        self.stats = StreamStats()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        return self._drain(at_eof=False)

    def finalize(self) -> list[Message]:
        return self._drain(at_eof=True)

    def _drain(self, at_eof: bool) -> list[Message]:
        out = []
        while self._buf:
            try:
                msg, consumed = decode_frame(self._buf)
            except NeedMoreData:
                if not at_eof:
                    break
                # an incomplete candidate at EOF is garbage; step past its magic
                pos = bytes(self._buf).find(MAGIC, 1)
                if pos == -1:
                    self._buf.clear()
                    break
                del self._buf[:pos]
                self.stats.resyncs += 1
                continue
            except FrameError as exc:
                if isinstance(exc, CrcMismatchError):
                    self.stats.crc_errors += 1
                elif isinstance(exc, UnsupportedFrameError):
                    self.stats.unsupported += 1
                self.stats.resyncs += 1
                del self._buf[: max(1, exc.skip)]
                continue
            out.append(msg)
            self.stats.frames += 1
            del self._buf[:consumed]
        return out


# --- clock offset estimation ----------------------------------------------


@dataclass(frozen=True)
class ClockOffset:
    """remote_time ~= local_time + offset_us, estimated from request/response pairs."""

    offset_us: int
    rtt_us: int


def _div2_toward_zero(value: int) -> int:
    q, r = divmod(value, 2)
    if r and value < 0:
        q += 1
    return q


def _median_toward_zero(values: list[int]) -> int:
    s = sorted(values)
    n = len(s)
    if n % 2 == 1:
        return s[n // 2]
    return _div2_toward_zero(s[n // 2 - 1] + s[n // 2])


def estimate_offset(exchanges: list[tuple[int, int, int, int]]) -> ClockOffset:
    """Median-combined NTP-style offset from (t1, t2, t3, t4) exchanges in us.

    t1/t4 are local send/receive times, t2/t3 remote receive/send times.
    Per exchange offset = ((t2-t1) + (t3-t4)) / 2 and rtt = (t4-t1) - (t3-t2);
    integer divisions round toward zero so both endpoints agree bit-exactly.
    """
    if not exchanges:
        raise ProtocolError("offset estimation needs at least one exchange")
    offsets = []
    rtts = []
    for t1, t2, t3, t4 in exchanges:
        if t4 < t1:
            raise ProtocolError(f"exchange has t4 < t1 ({t4} < {t1})")
        offsets.append(_div2_toward_zero((t2 - t1) + (t3 - t4)))
        rtts.append((t4 - t1) - (t3 - t2))
    return ClockOffset(offset_us=_median_toward_zero(offsets), rtt_us=_median_toward_zero(rtts))
