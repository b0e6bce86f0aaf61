"""Binary wire format for telemetry and prediction frames.

Frame layout, little-endian throughout:

    u32  length     byte count of msg_type + payload
    u8   msg_type
    ...  payload    fixed layout per message type

A connection is a plain concatenation of frames. There is no
resynchronization: any malformed frame is a ProtocolError and the reader
closes the connection. Messages are immutable after construction and
validated there, so encode(decode(bytes)) and decode(encode(msg)) are exact
inverses, bit-for-bit on every float.

Payloads:

    0x7F Hello         (empty)
    0x10 SessionStart  u32 session_id, u8 agent_kind, u16 label_len, utf-8 label
    0x11 SessionEnd    u32 session_id, u8 complete
    0x01 HeadsetSample u64 timestamp_us, u32 session_id,
                       3xf64 position_m, 4xf64 orientation_wxyz, 3xf64 gaze_local
    0x02 RobotSample   u64 timestamp_us, u32 session_id,
                       3xf64 position_m, 4xf64 orientation_wxyz,
                       f64 linear_speed_mps, f64 yaw_rate_radps
    0x03 Prediction    u64 timestamp_us (last observation), u32 session_id,
                       u16 horizon_count, horizon_count x 3xf64 (x, y, theta)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

from .errors import ProtocolError, ValidationError

MSG_HEADSET_SAMPLE = 0x01
MSG_ROBOT_SAMPLE = 0x02
MSG_PREDICTION = 0x03
MSG_SESSION_START = 0x10
MSG_SESSION_END = 0x11
MSG_HELLO = 0x7F

MSG_NAMES = {
    MSG_HEADSET_SAMPLE: "HeadsetSample",
    MSG_ROBOT_SAMPLE: "RobotSample",
    MSG_PREDICTION: "Prediction",
    MSG_SESSION_START: "SessionStart",
    MSG_SESSION_END: "SessionEnd",
    MSG_HELLO: "Hello",
}

# Guard against hostile or corrupt length prefixes.
MAX_FRAME_LEN = 64 * 1024

AGENT_HUMAN = "human"
AGENT_ROBOT = "robot"
_AGENT_CODES = {AGENT_HUMAN: 0, AGENT_ROBOT: 1}
_AGENT_NAMES = {0: AGENT_HUMAN, 1: AGENT_ROBOT}

_HEADER = struct.Struct("<IB")
_HEADSET = struct.Struct("<QI10d")
_ROBOT = struct.Struct("<QI9d")
_PREDICTION_HEAD = struct.Struct("<QIH")
_SESSION_START_HEAD = struct.Struct("<IBH")
_SESSION_END = struct.Struct("<IB")

_U32_MAX = 2**32 - 1
_U64_MAX = 2**64 - 1


def _check_uint(value: int, bits: int, what: str) -> int:
    if not isinstance(value, int) or value < 0 or value >= (1 << bits):
        raise ValidationError(f"{what} must fit in an unsigned {bits}-bit int, got {value!r}")
    return value


def _check_finite_tuple(values, n: int, what: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if len(out) != n:
        raise ValidationError(f"{what} must have {n} components, got {len(out)}")
    for v in out:
        if not math.isfinite(v):
            raise ValidationError(f"{what} has non-finite component {v!r}")
    return out


def _check_unit_tuple(values, n: int, what: str) -> tuple[float, ...]:
    out = _check_finite_tuple(values, n, what)
    norm = math.sqrt(sum(v * v for v in out))
    if abs(norm - 1.0) > 1e-6:
        raise ValidationError(f"{what} norm {norm!r} not within 1e-6 of 1")
    if abs(norm - 1.0) <= 1e-12:
        return out
    return tuple(v / norm for v in out)


@dataclass(frozen=True)
class Hello:
    """Version/identity handshake; both peers send one before anything else."""


@dataclass(frozen=True)
class SessionStart:
    session_id: int
    agent_kind: str
    label: str = ""

    def __post_init__(self):
        _check_uint(self.session_id, 32, "session_id")
        if self.agent_kind not in _AGENT_CODES:
            raise ValidationError(f"agent_kind must be 'human' or 'robot', got {self.agent_kind!r}")
        if len(self.label.encode("utf-8")) > 0xFFFF:
            raise ValidationError("label longer than 65535 bytes")


@dataclass(frozen=True)
class SessionEnd:
    session_id: int
    complete: bool = True

    def __post_init__(self):
        _check_uint(self.session_id, 32, "session_id")


@dataclass(frozen=True)
class HeadsetSample:
    timestamp_us: int
    session_id: int
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # (w, x, y, z), unit
    gaze_local: tuple[float, float, float]  # unit, device-local frame

    def __post_init__(self):
        _check_uint(self.timestamp_us, 64, "timestamp_us")
        _check_uint(self.session_id, 32, "session_id")
        object.__setattr__(self, "position", _check_finite_tuple(self.position, 3, "position"))
        object.__setattr__(self, "orientation", _check_unit_tuple(self.orientation, 4, "orientation"))
        object.__setattr__(self, "gaze_local", _check_unit_tuple(self.gaze_local, 3, "gaze_local"))


@dataclass(frozen=True)
class RobotSample:
    timestamp_us: int
    session_id: int
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]
    linear_speed: float  # m/s, >= 0
    yaw_rate: float  # rad/s

    def __post_init__(self):
        _check_uint(self.timestamp_us, 64, "timestamp_us")
        _check_uint(self.session_id, 32, "session_id")
        object.__setattr__(self, "position", _check_finite_tuple(self.position, 3, "position"))
        object.__setattr__(self, "orientation", _check_unit_tuple(self.orientation, 4, "orientation"))
        object.__setattr__(self, "linear_speed", float(self.linear_speed))
        object.__setattr__(self, "yaw_rate", float(self.yaw_rate))
        if not math.isfinite(self.linear_speed) or self.linear_speed < 0.0:
            raise ValidationError(f"linear_speed must be finite and >= 0, got {self.linear_speed!r}")
        if not math.isfinite(self.yaw_rate):
            raise ValidationError(f"yaw_rate must be finite, got {self.yaw_rate!r}")


@dataclass(frozen=True)
class Prediction:
    timestamp_us: int  # timestamp of the last observed frame
    session_id: int
    states: tuple[tuple[float, float, float], ...]  # (x, y, theta) per horizon step

    def __post_init__(self):
        _check_uint(self.timestamp_us, 64, "timestamp_us")
        _check_uint(self.session_id, 32, "session_id")
        states = tuple(_check_finite_tuple(s, 3, "prediction state") for s in self.states)
        _check_uint(len(states), 16, "horizon_count")
        for _, _, theta in states:
            if not (-math.pi < theta <= math.pi):
                raise ValidationError(f"prediction theta {theta!r} outside (-pi, pi]")
        object.__setattr__(self, "states", states)

    @property
    def horizon_count(self) -> int:
        return len(self.states)


Message = Hello | SessionStart | SessionEnd | HeadsetSample | RobotSample | Prediction


def _payload(msg: Message) -> tuple[int, bytes]:
    if isinstance(msg, Hello):
        return MSG_HELLO, b""
    if isinstance(msg, SessionStart):
        label = msg.label.encode("utf-8")
        return MSG_SESSION_START, _SESSION_START_HEAD.pack(
            msg.session_id, _AGENT_CODES[msg.agent_kind], len(label)
        ) + label
    if isinstance(msg, SessionEnd):
        return MSG_SESSION_END, _SESSION_END.pack(msg.session_id, 1 if msg.complete else 0)
    if isinstance(msg, HeadsetSample):
        return MSG_HEADSET_SAMPLE, _HEADSET.pack(
            msg.timestamp_us, msg.session_id, *msg.position, *msg.orientation, *msg.gaze_local
        )
    if isinstance(msg, RobotSample):
        return MSG_ROBOT_SAMPLE, _ROBOT.pack(
            msg.timestamp_us, msg.session_id, *msg.position, *msg.orientation,
            msg.linear_speed, msg.yaw_rate,
        )
    if isinstance(msg, Prediction):
        flat = [v for state in msg.states for v in state]
        return MSG_PREDICTION, _PREDICTION_HEAD.pack(
            msg.timestamp_us, msg.session_id, len(msg.states)
        ) + struct.pack(f"<{len(flat)}d", *flat)
    raise ValidationError(f"not a wire message: {msg!r}")


def encode(msg: Message) -> bytes:
    """Encode one message as a length-prefixed frame."""
    if hasattr(msg, "__post_init__"):
        msg.__post_init__()  # re-validate: constructors can be bypassed
    tag, payload = _payload(msg)
    length = 1 + len(payload)
    if length > MAX_FRAME_LEN:
        raise ValidationError(f"frame length {length} exceeds {MAX_FRAME_LEN}")
    return _HEADER.pack(length, tag) + payload


def _decode_payload(tag: int, payload: bytes) -> Message:
    if tag == MSG_HELLO:
        if payload:
            raise ProtocolError(f"Hello payload must be empty, got {len(payload)} bytes")
        return Hello()
    if tag == MSG_SESSION_START:
        if len(payload) < _SESSION_START_HEAD.size:
            raise ProtocolError("SessionStart payload too short")
        sid, kind_code, label_len = _SESSION_START_HEAD.unpack_from(payload)
        rest = payload[_SESSION_START_HEAD.size:]
        if kind_code not in _AGENT_NAMES:
            raise ProtocolError(f"unknown agent kind code {kind_code}")
        if len(rest) != label_len:
            raise ProtocolError(f"SessionStart label length {label_len} != {len(rest)} bytes present")
        try:
            label = rest.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"SessionStart label is not valid utf-8: {exc}") from exc
        return SessionStart(sid, _AGENT_NAMES[kind_code], label)
    if tag == MSG_SESSION_END:
        if len(payload) != _SESSION_END.size:
            raise ProtocolError(f"SessionEnd payload must be {_SESSION_END.size} bytes")
        sid, complete = _SESSION_END.unpack(payload)
        return SessionEnd(sid, bool(complete))
    if tag == MSG_HEADSET_SAMPLE:
        if len(payload) != _HEADSET.size:
            raise ProtocolError(f"HeadsetSample payload must be {_HEADSET.size} bytes, got {len(payload)}")
        vals = _HEADSET.unpack(payload)
        return HeadsetSample(vals[0], vals[1], vals[2:5], vals[5:9], vals[9:12])
    if tag == MSG_ROBOT_SAMPLE:
        if len(payload) != _ROBOT.size:
            raise ProtocolError(f"RobotSample payload must be {_ROBOT.size} bytes, got {len(payload)}")
        vals = _ROBOT.unpack(payload)
        return RobotSample(vals[0], vals[1], vals[2:5], vals[5:9], vals[9], vals[10])
    if tag == MSG_PREDICTION:
        if len(payload) < _PREDICTION_HEAD.size:
            raise ProtocolError("Prediction payload too short")
        ts, sid, count = _PREDICTION_HEAD.unpack_from(payload)
        expected = _PREDICTION_HEAD.size + 24 * count
        if len(payload) != expected:
            raise ProtocolError(
                f"Prediction payload must be {expected} bytes for {count} states, got {len(payload)}"
            )
        flat = struct.unpack_from(f"<{3 * count}d", payload, _PREDICTION_HEAD.size)
        states = tuple(tuple(flat[3 * i:3 * i + 3]) for i in range(count))
        return Prediction(ts, sid, states)
    raise ProtocolError(f"unknown msg_type 0x{tag:02X}")


def decode(buf) -> tuple[Message, bytes] | None:
    """Decode the first complete frame of ``buf``.

    Returns (message, unconsumed suffix), or None when the buffer holds only
    a prefix of a frame (need more bytes; nothing consumed). Raises
    ProtocolError on anything malformed. Never reads past the declared
    frame length.
    """
    view = bytes(buf)
    if len(view) < _HEADER.size:
        return None
    length, tag = _HEADER.unpack_from(view)
    if length < 1:
        raise ProtocolError(f"frame length {length} below minimum of 1")
    if length > MAX_FRAME_LEN:
        raise ProtocolError(f"frame length {length} exceeds maximum {MAX_FRAME_LEN}")
    end = 4 + length
    if len(view) < end:
        return None
    payload = view[_HEADER.size:end]
    try:
        msg = _decode_payload(tag, payload)
    except ValidationError as exc:
        # Bytes parsed but the field content is invalid (NaN, bad norm, ...).
        raise ProtocolError(f"{MSG_NAMES.get(tag, hex(tag))} field invalid: {exc}") from exc
    return msg, view[end:]


class StreamDecoder:
    """Accumulates stream bytes and yields complete messages in order."""

    def __init__(self):
        self._buf = bytearray()

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out: list[Message] = []
        while True:
            result = decode(self._buf)
            if result is None:
                return out
            msg, rest = result
            self._buf = bytearray(rest)
            out.append(msg)
