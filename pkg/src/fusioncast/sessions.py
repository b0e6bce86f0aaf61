"""Session buffering, nearest-timestamp alignment, and uniform-rate resampling.

A Session accumulates timestamped pose (and, for humans, gaze) samples from
one device. After the session ends it can be resampled onto a uniform grid:
each grid point takes the nearest sample per stream within a tolerance, or
becomes a gap. The incremental :class:`GridAligner` does the actual work and
is shared verbatim by the offline :func:`resample` and the live server, which
is what makes offline and online prediction outputs bit-identical.

Persistence is one file per session: a SessionStart frame, the telemetry
frames, and a SessionEnd frame, all in the wire format — on disk and on the
wire the bytes are the same.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import protocol
from .errors import HeadingUndefinedError, OrderingError, ProtocolError
from .geometry import AgentState, heading_from_orientation, rotation_from_quaternion
from .protocol import (
    AGENT_HUMAN,
    AGENT_ROBOT,
    HeadsetSample,
    RobotSample,
    SessionEnd,
    SessionStart,
)

DEFAULT_RATE_HZ = 10
DEFAULT_TOLERANCE_US = 50_000  # half the 10 Hz period
# Gaps of at most this many consecutive grid points carry the last frame
# forward (still gap-flagged); longer gaps leave the frames empty.
BRIDGE_MAX_GAP = 3


def grid_period_us(rate_hz: int) -> int:
    if rate_hz <= 0 or 1_000_000 % rate_hz != 0:
        raise ValueError(f"rate_hz must divide 1e6 microseconds evenly, got {rate_hz}")
    return 1_000_000 // rate_hz


@dataclass
class PoseSample:
    timestamp_us: int
    position: np.ndarray  # (3,) meters, world frame
    orientation: np.ndarray  # (4,) unit quaternion (w, x, y, z)


@dataclass
class GazeSample:
    timestamp_us: int
    direction_local: np.ndarray  # (3,) unit vector, device-local frame


class Session:
    """Append-only sample buffers for one recording, immutable after end().

    ``keep_messages`` retains the raw wire messages for persistence; the
    server turns it off because it appends the bytes straight to disk.
    """

    def __init__(self, session_id: int, agent_kind: str, label: str = "",
                 keep_messages: bool = True):
        if agent_kind not in (AGENT_HUMAN, AGENT_ROBOT):
            raise ValueError(f"agent_kind must be 'human' or 'robot', got {agent_kind!r}")
        self.session_id = int(session_id)
        self.agent_kind = agent_kind
        self.label = label
        self.pose_stream: list[PoseSample] = []
        self.gaze_stream: list[GazeSample] = []
        self.messages: list = [] if keep_messages else None
        self.ordering_rejects = 0
        self.ended = False
        self.complete = True

    @property
    def has_gaze(self) -> bool:
        return self.agent_kind == AGENT_HUMAN

    def first_timestamp_us(self):
        return self.pose_stream[0].timestamp_us if self.pose_stream else None

    def last_timestamp_us(self):
        return self.pose_stream[-1].timestamp_us if self.pose_stream else None

    def _check_order(self, stream, timestamp_us: int, what: str):
        if stream and timestamp_us <= stream[-1].timestamp_us:
            self.ordering_rejects += 1
            raise OrderingError(
                f"{what} timestamp {timestamp_us} not after previous "
                f"{stream[-1].timestamp_us} (session {self.session_id})"
            )

    def append_pose(self, timestamp_us: int, position, orientation):
        if self.ended:
            raise ValueError(f"session {self.session_id} already ended")
        self._check_order(self.pose_stream, timestamp_us, "pose")
        self.pose_stream.append(PoseSample(
            timestamp_us,
            np.asarray(position, dtype=np.float64),
            np.asarray(orientation, dtype=np.float64),
        ))

    def append_gaze(self, timestamp_us: int, direction_local):
        if self.ended:
            raise ValueError(f"session {self.session_id} already ended")
        self._check_order(self.gaze_stream, timestamp_us, "gaze")
        self.gaze_stream.append(GazeSample(
            timestamp_us, np.asarray(direction_local, dtype=np.float64)
        ))

    def ingest(self, msg):
        """Append one telemetry message. Out-of-order timestamps raise
        OrderingError (counted on the session, not fatal to it)."""
        if msg.session_id != self.session_id:
            raise ValueError(
                f"message session_id {msg.session_id} != session {self.session_id}"
            )
        if isinstance(msg, HeadsetSample):
            if self.agent_kind != AGENT_HUMAN:
                raise ValueError("HeadsetSample sent to a robot session")
            self.append_pose(msg.timestamp_us, msg.position, msg.orientation)
            self.append_gaze(msg.timestamp_us, msg.gaze_local)
        elif isinstance(msg, RobotSample):
            if self.agent_kind != AGENT_ROBOT:
                raise ValueError("RobotSample sent to a human session")
            self.append_pose(msg.timestamp_us, msg.position, msg.orientation)
        else:
            raise ValueError(f"not a telemetry message: {msg!r}")
        if self.messages is not None:
            self.messages.append(msg)

    def end(self):
        self.ended = True


def align_nearest(stream, target_ts: int, tolerance_us: int):
    """Sample minimizing |timestamp - target_ts| within the tolerance, or None.

    Ties break toward the earlier sample. ``stream`` must be sorted by
    timestamp (Session guarantees this).
    """
    if not stream:
        return None
    idx = bisect.bisect_left(stream, target_ts, key=lambda s: s.timestamp_us)
    best = None
    best_diff = None
    if idx > 0:
        earlier = stream[idx - 1]
        best, best_diff = earlier, target_ts - earlier.timestamp_us
    if idx < len(stream):
        later = stream[idx]
        diff = later.timestamp_us - target_ts
        if best is None or diff < best_diff:  # strict: equal diff keeps the earlier
            best, best_diff = later, diff
    if best is None or best_diff > tolerance_us:
        return None
    return best


@dataclass
class AlignedFrame:
    """One grid point after alignment. Gap frames carry the previous state
    (if the gap is short) and are flagged; windows never include them."""

    timestamp_us: int
    state: AgentState | None
    gaze_world: np.ndarray | None = None
    source_pose_ts: int | None = None
    source_gaze_ts: int | None = None
    is_gap: bool = False
    heading_carried: bool = False


class GridAligner:
    """Incrementally aligns pose/gaze streams onto a uniform timestamp grid.

    Samples are pushed in timestamp order per stream. A grid point is emitted
    once every mandatory stream has advanced past grid_ts + tolerance, so no
    later sample can change the nearest-neighbor choice; finish() flushes the
    remaining grid points up to the last common timestamp. Memory stays
    bounded by the tolerance window.
    """

    def __init__(self, agent_kind: str, rate_hz: int = DEFAULT_RATE_HZ,
                 tolerance_us: int = DEFAULT_TOLERANCE_US):
        self.agent_kind = agent_kind
        self.needs_gaze = agent_kind == AGENT_HUMAN
        self.period_us = grid_period_us(rate_hz)
        self.tolerance_us = int(tolerance_us)
        self._pose: deque[PoseSample] = deque()
        self._gaze: deque[GazeSample] = deque()
        self._pose_first = self._pose_last = None
        self._gaze_first = self._gaze_last = None
        self._grid_ts = None
        self._prev_state: AgentState | None = None
        self._prev_gaze: np.ndarray | None = None
        self._prev_heading: float | None = None
        self._gap_run = 0
        self.gap_frames = 0
        self.heading_carries = 0
        self._finished = False

    def push_pose(self, sample: PoseSample) -> list[AlignedFrame]:
        self._pose.append(sample)
        if self._pose_first is None:
            self._pose_first = sample.timestamp_us
        self._pose_last = sample.timestamp_us
        return self._drain()

    def push_gaze(self, sample: GazeSample) -> list[AlignedFrame]:
        self._gaze.append(sample)
        if self._gaze_first is None:
            self._gaze_first = sample.timestamp_us
        self._gaze_last = sample.timestamp_us
        return self._drain()

    def push_message(self, msg) -> list[AlignedFrame]:
        if isinstance(msg, HeadsetSample):
            frames = self.push_pose(PoseSample(
                msg.timestamp_us,
                np.array(msg.position), np.array(msg.orientation),
            ))
            frames += self.push_gaze(GazeSample(msg.timestamp_us, np.array(msg.gaze_local)))
            return frames
        if isinstance(msg, RobotSample):
            return self.push_pose(PoseSample(
                msg.timestamp_us, np.array(msg.position), np.array(msg.orientation)
            ))
        raise ValueError(f"not a telemetry message: {msg!r}")

    def finish(self) -> list[AlignedFrame]:
        """Flush grid points through the last common timestamp."""
        if self._finished:
            return []
        self._finished = True
        if not self._grid_init():
            return []
        last_common = self._pose_last
        if self.needs_gaze:
            last_common = min(last_common, self._gaze_last)
        out = []
        while self._grid_ts <= last_common:
            out.append(self._emit())
        return out

    def _grid_init(self) -> bool:
        if self._grid_ts is not None:
            return True
        if self._pose_first is None:
            return False
        start = self._pose_first
        if self.needs_gaze:
            if self._gaze_first is None:
                return False
            start = max(start, self._gaze_first)
        self._grid_ts = start
        return True

    def _drain(self) -> list[AlignedFrame]:
        if not self._grid_init():
            return []
        out = []
        while self._ready():
            out.append(self._emit())
        return out

    def _ready(self) -> bool:
        bound = self._grid_ts + self.tolerance_us
        if self._pose_last < bound:
            return False
        if self.needs_gaze and self._gaze_last < bound:
            return False
        return True

    def _nearest(self, buf: deque, grid_ts: int):
        # Prune everything before the tolerance window, then linear-scan it
        # (the window holds a handful of samples at sane input rates).
        low = grid_ts - self.tolerance_us
        while buf and buf[0].timestamp_us < low:
            buf.popleft()
        best = None
        best_diff = None
        for sample in buf:
            if sample.timestamp_us > grid_ts + self.tolerance_us:
                break
            diff = abs(sample.timestamp_us - grid_ts)
            if best is None or diff < best_diff:  # ties keep the earlier sample
                best, best_diff = sample, diff
        return best

    def _emit(self) -> AlignedFrame:
        grid_ts = self._grid_ts
        self._grid_ts += self.period_us
        pose = self._nearest(self._pose, grid_ts)
        gaze = self._nearest(self._gaze, grid_ts) if self.needs_gaze else None
        if pose is None or (self.needs_gaze and gaze is None):
            return self._emit_gap(grid_ts)

        heading_carried = False
        try:
            heading = heading_from_orientation(pose.orientation)
        except HeadingUndefinedError:
            if self._prev_heading is None:
                # Degenerate heading before any valid one: nothing to carry.
                return self._emit_gap(grid_ts)
            heading = self._prev_heading
            heading_carried = True
            self.heading_carries += 1

        state = AgentState(float(pose.position[0]), float(pose.position[1]), heading)
        gaze_world = None
        if gaze is not None:
            gaze_world = rotation_from_quaternion(pose.orientation) @ gaze.direction_local

        self._gap_run = 0
        self._prev_state = state
        self._prev_gaze = gaze_world
        self._prev_heading = heading
        return AlignedFrame(
            timestamp_us=grid_ts,
            state=state,
            gaze_world=gaze_world,
            source_pose_ts=pose.timestamp_us,
            source_gaze_ts=gaze.timestamp_us if gaze is not None else None,
            heading_carried=heading_carried,
        )

    def _emit_gap(self, grid_ts: int) -> AlignedFrame:
        self._gap_run += 1
        self.gap_frames += 1
        if self._gap_run <= BRIDGE_MAX_GAP and self._prev_state is not None:
            state, gaze = self._prev_state, self._prev_gaze
        else:
            state, gaze = None, None
        return AlignedFrame(timestamp_us=grid_ts, state=state, gaze_world=gaze, is_gap=True)


@dataclass
class ResampleResult:
    frames: list[AlignedFrame] = field(default_factory=list)
    gap_frames: int = 0
    heading_carries: int = 0
    note: str = ""

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)


def resample(session: Session, rate_hz: int = DEFAULT_RATE_HZ,
             tolerance_us: int = DEFAULT_TOLERANCE_US) -> ResampleResult:
    """Align an ended session onto a uniform grid from the first to the last
    timestamp common to its mandatory streams."""
    if not session.ended:
        raise ValueError("resample requires an ended session")
    aligner = GridAligner(session.agent_kind, rate_hz, tolerance_us)
    frames: list[AlignedFrame] = []
    pose, gaze = session.pose_stream, session.gaze_stream
    i = j = 0
    while i < len(pose) or j < len(gaze):
        if j >= len(gaze) or (i < len(pose) and pose[i].timestamp_us <= gaze[j].timestamp_us):
            frames += aligner.push_pose(pose[i])
            i += 1
        else:
            frames += aligner.push_gaze(gaze[j])
            j += 1
    frames += aligner.finish()
    note = ""
    if not frames:
        note = "session shorter than one grid interval; no aligned output"
    return ResampleResult(frames, aligner.gap_frames, aligner.heading_carries, note)


def session_start_message(session: Session) -> SessionStart:
    return SessionStart(session.session_id, session.agent_kind, session.label)


def save_session(session: Session, path) -> None:
    """Persist a session as wire frames: SessionStart, telemetry, SessionEnd."""
    if session.messages is None:
        raise ValueError("session was created with keep_messages=False")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(protocol.encode(session_start_message(session)))
        for msg in session.messages:
            fh.write(protocol.encode(msg))
        fh.write(protocol.encode(SessionEnd(session.session_id, complete=session.complete)))


def load_session(path) -> Session:
    """Load a persisted session. A missing SessionEnd marks it incomplete."""
    data = Path(path).read_bytes()
    result = protocol.decode(data)
    if result is None or not isinstance(result[0], SessionStart):
        raise ProtocolError(f"{path}: does not start with a SessionStart frame")
    start, rest = result
    session = Session(start.session_id, start.agent_kind, start.label)
    saw_end = False
    while rest:
        result = protocol.decode(rest)
        if result is None:
            break  # partial trailing frame: writer died mid-write
        msg, rest = result
        if isinstance(msg, SessionEnd):
            session.complete = msg.complete
            saw_end = True
            break
        session.ingest(msg)
    if not saw_end:
        session.complete = False
    session.end()
    return session
