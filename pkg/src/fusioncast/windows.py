"""Fixed observation/horizon windowing and leakage-free session-level splits."""

from __future__ import annotations

import dataclasses
import json
import random
from dataclasses import dataclass
from enum import Enum

from .errors import ConfigError
from .sessions import AlignedFrame

OBS_FRAMES = 20  # 2 s at 10 Hz
HORIZON_FRAMES = 40  # 4 s at 10 Hz
DEFAULT_STRIDE = 10  # 1 s between window starts


class FeatureConfig(str, Enum):
    POSE_ONLY = "pose_only"
    POSE_HEAD_GAZE = "pose_head_gaze"
    ROBOT_POSE_ONLY = "robot_pose_only"

    @property
    def channels(self) -> int:
        """Feature channels per frame (see predictors.extract_features)."""
        return 6 if self is FeatureConfig.POSE_HEAD_GAZE else 4

    @property
    def uses_gaze(self) -> bool:
        return self is FeatureConfig.POSE_HEAD_GAZE


@dataclass(frozen=True)
class TrajectoryWindow:
    """Contiguous gap-free frames: ``observed`` for input, ``future`` as the
    prediction target. Live windows (server side) have an empty future."""

    session_id: int
    start_index: int
    feature_config: FeatureConfig
    observed: tuple[AlignedFrame, ...]
    future: tuple[AlignedFrame, ...] = ()

    def __post_init__(self):
        if not self.observed:
            raise ValueError("window must contain observed frames")

    @property
    def frames(self) -> tuple[AlignedFrame, ...]:
        return self.observed + self.future


def _usable(frame: AlignedFrame, need_gaze: bool) -> bool:
    if frame.is_gap or frame.state is None:
        return False
    if need_gaze and frame.gaze_world is None:
        return False
    return True


def _strip_gaze(frame: AlignedFrame) -> AlignedFrame:
    if frame.gaze_world is None:
        return frame
    return dataclasses.replace(frame, gaze_world=None, source_gaze_ts=None)


def segment(frames, session_id: int, feature_config: FeatureConfig,
            obs: int = OBS_FRAMES, horizon: int = HORIZON_FRAMES,
            stride: int = DEFAULT_STRIDE) -> list[TrajectoryWindow]:
    """Cut aligned frames into windows of ``obs`` observed + ``horizon``
    future frames at every ``stride`` offset inside each gap-free run.

    Pose-only windows get their gaze channel removed at construction, so a
    predictor handed one structurally cannot read gaze.
    """
    if obs < 2 or horizon < 1 or stride < 1:
        raise ValueError(f"bad window geometry obs={obs} horizon={horizon} stride={stride}")
    frames = list(frames)
    need_gaze = feature_config.uses_gaze
    span = obs + horizon
    windows: list[TrajectoryWindow] = []

    run_start = None
    for idx in range(len(frames) + 1):
        inside = idx < len(frames) and _usable(frames[idx], need_gaze)
        if inside and run_start is None:
            run_start = idx
        if not inside and run_start is not None:
            run_len = idx - run_start
            count = max(0, (run_len - span) // stride + 1)
            for k in range(count):
                start = run_start + k * stride
                chunk = frames[start:start + span]
                if not feature_config.uses_gaze:
                    chunk = [_strip_gaze(f) for f in chunk]
                _check_contiguous(chunk)
                windows.append(TrajectoryWindow(
                    session_id=session_id,
                    start_index=start,
                    feature_config=feature_config,
                    observed=tuple(chunk[:obs]),
                    future=tuple(chunk[obs:]),
                ))
            run_start = None
    return windows


def _check_contiguous(chunk) -> None:
    step = chunk[1].timestamp_us - chunk[0].timestamp_us
    for a, b in zip(chunk, chunk[1:]):
        if b.timestamp_us - a.timestamp_us != step:
            raise ValueError("window frames are not an arithmetic timestamp sequence")


@dataclass(frozen=True)
class DatasetSplit:
    """Whole-session assignment to train/validation/test. Disjointness and
    coverage are checked at construction."""

    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]
    ratios: tuple[float, float, float]
    seed: int

    def __post_init__(self):
        buckets = [set(self.train), set(self.validation), set(self.test)]
        total = sum(len(b) for b in buckets)
        merged = set().union(*buckets)
        if total != len(merged):
            raise ConfigError("split buckets are not disjoint")

    def bucket_of(self, session_id: int) -> str:
        if session_id in self.train:
            return "train"
        if session_id in self.validation:
            return "validation"
        if session_id in self.test:
            return "test"
        raise KeyError(f"session {session_id} not in split")

    def to_json(self) -> str:
        return json.dumps({
            "train": list(self.train),
            "validation": list(self.validation),
            "test": list(self.test),
            "ratios": list(self.ratios),
            "seed": self.seed,
        }, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetSplit":
        raw = json.loads(text)
        return cls(
            train=tuple(raw["train"]),
            validation=tuple(raw["validation"]),
            test=tuple(raw["test"]),
            ratios=tuple(raw["ratios"]),
            seed=raw["seed"],
        )


def split_sessions(session_ids, ratios: tuple[float, float, float], seed: int) -> DatasetSplit:
    """Deterministic session-level split: seeded shuffle, then contiguous
    partition. Bucket sizes are the ratio floors with leftovers handed out
    train-first; a bucket with nonzero ratio is never left empty."""
    ids = sorted(int(s) for s in session_ids)
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate session ids")
    if len(ids) < 3:
        raise ConfigError(f"need at least 3 sessions to split, got {len(ids)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios!r}")
    if any(r < 0 for r in ratios):
        raise ConfigError(f"split ratios must be nonnegative, got {ratios!r}")
    nonzero = sum(1 for r in ratios if r > 0)
    if len(ids) < nonzero:
        raise ConfigError(f"{len(ids)} sessions cannot fill {nonzero} split buckets")

    rng = random.Random(seed)
    rng.shuffle(ids)

    n = len(ids)
    # Epsilon guards against 0.7 * 10 -> 6.999... style float truncation.
    sizes = [int(r * n + 1e-9) for r in ratios]
    leftover = n - sum(sizes)
    for i in range(3):  # train first, then validation, then test
        while leftover > 0 and ratios[i] > 0:
            sizes[i] += 1
            leftover -= 1
            break
        if leftover == 0:
            break
    # Any remaining leftover (two zero ratios etc.) goes to train.
    sizes[0] += leftover

    # Repair: no nonzero-ratio bucket may end up empty.
    for i in range(3):
        if ratios[i] > 0 and sizes[i] == 0:
            donor = max(range(3), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[i] += 1

    c1, c2 = sizes[0], sizes[0] + sizes[1]
    return DatasetSplit(
        train=tuple(ids[:c1]),
        validation=tuple(ids[c1:c2]),
        test=tuple(ids[c2:]),
        ratios=tuple(float(r) for r in ratios),
        seed=int(seed),
    )
