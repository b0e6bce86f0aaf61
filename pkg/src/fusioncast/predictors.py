"""Trajectory predictors over observation windows.

Two predictor families share one interface (predict / sample):

- ConstantVelocityPredictor: extrapolates the mean velocity and yaw rate of
  the last few observed frames. Sanity floor for the displacement metrics.
- RidgeModel: closed-form ridge regression from per-frame motion features
  (and, in the full configuration, head/gaze cue channels) to the 40 future
  planar displacements, everything expressed in the body frame at the end of
  the observation so the learned map is invariant to where and which way the
  session happened in the world.

Feature channels per observed frame:

    dx, dy          frame-to-frame displacement, rotated into the body frame
                    at the observation end (m)
    speed           displacement norm / dt (m/s)
    heading_delta   change in state heading (rad)
    head_rel        state heading minus course (rad)       [full config only]
    gaze_rel        gaze yaw minus course (rad)            [full config only]

"course" is the direction of travel atan2(dy, dx) of the raw displacement;
head_rel/gaze_rel therefore measure how far the head and gaze point away
from where the body is going — the anticipation cue.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ValidationError
from .geometry import AgentState, wrap_angle
from .windows import HORIZON_FRAMES, FeatureConfig, TrajectoryWindow

FRAME_DT = 0.1  # s, fixed by the 10 Hz grid

MODEL_MAGIC = b"FCM1"

# Frames of observed history used by the constant-velocity extrapolation.
CV_TAIL = 5

_STD_FLOOR = 1e-12  # below this a feature dimension is degenerate and dropped


def _window_arrays(window: TrajectoryWindow):
    obs = window.observed
    pos = np.array([[f.state.x, f.state.y] for f in obs])
    theta = np.array([f.state.theta for f in obs])
    return pos, theta


def _gaze_yaws(window: TrajectoryWindow, theta: np.ndarray) -> np.ndarray:
    yaws = np.empty(len(window.observed))
    for i, frame in enumerate(window.observed):
        g = frame.gaze_world
        if g is None:
            raise ConfigError("window has no gaze channel but gaze features were requested")
        if math.hypot(g[0], g[1]) < 1e-6:
            # Gaze pointing straight up/down has no yaw; fall back to the head.
            yaws[i] = theta[i]
        else:
            yaws[i] = math.atan2(g[1], g[0])
    return yaws


def _course(pos: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Direction of travel per frame; index 0 and stationary frames fall back
    to the state heading (keeps the value defined and rotation-equivariant)."""
    course = np.empty(len(pos))
    course[0] = theta[0]
    for i in range(1, len(pos)):
        dx, dy = pos[i] - pos[i - 1]
        if math.hypot(dx, dy) < 1e-9:
            course[i] = course[i - 1]
        else:
            course[i] = math.atan2(dy, dx)
    return course


def _body_rotation(theta_ref: float) -> np.ndarray:
    c, s = math.cos(theta_ref), math.sin(theta_ref)
    return np.array([[c, -s], [s, c]])


def extract_features(window: TrajectoryWindow, config: FeatureConfig) -> np.ndarray:
    """Flatten a window's observed frames into the feature vector for
    ``config``. The window must have been built with the same configuration;
    in particular robot windows cannot provide gaze channels."""
    if window.feature_config is not config:
        raise ConfigError(
            f"window built for {window.feature_config.value} cannot serve {config.value}"
        )
    pos, theta = _window_arrays(window)
    n = len(pos)

    dp = np.zeros((n, 2))
    dp[1:] = pos[1:] - pos[:-1]
    speed = np.linalg.norm(dp, axis=1) / FRAME_DT
    speed[0] = 0.0
    heading_delta = np.zeros(n)
    for i in range(1, n):
        heading_delta[i] = wrap_angle(theta[i] - theta[i - 1])

    theta_ref = float(theta[-1])
    rel_dp = dp @ _body_rotation(-theta_ref).T

    cols = [rel_dp[:, 0], rel_dp[:, 1], speed, heading_delta]
    if config.uses_gaze:
        course = _course(pos, theta)
        gaze_yaw = _gaze_yaws(window, theta)
        head_rel = np.array([wrap_angle(t - c) for t, c in zip(theta, course)])
        gaze_rel = np.array([wrap_angle(g - c) for g, c in zip(gaze_yaw, course)])
        cols += [head_rel, gaze_rel]

    return np.column_stack(cols).reshape(-1)


def extract_targets(window: TrajectoryWindow) -> np.ndarray:
    """Future positions relative to the observation end, in its body frame,
    flattened to (2 * horizon,)."""
    if not window.future:
        raise ValueError("window has no future frames to use as targets")
    pos, theta = _window_arrays(window)
    theta_ref = float(theta[-1])
    origin = pos[-1]
    fut = np.array([[f.state.x, f.state.y] for f in window.future])
    rel = (fut - origin) @ _body_rotation(-theta_ref).T
    return rel.reshape(-1)


def _states_from_displacements(window: TrajectoryWindow, rel: np.ndarray) -> list[AgentState]:
    """Rotate/translate body-frame displacements back to the world frame and
    derive headings from finite differences of the predicted positions."""
    pos, theta = _window_arrays(window)
    theta_ref = float(theta[-1])
    world = pos[-1] + rel @ _body_rotation(theta_ref).T
    states = []
    prev = pos[-1]
    prev_heading = theta_ref
    for point in world:
        dx, dy = point - prev
        if math.hypot(dx, dy) >= 1e-9:
            prev_heading = math.atan2(dy, dx)
        states.append(AgentState(float(point[0]), float(point[1]), prev_heading))
        prev = point
    return states


def _jitter_window(window: TrajectoryWindow, rng: np.random.Generator,
                   sigma: float) -> TrajectoryWindow:
    """Copy of the window with N(0, sigma^2) noise on the observed x/y."""
    noise = rng.normal(0.0, sigma, size=(len(window.observed), 2))
    observed = tuple(
        replace(f, state=AgentState(f.state.x + n[0], f.state.y + n[1], f.state.theta))
        for f, n in zip(window.observed, noise)
    )
    return replace(window, observed=observed)


class ConstantVelocityPredictor:
    """Extrapolates the mean velocity and yaw rate of the last CV_TAIL frames."""

    def __init__(self, feature_config: FeatureConfig, horizon: int = HORIZON_FRAMES):
        self.feature_config = feature_config
        self.horizon = horizon

    def predict(self, window: TrajectoryWindow) -> list[AgentState]:
        if window.feature_config is not self.feature_config:
            raise ConfigError(
                f"window config {window.feature_config.value} != predictor "
                f"config {self.feature_config.value}"
            )
        pos, theta = _window_arrays(window)
        tail = min(CV_TAIL, len(pos) - 1)
        velocity = (pos[-1] - pos[-1 - tail]) / (tail * FRAME_DT)
        yaw_rate = sum(
            wrap_angle(theta[i] - theta[i - 1]) for i in range(len(theta) - tail, len(theta))
        ) / (tail * FRAME_DT)
        states = []
        for k in range(1, self.horizon + 1):
            point = pos[-1] + velocity * (k * FRAME_DT)
            heading = wrap_angle(theta[-1] + yaw_rate * k * FRAME_DT)
            states.append(AgentState(float(point[0]), float(point[1]), heading))
        return states

    def sample(self, window: TrajectoryWindow, k: int, sigma: float, seed=0) -> list[list[AgentState]]:
        return _sample_by_jitter(self, window, k, sigma, seed)


@dataclass
class RidgeModel:
    """Closed-form ridge regressor from window features to future displacements.

    Features are normalized per dimension by the training std (scale only;
    the mean is recorded for diagnostics but not subtracted — centering plus
    the intercept-free map would make predictions zero-mean over the training
    set, i.e. unable to express forward motion). Dimensions whose std
    collapses are dropped and recorded. Zero features predict zero
    displacement, so lam -> inf degrades gracefully to a stationary forecast.
    """

    feature_config: FeatureConfig
    lam: float
    mean: np.ndarray  # (D,)
    std: np.ndarray  # (D,)
    kept: np.ndarray  # (D,) bool, dims retained after degeneracy drop
    weights: np.ndarray  # (D_kept, 2 * horizon)
    obs_frames: int
    horizon: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)):
            raise ValidationError("model weights contain non-finite values")
        if np.any(self.std[self.kept] <= 0):
            raise ValidationError("kept feature dimensions must have positive std")

    @property
    def dropped_dims(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(~self.kept)]

    def _normalize(self, feats: np.ndarray) -> np.ndarray:
        return feats[..., self.kept] / self.std[self.kept]

    def predict(self, window: TrajectoryWindow) -> list[AgentState]:
        if window.feature_config is not self.feature_config:
            raise ConfigError(
                f"window config {window.feature_config.value} != model "
                f"config {self.feature_config.value}"
            )
        feats = extract_features(window, self.feature_config)
        rel = (self._normalize(feats) @ self.weights).reshape(self.horizon, 2)
        return _states_from_displacements(window, rel)

    def sample(self, window: TrajectoryWindow, k: int, sigma: float, seed=0) -> list[list[AgentState]]:
        return _sample_by_jitter(self, window, k, sigma, seed)


def _sample_by_jitter(predictor, window: TrajectoryWindow, k: int, sigma: float,
                      seed=0) -> list[list[AgentState]]:
    """K predictions from K independently input-jittered copies of the window.

    The deterministic predictor is turned into a sampler by perturbing the
    observed positions; sigma = 0 collapses to K identical trajectories.
    """
    if k < 1:
        raise ValueError(f"ensemble size must be >= 1, got {k}")
    if sigma < 0:
        raise ValueError(f"jitter sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(k):
        jittered = _jitter_window(window, rng, sigma) if sigma > 0 else window
        out.append(predictor.predict(jittered))
    return out


def fit_ridge(windows, config: FeatureConfig, lam: float = 1e-3,
              horizon: int = HORIZON_FRAMES) -> RidgeModel:
    """Solve the regularized normal equations (X^T X + lam I) W = X^T Y.

    lam = 0 is accepted but can raise a numeric error on singular designs;
    negative lam is rejected outright.
    """
    if lam < 0:
        raise ValueError(f"ridge lam must be >= 0, got {lam}")
    windows = list(windows)
    if not windows:
        raise ValueError("no training windows")
    X = np.stack([extract_features(w, config) for w in windows])
    Y = np.stack([extract_targets(w) for w in windows])
    if Y.shape[1] != 2 * horizon:
        raise ValueError(f"targets have {Y.shape[1]} dims, expected {2 * horizon}")
    n, dim = X.shape
    if n < dim:
        warnings.warn(
            f"fitting {dim} feature dims from only {n} windows; expect heavy shrinkage",
            RuntimeWarning, stacklevel=2,
        )

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    kept = std > _STD_FLOOR
    Xn = X[:, kept] / std[kept]

    gram = Xn.T @ Xn + lam * np.eye(int(kept.sum()))
    weights = np.linalg.solve(gram, Xn.T @ Y)

    return RidgeModel(
        feature_config=config, lam=float(lam), mean=mean, std=std, kept=kept,
        weights=weights, obs_frames=len(windows[0].observed), horizon=horizon,
    )


def save_model(model: RidgeModel, path) -> None:
    """Model file: magic, u32 header length, JSON header, f64-LE weight matrix."""
    header = {
        "feature_config": model.feature_config.value,
        "lam": model.lam,
        "obs_frames": model.obs_frames,
        "horizon": model.horizon,
        "mean": model.mean.tolist(),
        "std": model.std.tolist(),
        "kept": [bool(k) for k in model.kept],
        "weight_shape": list(model.weights.shape),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.weights.astype("<f8").tobytes())


def load_model(path) -> RidgeModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise ValidationError(f"{path}: bad model magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        shape = tuple(header["weight_shape"])
        data = fh.read(8 * shape[0] * shape[1])
        weights = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    return RidgeModel(
        feature_config=FeatureConfig(header["feature_config"]),
        lam=header["lam"],
        mean=np.array(header["mean"]),
        std=np.array(header["std"]),
        kept=np.array(header["kept"], dtype=bool),
        weights=weights,
        obs_frames=header["obs_frames"],
        horizon=header["horizon"],
    )
