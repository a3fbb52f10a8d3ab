"""Drop detection on streamed object states, release-velocity estimation and
the gaze pose used to re-acquire a fallen object."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from rootguide.se3 import Pose, Rotation, wrap_angle

# planar distance below which the bearing to the object is undefined
MIN_BEARING_DIST = 0.01


class StreamError(ValueError):
    pass


class InsufficientHistory(ValueError):
    pass


class DegenerateBearing(ValueError):
    """Object sits on top of the robot; ``fallback`` keeps the current heading."""

    def __init__(self, message: str, fallback: Pose):
        super().__init__(message)
        self.fallback = fallback


@dataclass(frozen=True)
class StateFrame:
    t: float
    root_pose: Pose
    object_pose_rel: Pose  # object in the robot base frame
    contact_cmd: bool
    hand_contact: bool | None = None

    @property
    def object_world(self) -> Pose:
        return self.root_pose * self.object_pose_rel

    def to_dict(self) -> dict:
        d = {
            "t": float(self.t),
            "root_pose": self.root_pose.to_dict(),
            "object_pose_rel": self.object_pose_rel.to_dict(),
            "contact_cmd": bool(self.contact_cmd),
        }
        if self.hand_contact is not None:
            d["hand_contact"] = bool(self.hand_contact)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> StateFrame:
        hc = d.get("hand_contact")
        return cls(
            t=float(d["t"]),
            root_pose=Pose.from_dict(d["root_pose"]),
            object_pose_rel=Pose.from_dict(d["object_pose_rel"]),
            contact_cmd=bool(d["contact_cmd"]),
            hand_contact=None if hc is None else bool(hc),
        )


def read_state_stream(path: str | Path) -> list[StateFrame]:
    frames = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            frames.append(StateFrame.from_dict(json.loads(line)))
        except (KeyError, TypeError, ValueError) as exc:
            raise StreamError(f"{path}:{n}: bad state frame ({exc})") from exc
    return frames


def write_state_stream(path: str | Path, frames: Iterable[StateFrame]) -> None:
    with open(path, "w") as fh:
        for f in frames:
            fh.write(json.dumps(f.to_dict()) + "\n")


@dataclass(frozen=True)
class SafetyRegion:
    """Axis-aligned prism in the robot base frame where a held object belongs."""

    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        if len(self.center) != 3 or len(self.half_extents) != 3:
            raise ValueError("center and half_extents must be 3-vectors")
        if min(self.half_extents) <= 0:
            raise ValueError("half_extents must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "half_extents", tuple(float(h) for h in self.half_extents))

    @classmethod
    def default(cls, chest_height: float = 0.0) -> SafetyRegion:
        # 0.4 x 0.2 x 0.4 m prism 0.35 m in front of the base
        return cls((0.35, 0.0, chest_height), (0.2, 0.1, 0.2))

    def contains(self, p) -> bool:
        d = np.abs(np.asarray(p, dtype=float) - self.center)
        return bool(np.all(d <= self.half_extents))

    def to_dict(self) -> dict:
        return {"center": list(self.center), "half_extents": list(self.half_extents)}

    @classmethod
    def from_dict(cls, d: dict) -> SafetyRegion:
        return cls(tuple(d["center"]), tuple(d["half_extents"]))


class MonitorStatus(enum.Enum):
    NOMINAL = "Nominal"
    DROP_ALERT = "DropAlert"


class DropMonitor:
    """Sliding-window drop detector.

    A frame violates when the hands are commanded to hold the object and the
    object sits outside the safety region. ``window_n`` consecutive violations
    raise an alert, which stays raised until :meth:`reset`.
    """

    def __init__(self, region: SafetyRegion, window_n: int = 10):
        if window_n < 1:
            raise ValueError("window_n must be at least 1")
        self.region = region
        self.window_n = int(window_n)
        self.reset()

    def reset(self) -> None:
        self.streak = 0
        self.alerted = False
        self.alert_frame: int | None = None
        self.frames_seen = 0
        self._last_t = -math.inf

    def update(self, frame: StateFrame) -> MonitorStatus:
        if not frame.t > self._last_t:
            raise StreamError(f"timestamp {frame.t} not after {self._last_t}")
        self._last_t = frame.t
        index = self.frames_seen
        self.frames_seen += 1
        if frame.contact_cmd and not self.region.contains(frame.object_pose_rel.position):
            self.streak += 1
        else:
            self.streak = 0
        if not self.alerted and self.streak >= self.window_n:
            self.alerted = True
            self.alert_frame = index
        return MonitorStatus.DROP_ALERT if self.alerted else MonitorStatus.NOMINAL


def first_alert(frames: Sequence[StateFrame], region: SafetyRegion, window_n: int = 10) -> int | None:
    """Index of the frame on which the monitor first alerts, or None."""
    mon = DropMonitor(region, window_n)
    for f in frames:
        mon.update(f)
        if mon.alerted:
            return mon.alert_frame
    return None


def estimate_release_velocity(
    history: Sequence[StateFrame],
    robot_world_pose: Pose | None = None,
    gravity: Sequence[float] | None = None,
    n_avg: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """World-frame (linear, angular) object velocity averaged over the last ``n_avg`` differences.

    Object world poses are ``robot_world_pose * object_pose_rel`` when a fixed
    robot pose is given, otherwise each frame's own ``root_pose``.

    The plain average is the velocity at the midpoint of the averaging span.
    Passing ``gravity`` (e.g. ``(0, 0, -9.81)``) advances the linear estimate
    from that midpoint to the last frame, which is exact for a falling object
    but wrong for one still held.
    """
    if len(history) < n_avg + 1:
        raise InsufficientHistory(f"need {n_avg + 1} frames, got {len(history)}")
    tail = list(history)[-(n_avg + 1) :]
    if robot_world_pose is None:
        world = [f.object_world for f in tail]
    else:
        world = [robot_world_pose * f.object_pose_rel for f in tail]
    ts = np.array([f.t for f in tail])
    dts = np.diff(ts)
    if np.any(dts <= 0):
        raise StreamError("timestamps must be strictly increasing")

    lin = np.zeros(3)
    ang = np.zeros(3)
    for i in range(1, n_avg + 1):
        a, b = world[i - 1], world[i]
        lin += (b.position - a.position) / dts[i - 1]
        ang += (b.rotation * a.rotation.inverse()).as_rotvec() / dts[i - 1]
    lin /= n_avg
    ang /= n_avg
    if gravity is not None:
        t_mid = float(np.mean(0.5 * (ts[1:] + ts[:-1])))
        lin = lin + np.asarray(gravity, dtype=float) * (ts[-1] - t_mid)
    return lin, ang


def gaze_adjustment(
    robot: Pose,
    predicted_object_position,
    camera_fov_h: float,
    standoff: float,
    h_stand: float | None = None,
) -> Pose:
    """Root pose facing the object from ``standoff`` metres away.

    The result sits on the ray from the object back towards the robot, so the
    object is dead ahead (bearing 0) and therefore inside any horizontal field
    of view. Height is ``h_stand`` (or the robot's current height).
    """
    if not camera_fov_h > 0:
        raise ValueError("camera_fov_h must be positive")
    if standoff < 0:
        raise ValueError("standoff must be non-negative")
    obj = np.asarray(predicted_object_position, dtype=float)
    if obj.shape != (3,) or not np.all(np.isfinite(obj)):
        raise ValueError("predicted object position must be a finite 3-vector")
    z = float(robot.position[2] if h_stand is None else h_stand)
    dx, dy = obj[0] - robot.position[0], obj[1] - robot.position[1]
    dist = math.hypot(dx, dy)
    if dist < MIN_BEARING_DIST:
        yaw = robot.rotation.yaw
        fallback = Pose(
            np.array([obj[0] - standoff * math.cos(yaw), obj[1] - standoff * math.sin(yaw), z]),
            Rotation.from_yaw(yaw),
        )
        raise DegenerateBearing(f"object {dist:.4f} m from robot, bearing undefined", fallback)
    yaw = math.atan2(dy, dx)
    ux, uy = dx / dist, dy / dist
    pos = np.array([obj[0] - standoff * ux, obj[1] - standoff * uy, z])
    return Pose(pos, Rotation.from_yaw(yaw))


def bearing(viewer: Pose, point) -> float:
    """Planar angle of ``point`` relative to the viewer's heading."""
    p = np.asarray(point, dtype=float)
    return wrap_angle(math.atan2(p[1] - viewer.position[1], p[0] - viewer.position[0]) - viewer.rotation.yaw)
