"""Rigid-body pose algebra.

Rotations are stored as unit quaternions ``[w, x, y, z]``; matrices are
derived on demand. Poses are immutable and safe to share.

Conventions:
    - ``Pose`` maps points from its local frame into the parent frame:
      ``p_parent = R @ p_local + t``.
    - Yaw extraction uses the Z-Y-X (yaw, pitch, roll) Euler convention.
    - All angles are radians.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

GIMBAL_EPS = 1e-6


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _quat_exp(rotvec: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(rotvec))
    half = 0.5 * theta
    if theta < 1e-8:
        # sin(x/2)/x ~ 1/2 - x^2/48
        k = 0.5 - theta * theta / 48.0
    else:
        k = math.sin(half) / theta
    return np.array([math.cos(half), *(k * rotvec)])


def _quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion, shortest arc (angle in [0, pi])."""
    if q[0] < 0.0:
        q = -q
    v = q[1:]
    s = float(np.linalg.norm(v))
    if s < 1e-12:
        return 2.0 * v
    theta = 2.0 * math.atan2(s, q[0])
    return (theta / s) * v


def _matrix_to_quat(m: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the largest diagonal-derived component.
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    cands = [tr, m[0, 0], m[1, 1], m[2, 2]]
    i = int(np.argmax(cands))
    if i == 0:
        s = math.sqrt(1.0 + tr) * 2.0
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif i == 1:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif i == 2:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    if q[0] < 0.0:
        q = -q
    return q


@dataclass(frozen=True, eq=False)
class Rotation:
    """Element of SO(3) backed by a unit quaternion ``[w, x, y, z]``."""

    quat: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float).reshape(4)
        n = float(np.linalg.norm(q))
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError(f"invalid quaternion {q}")
        object.__setattr__(self, "quat", _frozen(q / n))

    # constructors
    @classmethod
    def identity(cls) -> Rotation:
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_quat(cls, wxyz: Sequence[float]) -> Rotation:
        return cls(np.asarray(wxyz, dtype=float))

    @classmethod
    def from_matrix(cls, m) -> Rotation:
        m = np.asarray(m, dtype=float).reshape(3, 3)
        return cls(_matrix_to_quat(m))

    @classmethod
    def from_rotvec(cls, rotvec) -> Rotation:
        return cls(_quat_exp(np.asarray(rotvec, dtype=float).reshape(3)))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> Rotation:
        axis = np.asarray(axis, dtype=float).reshape(3)
        n = float(np.linalg.norm(axis))
        if n < 1e-12:
            raise ValueError("rotation axis must be non-zero")
        return cls.from_rotvec(axis / n * angle)

    @classmethod
    def from_yaw(cls, yaw: float) -> Rotation:
        return cls(np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)]))

    @classmethod
    def from_euler_zyx(cls, yaw: float, pitch: float, roll: float) -> Rotation:
        """R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
        qz = np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)])
        qy = np.array([math.cos(0.5 * pitch), 0.0, math.sin(0.5 * pitch), 0.0])
        qx = np.array([math.cos(0.5 * roll), math.sin(0.5 * roll), 0.0, 0.0])
        return cls(_quat_mul(_quat_mul(qz, qy), qx))

    # accessors
    @property
    def matrix(self) -> np.ndarray:
        w, x, y, z = self.quat
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def as_rotvec(self) -> np.ndarray:
        return _quat_log(np.asarray(self.quat))

    def euler_zyx(self) -> tuple[float, float, float]:
        """Return (yaw, pitch, roll); see :func:`extract_yaw` for the gimbal case."""
        m = self.matrix
        pitch = math.asin(max(-1.0, min(1.0, -m[2, 0])))
        yaw, degenerate = extract_yaw(self)
        if degenerate:
            roll = 0.0
        else:
            roll = math.atan2(m[2, 1], m[2, 2])
        return yaw, pitch, roll

    @property
    def yaw(self) -> float:
        return extract_yaw(self)[0]

    # algebra
    def inverse(self) -> Rotation:
        w, x, y, z = self.quat
        return Rotation(np.array([w, -x, -y, -z]))

    def __mul__(self, other: Rotation) -> Rotation:
        if not isinstance(other, Rotation):
            return NotImplemented
        return Rotation(_quat_mul(np.asarray(self.quat), np.asarray(other.quat)))

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return v @ self.matrix.T

    def __repr__(self) -> str:
        return f"Rotation(wxyz={np.round(self.quat, 6).tolist()})"


@dataclass(frozen=True, eq=False)
class Pose:
    """Element of SE(3): a position in meters plus a :class:`Rotation`."""

    position: np.ndarray
    rotation: Rotation = None  # identity when omitted

    def __post_init__(self):
        if self.rotation is None:
            object.__setattr__(self, "rotation", Rotation(np.array([1.0, 0.0, 0.0, 0.0])))
        p = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ValueError(f"non-finite position {p}")
        object.__setattr__(self, "position", _frozen(p))
        if not isinstance(self.rotation, Rotation):
            object.__setattr__(self, "rotation", Rotation(self.rotation))

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.zeros(3), Rotation.identity())

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, z: float, yaw: float) -> Pose:
        return cls(np.array([x, y, z]), Rotation.from_yaw(yaw))

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], Rotation.from_matrix(m[:3, :3]))

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix
        m[:3, 3] = self.position
        return m

    def inverse(self) -> Pose:
        rinv = self.rotation.inverse()
        return Pose(-rinv.apply(self.position), rinv)

    def __mul__(self, other: Pose) -> Pose:
        if not isinstance(other, Pose):
            return NotImplemented
        return Pose(
            self.position + self.rotation.apply(other.position),
            self.rotation * other.rotation,
        )

    def apply(self, pts) -> np.ndarray:
        """Map local points (``(3,)`` or ``(n, 3)``) into the parent frame."""
        return self.rotation.apply(pts) + self.position

    def with_z(self, z: float) -> Pose:
        p = np.array(self.position)
        p[2] = z
        return Pose(p, self.rotation)

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "quaternion": [float(v) for v in self.rotation.quat],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Pose:
        return cls(np.asarray(d["position"], dtype=float), Rotation.from_quat(d["quaternion"]))

    def __repr__(self) -> str:
        return f"Pose(p={np.round(self.position, 6).tolist()}, q={np.round(self.rotation.quat, 6).tolist()})"


def angular_distance(a: Rotation, b: Rotation) -> float:
    """Geodesic distance on SO(3), in [0, pi]."""
    qa = np.asarray(a.quat)
    qb = np.asarray(b.quat)
    # relative quaternion a^-1 b; its vector part norm and |w| give the half angle
    rel = _quat_mul(np.array([qa[0], -qa[1], -qa[2], -qa[3]]), qb)
    return 2.0 * math.atan2(float(np.linalg.norm(rel[1:])), abs(float(rel[0])))


def angular_distances(quats_a: np.ndarray, quats_b: np.ndarray) -> np.ndarray:
    """Vectorised :func:`angular_distance` over ``(n, 4)`` wxyz arrays (broadcasts)."""
    qa = np.asarray(quats_a, dtype=float)
    qb = np.asarray(quats_b, dtype=float)
    qa_c = qa * np.array([1.0, -1.0, -1.0, -1.0])
    aw, ax, ay, az = np.moveaxis(qa_c, -1, 0)
    bw, bx, by, bz = np.moveaxis(qb, -1, 0)
    w = aw * bw - ax * bx - ay * by - az * bz
    x = aw * bx + ax * bw + ay * bz - az * by
    y = aw * by - ax * bz + ay * bw + az * bx
    z = aw * bz + ax * by - ay * bx + az * bw
    return 2.0 * np.arctan2(np.sqrt(x * x + y * y + z * z), np.abs(w))


def slerp(a: Rotation, b: Rotation, s: float) -> Rotation:
    """Shortest-arc spherical blend; exact at s=0 and s=1."""
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    qa = np.asarray(a.quat)
    qb = np.asarray(b.quat)
    if float(np.dot(qa, qb)) < 0.0:
        qb = -qb
    rel = _quat_mul(np.array([qa[0], -qa[1], -qa[2], -qa[3]]), qb)
    return Rotation(_quat_mul(qa, _quat_exp(s * _quat_log(rel))))


def interpolate_pose(a: Pose, b: Pose, s: float) -> Pose:
    """Linear position blend and shortest-arc rotation blend."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation parameter {s} outside [0, 1]")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    p = (1.0 - s) * np.asarray(a.position) + s * np.asarray(b.position)
    return Pose(p, slerp(a.rotation, b.rotation, s))


def relative_pose(world_a: Pose, world_b: Pose) -> Pose:
    """Pose of ``b`` expressed in the frame of ``a``."""
    return world_a.inverse() * world_b


def extract_yaw(r: Rotation) -> tuple[float, bool]:
    """Z-Y-X yaw of ``r`` and whether the input sat at gimbal lock.

    At pitch within ``GIMBAL_EPS`` of +-pi/2 the yaw/roll split is undefined;
    roll is then taken as zero and yaw recovered from the second column.
    """
    m = r.matrix
    cos_pitch = math.hypot(m[0, 0], m[1, 0])
    if cos_pitch < GIMBAL_EPS:
        return math.atan2(-m[0, 1], m[1, 1]), True
    return math.atan2(m[1, 0], m[0, 0]), False


def yaw_only(r: Rotation) -> Rotation:
    """Pure rotation about world z carrying the Z-Y-X yaw of ``r``."""
    yaw, degenerate = extract_yaw(r)
    if degenerate:
        log.warning("yaw_only: gimbal-degenerate rotation, using atan2 fallback yaw")
    return Rotation.from_yaw(yaw)


def rot6d_encode(r: Rotation) -> np.ndarray:
    """First two matrix columns, flattened row-major: [r00, r01, r10, r11, r20, r21]."""
    return r.matrix[:, :2].reshape(6).copy()


def rot6d_decode(v) -> Rotation:
    """Gram-Schmidt a 6-vector back onto SO(3)."""
    v = np.asarray(v, dtype=float).reshape(3, 2)
    a, b = v[:, 0], v[:, 1]
    na = float(np.linalg.norm(a))
    if na < 1e-12:
        raise ValueError("degenerate 6D rotation: zero first column")
    x = a / na
    y = b - np.dot(x, b) * x
    ny = float(np.linalg.norm(y))
    if ny < 1e-12:
        raise ValueError("degenerate 6D rotation: columns are parallel")
    y = y / ny
    z = np.cross(x, y)
    return Rotation.from_matrix(np.stack([x, y, z], axis=1))


def yaw_rotation_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
