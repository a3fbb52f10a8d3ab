"""Contact cleanup for reference motions.

Hand sample points are placed by forward kinematics, expressed in the object
frame, and scored against the object's signed distance field. Upper-body joint
angles inside the contact phase are then tuned with Adam on finite-difference
gradients so the hands sit on the object's surface instead of inside it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import ndimage

from rootguide.se3 import Pose, Rotation


class NoContactPhase(ValueError):
    pass


class OptimizerStall(RuntimeError):
    """Loss rose for too many consecutive iterations; ``result`` holds the best iterate."""

    def __init__(self, message: str, result: "OptimizeResult"):
        super().__init__(message)
        self.result = result


# ---------------------------------------------------------------- SDFs


class SdfField(Protocol):
    def query(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class AnalyticBox:
    """Exact signed distance to an origin-centred axis-aligned box."""

    half_extents: tuple[float, float, float]

    def __post_init__(self):
        if len(self.half_extents) != 3 or min(self.half_extents) <= 0:
            raise ValueError("half_extents must be three positive lengths")

    def query(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        q = np.abs(p) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def gradient(self, points) -> np.ndarray:
        """Spatial gradient of :meth:`query` (unit length away from edges and faces' medial planes)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        h = np.asarray(self.half_extents)
        q = np.abs(p) - h
        s = np.where(p >= 0, 1.0, -1.0)
        g = np.zeros_like(p)
        out = np.any(q > 0, axis=-1)
        qo = np.maximum(q[out], 0.0)
        g[out] = s[out] * qo / np.linalg.norm(qo, axis=-1, keepdims=True)
        ins = ~out
        k = np.argmax(q[ins], axis=-1)
        g[np.flatnonzero(ins), k] = s[ins, k]
        return g


@dataclass
class SampledGrid:
    """Signed distances on a regular lattice, trilinearly interpolated.

    ``values[i, j, k]`` is the distance at ``origin + cell_size * (i, j, k)``.
    Outside the lattice a query is clamped to the lattice box and the clamp
    distance is added to the boundary value, which overestimates the true
    distance but keeps the sign right for shapes that fit inside the lattice.
    """

    origin: np.ndarray
    cell_size: float
    values: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError("values must be a 3-D grid with at least 2 nodes per axis")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.cell_size * (np.array(self.values.shape) - 1)

    def query(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        flat = p.reshape(-1, 3)
        clamped = np.clip(flat, self.origin, self.upper)
        extra = np.linalg.norm(flat - clamped, axis=-1)
        idx = ((clamped - self.origin) / self.cell_size).T
        inner = ndimage.map_coordinates(self.values, idx, order=1, mode="nearest")
        return (inner + extra).reshape(p.shape[:-1])

    @classmethod
    def from_function(cls, fn, lo, hi, cell_size: float) -> SampledGrid:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        n = np.ceil((hi - lo) / cell_size).astype(int) + 1
        axes = [lo[i] + cell_size * np.arange(n[i]) for i in range(3)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(lo, cell_size, fn(pts.reshape(-1, 3)).reshape(tuple(n)))

    @classmethod
    def from_box(cls, half_extents, cell_size: float, margin: float = 0.05) -> SampledGrid:
        box = AnalyticBox(tuple(half_extents))
        h = np.asarray(half_extents, dtype=float) + margin
        return cls.from_function(box.query, -h, h, cell_size)

    @classmethod
    def from_mesh(cls, vertices, faces, cell_size: float, margin: float = 0.05) -> SampledGrid:
        """Experimental: sample a closed triangle mesh.

        Magnitude is the distance to the nearest triangle; sign comes from
        the parity of +x ray crossings, so the mesh must be watertight.
        """
        v = np.asarray(vertices, dtype=float)
        f = np.asarray(faces, dtype=int)
        tris = v[f]
        lo = v.min(axis=0) - margin
        hi = v.max(axis=0) + margin

        def fn(pts):
            d = np.full(len(pts), np.inf)
            for tri in tris:
                d = np.minimum(d, _point_triangle_distance(pts, tri))
            inside = _ray_parity(pts, tris)
            return np.where(inside, -d, d)

        return cls.from_function(fn, lo, hi, cell_size)


def _point_triangle_distance(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    # project onto the plane, then fall back to the closest edge when outside
    a, b, c = tri
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    dist_plane = (p - a) @ n
    proj = p - np.outer(dist_plane, n)
    inside = np.ones(len(p), dtype=bool)
    for u, w in ((a, b), (b, c), (c, a)):
        inside &= np.cross(w - u, proj - u) @ n >= 0
    best = np.where(inside, np.abs(dist_plane), np.inf)
    for u, w in ((a, b), (b, c), (c, a)):
        e = w - u
        t = np.clip((p - u) @ e / (e @ e), 0.0, 1.0)
        best = np.minimum(best, np.linalg.norm(p - (u + np.outer(t, e)), axis=-1))
    return best


# oblique ray directions; lattice points rarely hit a mesh edge along these
_RAY_DIRS = np.array([[0.8137, 0.4311, 0.3897], [-0.3512, 0.8829, 0.3116], [0.2749, -0.4127, 0.8685]])


def _ray_parity(p: np.ndarray, tris: np.ndarray) -> np.ndarray:
    # Moller-Trumbore crossing counts; majority vote over three rays
    votes = np.zeros(len(p), dtype=int)
    for direction in _RAY_DIRS / np.linalg.norm(_RAY_DIRS, axis=1, keepdims=True):
        count = np.zeros(len(p), dtype=int)
        for a, b, c in tris:
            e1, e2 = b - a, c - a
            h = np.cross(direction, e2)
            det = e1 @ h
            if abs(det) < 1e-12:
                continue
            s = p - a
            u = (s @ h) / det
            qv = np.cross(s, e1)
            vv = (qv @ direction) / det
            t = (qv @ e2) / det
            count += (u >= 0) & (u <= 1) & (vv >= 0) & (u + vv <= 1) & (t > 0)
        votes += count % 2
    return votes >= 2


def voxel_downsample(points, cell: float) -> np.ndarray:
    """Centroid of the points falling in each occupied voxel, in first-seen voxel order."""
    if not cell > 0:
        raise ValueError("cell must be positive")
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        return np.zeros((0, 3))
    keys = np.floor(p / cell).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(first), 3))
    np.add.at(sums, inverse, p)
    counts = np.bincount(inverse, minlength=len(first))
    centroids = sums / counts[:, None]
    return centroids[np.argsort(first, kind="stable")]


# ---------------------------------------------------------------- kinematics


def palm_patch(n_u: int = 3, n_v: int = 4, width: float = 0.06, length: float = 0.08, offset=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Grid of sample points on a flat palm, in the hand frame (palm normal +x)."""
    u = np.linspace(-width / 2, width / 2, n_u)
    v = np.linspace(-length / 2, length / 2, n_v)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([np.zeros(uu.size), uu.ravel(), vv.ravel()], axis=-1)
    return pts + np.asarray(offset, dtype=float)


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int  # -1 for the root
    offset: Pose  # parent frame -> joint frame at zero angle
    axis: tuple[float, float, float]
    limits: tuple[float, float]


def _axis_angle_batch(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    # Rodrigues, vectorised over angles -> (B, 3, 3)
    x, y, z = axis
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * k + (1 - c) * (k @ k)


@dataclass
class KinematicChain:
    joints: list[Joint]
    # joint index -> hand sample points in that joint's frame
    hand_points: dict[int, np.ndarray] = field(default_factory=dict)
    upper_body: tuple[int, ...] = ()
    chain_id: str = "chain"

    def __post_init__(self):
        for i, j in enumerate(self.joints):
            if not -1 <= j.parent < i:
                raise ValueError(f"joint {j.name!r}: parent must precede it (got {j.parent})")
            n = np.linalg.norm(j.axis)
            if abs(n - 1.0) > 1e-9:
                raise ValueError(f"joint {j.name!r}: axis must be unit length")
            if not j.limits[0] < j.limits[1]:
                raise ValueError(f"joint {j.name!r}: limits must satisfy lo < hi")
        for k in self.upper_body:
            if not 0 <= k < len(self.joints):
                raise ValueError(f"upper_body index {k} out of range")
        self.hand_points = {int(k): np.asarray(v, dtype=float).reshape(-1, 3) for k, v in self.hand_points.items()}
        self.upper_body = tuple(sorted(set(int(k) for k in self.upper_body)))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def joint_frames(self, root: Pose, q) -> tuple[np.ndarray, np.ndarray]:
        """World rotations (B, n, 3, 3) and origins (B, n, 3) of every joint frame.

        ``q`` is (n,) or (B, n). A joint frame includes its own rotation.
        """
        q = np.atleast_2d(np.asarray(q, dtype=float))
        b, n = q.shape
        if n != self.n_joints:
            raise ValueError(f"expected {self.n_joints} joint angles, got {n}")
        rots = np.empty((b, n, 3, 3))
        origins = np.empty((b, n, 3))
        r_root = root.rotation.matrix
        for i, j in enumerate(self.joints):
            if j.parent < 0:
                r_par = np.broadcast_to(r_root, (b, 3, 3))
                p_par = np.broadcast_to(root.position, (b, 3))
            else:
                r_par = rots[:, j.parent]
                p_par = origins[:, j.parent]
            r_off = j.offset.rotation.matrix
            origins[:, i] = p_par + r_par @ j.offset.position
            rots[:, i] = (r_par @ r_off) @ _axis_angle_batch(np.asarray(j.axis, dtype=float), q[:, i])
        return rots, origins

    def hand_points_world(self, root: Pose, q) -> np.ndarray:
        """All hand sample points in world coordinates, shape (B, P, 3)."""
        rots, origins = self.joint_frames(root, q)
        parts = []
        for k in sorted(self.hand_points):
            pts = self.hand_points[k]
            parts.append(np.einsum("bij,pj->bpi", rots[:, k], pts) + origins[:, k, None, :])
        if not parts:
            return np.zeros((rots.shape[0], 0, 3))
        return np.concatenate(parts, axis=1)

    # I/O: a plain joint list; hand points and upper-body membership live on the joints
    def to_json(self) -> list[dict]:
        out = []
        for i, j in enumerate(self.joints):
            d = {
                "name": j.name,
                "parent": j.parent,
                "offset": j.offset.to_dict(),
                "axis": list(j.axis),
                "limits": list(j.limits),
                "upper": i in self.upper_body,
            }
            if i in self.hand_points:
                d["points"] = self.hand_points[i].tolist()
            out.append(d)
        return out

    @classmethod
    def from_json(cls, data, chain_id: str = "chain") -> KinematicChain:
        if isinstance(data, dict):
            chain_id = data.get("chain_id", chain_id)
            data = data["joints"]
        joints, hands, upper = [], {}, []
        for i, d in enumerate(data):
            axis = np.asarray(d["axis"], dtype=float)
            joints.append(
                Joint(
                    name=d.get("name", f"j{i}"),
                    parent=int(d["parent"]),
                    offset=Pose.from_dict(d["offset"]) if "offset" in d else Pose.identity(),
                    axis=tuple(axis / np.linalg.norm(axis)),
                    limits=(float(d["limits"][0]), float(d["limits"][1])),
                )
            )
            if d.get("upper", False):
                upper.append(i)
            if "points" in d:
                hands[i] = np.asarray(d["points"], dtype=float)
            elif d.get("hand", False):
                hands[i] = palm_patch()
        return cls(joints, hands, tuple(upper), chain_id)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> KinematicChain:
        return cls.from_json(json.loads(Path(path).read_text()), chain_id=Path(path).stem)


# ---------------------------------------------------------------- clips


@dataclass
class MotionClip:
    fps: float
    root_poses: list[Pose]
    joint_angles: np.ndarray  # (T, n)
    object_poses: list[Pose]
    chain_id: str = "chain"

    def __post_init__(self):
        self.joint_angles = np.asarray(self.joint_angles, dtype=float)
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        t = len(self.root_poses)
        if self.joint_angles.ndim != 2 or self.joint_angles.shape[0] != t or len(self.object_poses) != t:
            raise ValueError("root poses, joint angles and object poses must have one row per frame")

    def __len__(self) -> int:
        return len(self.root_poses)

    def with_angles(self, q: np.ndarray) -> MotionClip:
        return MotionClip(self.fps, list(self.root_poses), q, list(self.object_poses), self.chain_id)

    def to_json(self) -> dict:
        return {
            "fps": self.fps,
            "chain_id": self.chain_id,
            "frames": [
                {"root_pose": r.to_dict(), "joint_angles": q.tolist(), "object_pose": o.to_dict()}
                for r, q, o in zip(self.root_poses, self.joint_angles, self.object_poses)
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> MotionClip:
        frames = d["frames"]
        return cls(
            fps=float(d["fps"]),
            root_poses=[Pose.from_dict(f["root_pose"]) for f in frames],
            joint_angles=np.array([f["joint_angles"] for f in frames], dtype=float),
            object_poses=[Pose.from_dict(f["object_pose"]) for f in frames],
            chain_id=d.get("chain_id", "chain"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> MotionClip:
        return cls.from_json(json.loads(Path(path).read_text()))


def object_speeds(clip: MotionClip) -> np.ndarray:
    """Central-difference object speed at interior frames 1..T-2 (NaN at the ends)."""
    p = np.array([o.position for o in clip.object_poses])
    s = np.full(len(p), np.nan)
    if len(p) >= 3:
        s[1:-1] = np.linalg.norm(p[2:] - p[:-2], axis=-1) * clip.fps / 2.0
    return s


def detect_contact_phase(clip: MotionClip, v_threshold: float = 0.05) -> tuple[int, int]:
    """First and last frame whose object speed exceeds ``v_threshold``."""
    if len(clip) < 2:
        raise ValueError("clip needs at least 2 frames")
    s = object_speeds(clip)
    moving = np.flatnonzero(np.nan_to_num(s, nan=-np.inf) > v_threshold)
    if len(moving) == 0:
        raise NoContactPhase(f"object never exceeds {v_threshold} m/s")
    return int(moving[0]), int(moving[-1])


# ---------------------------------------------------------------- loss


def _terms(d: np.ndarray, clamp_outside: bool) -> np.ndarray:
    return np.maximum(-d, 0.0) if clamp_outside else np.abs(d)


def frame_losses(
    chain: KinematicChain, sdf: SdfField, root: Pose, obj: Pose, q_batch: np.ndarray, clamp_outside: bool = False
) -> np.ndarray:
    """Loss of one frame for each configuration row of ``q_batch``."""
    world = chain.hand_points_world(root, q_batch)
    local = (world - obj.position) @ obj.rotation.matrix  # R^T (p - t), row-vector form
    return _terms(sdf.query(local), clamp_outside).sum(axis=-1)


def _check_phase(clip: MotionClip, phase: tuple[int, int]) -> None:
    a, b = phase
    if not 0 <= a <= b < len(clip):
        raise ValueError(f"phase {phase} outside clip of {len(clip)} frames")


def penetration_loss(
    clip: MotionClip,
    chain: KinematicChain,
    sdf: SdfField,
    phase: tuple[int, int],
    clamp_outside: bool = False,
) -> float:
    """Sum over phase frames and hand points of |SDF| (or of penetration depth only).

    Terms are accumulated one at a time in frame-then-point order so the
    total does not depend on array reduction order.
    """
    _check_phase(clip, phase)
    total = 0.0
    for t in range(phase[0], phase[1] + 1):
        world = chain.hand_points_world(clip.root_poses[t], clip.joint_angles[t])[0]
        obj = clip.object_poses[t]
        local = (world - obj.position) @ obj.rotation.matrix
        for term in _terms(sdf.query(local), clamp_outside):
            total += float(term)
    return total


# ---------------------------------------------------------------- optimiser


def phase_gradient(
    clip: MotionClip,
    chain: KinematicChain,
    sdf: SdfField,
    phase: tuple[int, int],
    clamp_outside: bool = False,
    step: float = 1e-4,
) -> np.ndarray:
    """Central-difference gradient of the phase loss w.r.t. upper-body angles, shape (frames, joints).

    The loss is a sum of per-frame terms that each depend on one frame's
    angles, so every frame is differenced independently in one FK batch.
    """
    _check_phase(clip, phase)
    cols = np.array(chain.upper_body, dtype=int)
    n_var = len(cols)
    g = np.zeros((phase[1] - phase[0] + 1, n_var))
    if n_var == 0:
        return g
    for r, t in enumerate(range(phase[0], phase[1] + 1)):
        batch = np.repeat(clip.joint_angles[t][None], 2 * n_var, axis=0)
        for k, c in enumerate(cols):
            batch[2 * k, c] += step
            batch[2 * k + 1, c] -= step
        f = frame_losses(chain, sdf, clip.root_poses[t], clip.object_poses[t], batch, clamp_outside)
        g[r] = (f[0::2] - f[1::2]) / (2 * step)
    return g


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iters: int = 500
    fd_step: float = 1e-4
    stall_patience: int = 50
    tol: float = 1e-12  # loss at or below this counts as converged

    def __post_init__(self):
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam hyperparameters")
        if self.iters < 0 or not self.fd_step > 0:
            raise ValueError("iters must be >= 0 and fd_step > 0")


@dataclass
class OptimizeResult:
    clip: MotionClip
    phase: tuple[int, int]
    initial_loss: float
    final_loss: float
    losses: list[float]  # loss of each iterate, index 0 = input
    best_losses: list[float]  # running minimum, what the returned clip achieves

    def loss_curve_rows(self) -> list[tuple[int, float, float]]:
        return [(i, a, b) for i, (a, b) in enumerate(zip(self.losses, self.best_losses))]


def optimize_contact(
    clip: MotionClip,
    chain: KinematicChain,
    sdf: SdfField,
    adam: AdamConfig = AdamConfig(),
    clamp_outside: bool = False,
    phase: tuple[int, int] | None = None,
    v_threshold: float = 0.05,
) -> OptimizeResult:
    """Adam on upper-body joint angles of the contact-phase frames.

    Gradients are central differences, evaluated frame by frame (the loss is
    a sum of per-frame terms, each depending on that frame's angles only).
    After every step the angles are projected onto the joint limits. The best
    iterate seen is returned, so the final loss never exceeds the initial one.
    """
    if phase is None:
        phase = detect_contact_phase(clip, v_threshold)
    _check_phase(clip, phase)
    cols = np.array(chain.upper_body, dtype=int)
    frames = np.arange(phase[0], phase[1] + 1)
    lo = chain.lower_limits[cols]
    hi = chain.upper_limits[cols]

    q_full = clip.joint_angles.copy()
    x = q_full[np.ix_(frames, cols)].copy()
    h = adam.fd_step
    n_var = len(cols)

    def loss_of(xv: np.ndarray) -> float:
        total = 0.0
        for r, t in enumerate(frames):
            q = q_full[t].copy()
            q[cols] = xv[r]
            total += float(frame_losses(chain, sdf, clip.root_poses[t], clip.object_poses[t], q[None], clamp_outside)[0])
        return total

    def grad_of(xv: np.ndarray) -> np.ndarray:
        q = q_full.copy()
        q[np.ix_(frames, cols)] = xv
        return phase_gradient(clip.with_angles(q), chain, sdf, phase, clamp_outside, h)

    loss = loss_of(x)
    initial = loss
    best_x, best = x.copy(), loss
    losses, best_losses = [loss], [loss]
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    rises = 0
    stalled = False
    for it in range(1, adam.iters + 1):
        if best <= adam.tol or n_var == 0:
            break
        g = grad_of(x)
        m = adam.beta1 * m + (1 - adam.beta1) * g
        v = adam.beta2 * v + (1 - adam.beta2) * g * g
        m_hat = m / (1 - adam.beta1**it)
        v_hat = v / (1 - adam.beta2**it)
        x = np.clip(x - adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps), lo, hi)
        new = loss_of(x)
        rises = rises + 1 if new > loss else 0
        loss = new
        if loss < best:
            best, best_x = loss, x.copy()
        losses.append(loss)
        best_losses.append(best)
        if rises >= adam.stall_patience:
            stalled = True
            break

    out = q_full.copy()
    out[np.ix_(frames, cols)] = best_x
    result = OptimizeResult(clip.with_angles(out), phase, initial, best, losses, best_losses)
    if stalled:
        raise OptimizerStall(f"loss rose for {adam.stall_patience} consecutive iterations", result)
    return result


def write_loss_curve(path: str | Path, result: OptimizeResult) -> None:
    with open(path, "w") as fh:
        fh.write("iter,loss,best_loss\n")
        for i, a, b in result.loss_curve_rows():
            fh.write(f"{i},{a:.12g},{b:.12g}\n")


# ---------------------------------------------------------------- synthetic fixtures

_X, _Y, _Z = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)


def _arm(prefix: str, parent: int, base: int, shoulder: Pose, palm_sign: float, upper_arm: float, forearm: float):
    joints = [
        Joint(f"{prefix}shoulder_pitch", parent, shoulder, _Y, (-2.5, 1.0)),
        Joint(f"{prefix}shoulder_roll", base, Pose.identity(), _X, (-1.5, 1.5)),
        Joint(f"{prefix}shoulder_yaw", base + 1, Pose(np.array([0.0, 0.0, -upper_arm])), _Z, (-1.5, 1.5)),
        Joint(f"{prefix}elbow", base + 2, Pose.identity(), _Y, (-2.5, 0.2)),
    ]
    # palm patch at the wrist, normal along palm_sign * y
    palm = palm_patch()[:, [1, 0, 2]] * [1, palm_sign, 1] + np.array([0.0, 0.0, -forearm])
    return joints, {base + 3: palm}


def single_arm_chain(upper_arm: float = 0.28, forearm: float = 0.26) -> KinematicChain:
    """One 4-DoF arm (shoulder pitch/roll/yaw, elbow) hanging from the root."""
    joints, hands = _arm("", -1, 0, Pose.identity(), -1.0, upper_arm, forearm)
    return KinematicChain(joints, hands, (0, 1, 2, 3), "single_arm")


def two_arm_chain(shoulder_width: float = 0.36, upper_arm: float = 0.28, forearm: float = 0.26) -> KinematicChain:
    """Waist yaw plus two 4-DoF arms with a palm patch on each wrist.

    The waist is not in the optimised set. Palms face the body's midline.
    """
    joints = [Joint("waist_yaw", -1, Pose.identity(), _Z, (-0.6, 0.6))]
    hands = {}
    for prefix, sign in (("left_", 1.0), ("right_", -1.0)):
        shoulder = Pose(np.array([0.0, sign * shoulder_width / 2, 0.3]))
        js, hs = _arm(prefix, 0, len(joints), shoulder, -sign, upper_arm, forearm)
        joints += js
        hands.update(hs)
    return KinematicChain(joints, hands, tuple(range(1, len(joints))), "two_arm")


def reach_palm(chain: KinematicChain, root: Pose, q0: np.ndarray, hand: int, cols, target) -> np.ndarray:
    """Joint angles (columns ``cols`` only) putting the centroid of ``hand``'s palm at ``target``."""
    from scipy.optimize import least_squares

    pts = chain.hand_points[hand]
    centre = pts.mean(axis=0)
    cols = list(cols)
    lo, hi = chain.lower_limits[cols], chain.upper_limits[cols]

    def residual(x):
        q = q0.copy()
        q[cols] = x
        rots, origins = chain.joint_frames(root, q)
        return rots[0, hand] @ centre + origins[0, hand] - target

    x0 = np.clip(q0[cols], lo + 1e-6, hi - 1e-6)
    sol = least_squares(residual, x0, bounds=(lo, hi))
    q = q0.copy()
    q[cols] = sol.x
    return q


def carry_clip(
    chain: KinematicChain,
    half_extents=(0.15, 0.1, 0.125),
    n_frames: int = 60,
    fps: float = 30.0,
    squeeze: float = 0.03,
    noise: float = 0.01,
    seed: int = 0,
) -> MotionClip:
    """Synthetic pick-and-carry clip for :func:`two_arm_chain`.

    The box rests for the first and last third and is lifted and carried in
    between. Both palms are placed ``squeeze`` metres inside the box's side
    faces, then joint noise is added.
    """
    if chain.n_joints != 9:
        raise ValueError("carry_clip expects the two_arm_chain layout")
    rng = np.random.default_rng(seed)
    root = Pose(np.array([0.0, 0.0, 0.75]), Rotation.identity())
    hy = half_extents[1]
    a, b = n_frames // 3, 2 * n_frames // 3
    q = np.zeros((n_frames, chain.n_joints))
    q[:, [1, 5]] = -1.0
    q[:, [4, 8]] = -1.0
    objs = []
    for t in range(n_frames):
        s = 0.0 if t <= a else 1.0 if t >= b else (t - a) / (b - a)
        obj = Pose(np.array([0.4 + 0.05 * s, 0.0, 0.8 + 0.15 * math.sin(math.pi * s)]))
        objs.append(obj)
        qt = q[t - 1].copy() if t else q[0].copy()
        for hand, cols, sign in ((4, range(1, 5), 1.0), (8, range(5, 9), -1.0)):
            target = obj.position + np.array([0.0, sign * (hy - squeeze), 0.0])
            qt = reach_palm(chain, root, qt, hand, cols, target)
        q[t] = qt
    q[:, 1:] += rng.normal(scale=noise, size=(n_frames, chain.n_joints - 1))
    q = np.clip(q, chain.lower_limits, chain.upper_limits)
    return MotionClip(fps, [root] * n_frames, q, objs, chain.chain_id)
