"""Episode scoring: tracking reward, task success, trajectory errors and phase lags,
plus the out-of-distribution scenario grid used for batch evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from rootguide.se3 import Pose, Rotation, angular_distance, rot6d_encode
from rootguide.trajectory import Frame, TimedTrajectory, bool_runs


class MetricError(ValueError):
    pass


class Unreachable(MetricError):
    pass


# ---------------------------------------------------------------- reward


@dataclass(frozen=True)
class RewardConfig:
    # sigma values are assumptions; only the weights are published
    sigma_rpos: float = 0.25
    sigma_rrot: float = 0.5
    sigma_bpos: float = 0.3
    sigma_brot: float = 0.5
    sigma_bvel: float = 1.0
    sigma_bang: float = 2.0
    sigma_opos: float = 0.3
    w_rpos: float = 0.5
    w_rrot: float = 0.5
    w_bpos: float = 1.0
    w_brot: float = 1.0
    w_bvel: float = 1.0
    w_bang: float = 1.0
    w_opos: float = 1.0
    w_joint_limit: float = -10.0
    w_contact: float = -0.1
    w_action_rate: float = -0.3
    contact_force_threshold: float = 1.0  # N

    def __post_init__(self):
        for name in ("rpos", "rrot", "bpos", "brot", "bvel", "bang", "opos"):
            if not getattr(self, f"sigma_{name}") > 0:
                raise ValueError(f"sigma_{name} must be positive")


TERMS = ("rpos", "rrot", "bpos", "brot", "bvel", "bang", "opos")


@dataclass
class RobotState:
    """Everything the tracking reward compares, for one control step.

    Body arrays are (B, 3); ``body_rot`` holds B quaternions [w, x, y, z].
    """

    root_pose: Pose
    body_pos: np.ndarray
    body_rot: np.ndarray
    body_vel: np.ndarray
    body_angvel: np.ndarray
    object_pos: np.ndarray
    joint_pos: np.ndarray | None = None
    action: np.ndarray | None = None
    contact_forces: np.ndarray | None = None  # (C, 3) per monitored body, None when not logged

    def __post_init__(self):
        for name in ("body_pos", "body_vel", "body_angvel"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1, 3))
        self.body_rot = np.asarray(self.body_rot, dtype=float).reshape(-1, 4)
        self.object_pos = np.asarray(self.object_pos, dtype=float).reshape(3)
        n = len(self.body_pos)
        if not (len(self.body_rot) == len(self.body_vel) == len(self.body_angvel) == n):
            raise MetricError("body arrays must share their first dimension")


@dataclass
class RewardBreakdown:
    terms: dict[str, float]  # unweighted exp(...) values in (0, 1]
    penalties: dict[str, float]  # weighted regularisation contributions
    total: float
    force_data_missing: bool = False


def _rot6d_rows(quats: np.ndarray) -> np.ndarray:
    return np.array([rot6d_encode(Rotation(q)) for q in quats]).reshape(-1, 6)


def _mean_sq(a: np.ndarray, b: np.ndarray) -> float:
    # per-body squared error, averaged over bodies
    d = np.asarray(a) - np.asarray(b)
    if d.ndim == 1:
        return float(d @ d)
    return float(np.mean(np.sum(d * d, axis=-1))) if len(d) else 0.0


def tracking_errors(state: RobotState, ref: RobotState) -> dict[str, float]:
    if state.body_pos.shape != ref.body_pos.shape:
        raise MetricError(f"body count mismatch: {state.body_pos.shape} vs {ref.body_pos.shape}")
    return {
        "rpos": _mean_sq(state.root_pose.position, ref.root_pose.position),
        "rrot": _mean_sq(rot6d_encode(state.root_pose.rotation), rot6d_encode(ref.root_pose.rotation)),
        "bpos": _mean_sq(state.body_pos, ref.body_pos),
        "brot": _mean_sq(_rot6d_rows(state.body_rot), _rot6d_rows(ref.body_rot)),
        "bvel": _mean_sq(state.body_vel, ref.body_vel),
        "bang": _mean_sq(state.body_angvel, ref.body_angvel),
        "opos": _mean_sq(state.object_pos, ref.object_pos),
    }


def tracking_reward(
    state: RobotState,
    ref: RobotState,
    cfg: RewardConfig = RewardConfig(),
    joint_limits: tuple[np.ndarray, np.ndarray] | None = None,
    prev_action: np.ndarray | None = None,
) -> RewardBreakdown:
    """Weighted exponential tracking terms plus regularisation penalties.

    The joint-limit indicator is 1 when any joint is outside its range.
    Undesired contacts count bodies whose force norm exceeds the threshold;
    without logged forces the term is 0 and ``force_data_missing`` is set.
    """
    err = tracking_errors(state, ref)
    terms = {k: math.exp(-err[k] / getattr(cfg, f"sigma_{k}")) for k in TERMS}
    total = 0.0
    for k in TERMS:
        total += getattr(cfg, f"w_{k}") * terms[k]

    pen = {"joint_limit": 0.0, "contact": 0.0, "action_rate": 0.0}
    if joint_limits is not None:
        if state.joint_pos is None:
            raise MetricError("joint limits given but state has no joint positions")
        lo, hi = (np.asarray(x, dtype=float) for x in joint_limits)
        q = np.asarray(state.joint_pos, dtype=float)
        if q.shape != lo.shape or q.shape != hi.shape:
            raise MetricError("joint limit dimension mismatch")
        pen["joint_limit"] = cfg.w_joint_limit * float(np.any((q < lo) | (q > hi)))
    missing = state.contact_forces is None
    if not missing:
        f = np.asarray(state.contact_forces, dtype=float).reshape(-1, 3)
        pen["contact"] = cfg.w_contact * float(np.sum(np.linalg.norm(f, axis=1) > cfg.contact_force_threshold))
    if prev_action is not None:
        if state.action is None:
            raise MetricError("previous action given but state has no action")
        da = np.asarray(state.action, dtype=float) - np.asarray(prev_action, dtype=float)
        pen["action_rate"] = cfg.w_action_rate * float(da @ da)
    total += pen["joint_limit"] + pen["contact"] + pen["action_rate"]
    return RewardBreakdown(terms, pen, total, missing)


# ---------------------------------------------------------------- episodes


@dataclass(frozen=True)
class EpisodeFrame:
    root_pose: Pose
    object_pose: Pose
    contact_cmd: bool
    hand_contact: bool
    joint_angles: tuple[float, ...] | None = None


@dataclass
class Episode:
    dt: float
    frames: list[EpisodeFrame]
    goal_position: np.ndarray
    episode_id: str = "episode"
    reference: TimedTrajectory | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise MetricError("dt must be positive")
        if not self.frames:
            raise MetricError("episode has no frames")
        self.goal_position = np.asarray(self.goal_position, dtype=float).reshape(3)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.frames))

    def root_trajectory(self) -> TimedTrajectory:
        return TimedTrajectory(self.dt, [Frame(f.root_pose, f.contact_cmd) for f in self.frames])

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            header = {"episode_id": self.episode_id, "dt": self.dt, "goal_position": self.goal_position.tolist()}
            fh.write(json.dumps(header) + "\n")
            for t, f in zip(self.times, self.frames):
                row = {
                    "t": float(t),
                    "root_pose": f.root_pose.to_dict(),
                    "object_pose": f.object_pose.to_dict(),
                    "contact_cmd": bool(f.contact_cmd),
                    "hand_contact": bool(f.hand_contact),
                }
                if f.joint_angles is not None:
                    row["joint_angles"] = list(f.joint_angles)
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> Episode:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        if len(lines) < 2:
            raise MetricError(f"{path}: need a header line and at least one frame")
        header = json.loads(lines[0])
        frames = []
        for n, ln in enumerate(lines[1:], 2):
            try:
                d = json.loads(ln)
                ja = d.get("joint_angles")
                frames.append(
                    EpisodeFrame(
                        Pose.from_dict(d["root_pose"]),
                        Pose.from_dict(d["object_pose"]),
                        bool(d["contact_cmd"]),
                        bool(d["hand_contact"]),
                        None if ja is None else tuple(ja),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise MetricError(f"{path}:{n}: bad episode frame ({exc})") from exc
        return cls(float(header["dt"]), frames, header["goal_position"], header.get("episode_id", Path(path).stem))


def grasp_success(ep: Episode, h_lift: float = 0.1, t_hold: float = 1.0) -> bool:
    """Object held above its start height + ``h_lift`` with hand contact for ``t_hold`` seconds."""
    z0 = ep.frames[0].object_pose.position[2]
    ok = [f.hand_contact and f.object_pose.position[2] > z0 + h_lift for f in ep.frames]
    return any((b - a) * ep.dt >= t_hold - 1e-9 for a, b in bool_runs(ok))


def placement_precision(ep: Episode, planar: bool = True) -> float:
    d = ep.frames[-1].object_pose.position - ep.goal_position
    return float(math.hypot(d[0], d[1]) if planar else np.linalg.norm(d))


def task_success(ep: Episode, tol: float = 0.1, h_lift: float = 0.1, t_hold: float = 1.0, planar: bool = True) -> bool:
    return grasp_success(ep, h_lift, t_hold) and placement_precision(ep, planar) < tol


def mean_precision_of_successful(episodes: Sequence[Episode], **kw) -> float:
    """Mean placement precision over grasp-successful episodes (NaN when none succeed)."""
    vals = [placement_precision(e) for e in episodes if grasp_success(e, **kw)]
    return float(math.fsum(vals) / len(vals)) if vals else float("nan")


# ---------------------------------------------------------------- trajectory metrics


def rpe_roe(reference: TimedTrajectory, executed: TimedTrajectory) -> tuple[float, float]:
    """Mean root position error (m) and geodesic orientation error (rad).

    The executed trajectory is interpolated at each reference timestamp that
    falls inside its time range.
    """
    lo, hi = executed.t0 - 1e-9, executed.t_end + 1e-9
    pos_err, rot_err = [], []
    for t, f in zip(reference.times, reference.frames):
        if not lo <= t <= hi:
            continue
        e = executed.pose_at(float(np.clip(t, executed.t0, executed.t_end)))
        pos_err.append(float(np.linalg.norm(e.position - f.pose.position)))
        rot_err.append(angular_distance(e.rotation, f.pose.rotation))
    if not pos_err:
        raise MetricError("reference and executed trajectories do not overlap in time")
    return math.fsum(pos_err) / len(pos_err), math.fsum(rot_err) / len(rot_err)


def _time_offsets(ref_t0: float, ref_dt: float, other_t0: float, other_dt: float, i, j):
    """t_j - t_i; exact frame arithmetic when both time bases share dt."""
    if ref_dt == other_dt:
        return (other_t0 - ref_t0) + (np.asarray(j) - np.asarray(i)) * ref_dt
    return (other_t0 + np.asarray(j) * other_dt) - (ref_t0 + np.asarray(i) * ref_dt)


def _mean_lag(ref_t0: float, ref_dt: float, other_t0: float, other_dt: float, i: np.ndarray, j: np.ndarray) -> float:
    if ref_dt == other_dt:
        frames = math.fsum(float(x) for x in (j - i)) / len(i)
        return (other_t0 - ref_t0) + frames * ref_dt
    lags = _time_offsets(ref_t0, ref_dt, other_t0, other_dt, i, j)
    return math.fsum(float(x) for x in lags) / len(lags)


@dataclass
class LagResult:
    mean: float  # seconds
    per_item: np.ndarray  # seconds, NaN where unreached
    n_unreached: int
    dt: float

    @property
    def mean_frames(self) -> float:
        return self.mean / self.dt


def motion_phase_lag(reference: TimedTrajectory, executed: TimedTrajectory, radius: float) -> LagResult:
    """Mean delay before the executed root comes within ``radius`` of each reference position."""
    if not radius > 0:
        raise MetricError("radius must be positive")
    pr = reference.positions
    pe = executed.positions
    tr = reference.times
    te = executed.times
    hit_i, hit_j = [], []
    per = np.full(len(pr), np.nan)
    for i in range(len(pr)):
        later = np.flatnonzero(te >= tr[i] - 1e-12)
        if len(later) == 0:
            continue
        close = later[np.linalg.norm(pe[later] - pr[i], axis=1) <= radius]
        if len(close):
            j = int(close[0])
            hit_i.append(i)
            hit_j.append(j)
            per[i] = _time_offsets(reference.t0, reference.dt, executed.t0, executed.dt, i, j)
    if not hit_i:
        raise Unreachable("executed trajectory never reaches any reference position")
    mean = _mean_lag(reference.t0, reference.dt, executed.t0, executed.dt, np.array(hit_i), np.array(hit_j))
    return LagResult(mean, per, int(np.sum(np.isnan(per))), reference.dt)


def contact_onsets(flags) -> list[int]:
    """Indices where a boolean stream switches from false to true."""
    f = np.asarray(flags, dtype=bool)
    return [int(i) for i in np.flatnonzero(f[1:] & ~f[:-1]) + 1]


def contact_phase_lag(reference: TimedTrajectory, ep: Episode, early_window: float = 0.5) -> LagResult:
    """Mean delay from each reference contact onset to the measured hand contact.

    For an onset at ``t_ref`` the measured onset is the first frame with hand
    contact at or after ``t_ref - early_window``, so early contact gives a
    negative lag.
    """
    onsets = contact_onsets(reference.contacts)
    if not onsets:
        raise MetricError("reference has no 0 -> 1 contact transition")
    hand = np.array([f.hand_contact for f in ep.frames], dtype=bool)
    te = ep.times
    per = np.full(len(onsets), np.nan)
    hit_i, hit_j = [], []
    for k, i in enumerate(onsets):
        t_ref = reference.t0 + i * reference.dt
        cand = np.flatnonzero(hand & (te >= t_ref - early_window - 1e-12))
        if len(cand):
            j = int(cand[0])
            hit_i.append(i)
            hit_j.append(j)
            per[k] = _time_offsets(reference.t0, reference.dt, 0.0, ep.dt, i, j)
    if not hit_i:
        raise Unreachable("episode never makes hand contact")
    mean = _mean_lag(reference.t0, reference.dt, 0.0, ep.dt, np.array(hit_i), np.array(hit_j))
    return LagResult(mean, per, int(np.sum(np.isnan(per))), ep.dt)


# ---------------------------------------------------------------- OOD grid

PUBLISHED_SCENARIO_COUNT = 5756


@dataclass(frozen=True)
class OodSpec:
    x_min: float = 0.4
    x_max: float = 1.4
    spacing: float = 0.2
    yaws_deg: tuple[float, ...] = (0.0, 15.0, 30.0, 45.0)
    target_radius: float = 4.0
    target_step_deg: float = 10.0
    object_z: float = 0.0

    def __post_init__(self):
        if not self.spacing > 0 or not self.target_step_deg > 0:
            raise ValueError("spacing and target_step_deg must be positive")
        if self.x_max < self.x_min:
            raise ValueError("x_max must be >= x_min")


@dataclass(frozen=True)
class Scenario:
    index: int
    object_pose: Pose
    target_position: np.ndarray

    def to_dict(self) -> dict:
        return {"index": self.index, "object_pose": self.object_pose.to_dict(), "target_position": self.target_position.tolist()}


def _steps(lo: float, hi: float, step: float) -> list[float]:
    n = int(math.floor((hi - lo) / step + 1e-9))
    return [round(lo + k * step, 10) for k in range(n + 1)]


def ood_grid_points(spec: OodSpec = OodSpec()) -> list[tuple[float, float]]:
    """Trapezoid lattice: each x row spans y in [-x, x] at the grid spacing."""
    pts = []
    for x in _steps(spec.x_min, spec.x_max, spec.spacing):
        pts += [(x, y) for y in _steps(-x, x, spec.spacing)]
    return pts


def ood_targets(spec: OodSpec = OodSpec()) -> list[np.ndarray]:
    n = int(round(360.0 / spec.target_step_deg))
    out = []
    for k in range(n):
        a = math.radians(k * spec.target_step_deg)
        out.append(np.round(np.array([spec.target_radius * math.cos(a), spec.target_radius * math.sin(a), 0.0]), 12))
    return out


def generate_ood_grid(spec: OodSpec = OodSpec()) -> list[Scenario]:
    """All scenarios in x-major, then y, yaw, target-angle order."""
    targets = ood_targets(spec)
    out = []
    for x, y in ood_grid_points(spec):
        for yaw in spec.yaws_deg:
            pose = Pose.from_xyz_yaw(x, y, spec.object_z, math.radians(yaw))
            for tgt in targets:
                out.append(Scenario(len(out), pose, tgt))
    return out


def ood_summary(spec: OodSpec = OodSpec()) -> dict:
    n_pts = len(ood_grid_points(spec))
    n_yaw = len(spec.yaws_deg)
    n_tgt = len(ood_targets(spec))
    total = n_pts * n_yaw * n_tgt
    return {
        "grid_points": n_pts,
        "yaws": n_yaw,
        "targets": n_tgt,
        "object_configurations": n_pts * n_yaw,
        "scenarios": total,
        "published_scenarios": PUBLISHED_SCENARIO_COUNT,
        "matches_published": total == PUBLISHED_SCENARIO_COUNT,
        "note": (
            f"enumerated {n_pts} x {n_yaw} x {n_tgt} = {total}; the published count "
            f"{PUBLISHED_SCENARIO_COUNT} = 4 x 1439 does not factor into this grid"
        ),
    }
