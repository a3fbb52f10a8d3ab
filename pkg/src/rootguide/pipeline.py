"""End-to-end synthetic run: plan -> execute -> (drop -> predict -> recover) -> score.

Execution uses a kinematic follower: the robot root replays the reference
with a fixed frame delay and bounded uniform noise. It is a test double for
a tracking policy and has no physics failure modes of its own. The carried
box is rigidly attached to the root while held; a scripted disturbance
knocks it loose and its ground-truth fall is simulated at a finer time step
than the prediction twin uses.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rootguide.config import Config
from rootguide.drop import (
    DegenerateBearing,
    DropMonitor,
    MonitorStatus,
    SafetyRegion,
    StateFrame,
    bearing,
    estimate_release_velocity,
    gaze_adjustment,
)
from rootguide.metrics import (
    Episode,
    EpisodeFrame,
    MetricError,
    Scenario,
    contact_phase_lag,
    grasp_success,
    motion_phase_lag,
    placement_precision,
    rpe_roe,
    task_success,
)
from rootguide.planner import (
    OccupancyMap,
    PathPlanner,
    PlanarWaypoint,
    PlanningError,
    build_sequence,
    interpolate_trajectory,
    lift_waypoints,
)
from rootguide.priors import PriorLibrary, synthetic_library
from rootguide.rng import XorShift64Star
from rootguide.se3 import Pose, Rotation
from rootguide.trajectory import Frame, TimedTrajectory
from rootguide.twin import SettleTimeout, predict_resting_pose, simulate_drop

STAGES = ("retrieve", "sequence", "interpolate", "disturbance", "monitor", "twin", "gaze", "recovery", "metrics")
MAX_FRAMES = 200_000


class StageFailure(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass(frozen=True)
class Disturbance:
    """Knock the held box loose at ``frame`` (None: middle of the first carry).

    Velocities are added to the root's own velocity; ``linear`` is in the
    root frame, ``angular`` in the world frame.
    """

    frame: int | None = None
    linear: tuple[float, float, float] = (0.0, 0.8, 0.2)
    angular: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"frame": self.frame, "linear": list(self.linear), "angular": list(self.angular)}

    @classmethod
    def from_dict(cls, d: dict) -> Disturbance:
        return cls(d.get("frame"), tuple(d.get("linear", cls.linear)), tuple(d.get("angular", cls.angular)))


@dataclass
class PipelineScenario:
    object_pose: Pose  # world
    goal_position: np.ndarray  # world; z is ignored, the box is set down on the floor
    robot_start: Pose | None = None  # None: origin facing +x at standing height
    disturbance: Disturbance | None = None
    obstacles: list = field(default_factory=list)  # [[lo_x, lo_y], [hi_x, hi_y]] boxes
    scenario_id: str = "scenario"

    def __post_init__(self):
        self.goal_position = np.asarray(self.goal_position, dtype=float).reshape(3)

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "object_pose": self.object_pose.to_dict(),
            "goal_position": self.goal_position.tolist(),
            "robot_start": None if self.robot_start is None else self.robot_start.to_dict(),
            "disturbance": None if self.disturbance is None else self.disturbance.to_dict(),
            "obstacles": [[list(map(float, lo)), list(map(float, hi))] for lo, hi in self.obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> PipelineScenario:
        try:
            return cls(
                Pose.from_dict(d["object_pose"]),
                d["goal_position"],
                Pose.from_dict(d["robot_start"]) if d.get("robot_start") else None,
                Disturbance.from_dict(d["disturbance"]) if d.get("disturbance") else None,
                [tuple(b) for b in d.get("obstacles", [])],
                str(d.get("scenario_id", "scenario")),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"bad scenario: {exc}") from exc

    @classmethod
    def from_grid(cls, sc: Scenario, cfg: Config, disturbance: Disturbance | None = None) -> PipelineScenario:
        """Grid object poses sit on the floor in front of a robot at the origin."""
        obj = sc.object_pose.with_z(cfg.twin.box_half_extents[2])
        return cls(obj, sc.target_position, None, disturbance, [], f"ood_{sc.index:05d}")


@dataclass
class RunReport:
    data: dict
    timings: dict
    # raw streams, not serialised into the report
    reference: TimedTrajectory | None = None
    episode: Episode | None = None

    @property
    def ok(self) -> bool:
        return self.data["ok"]

    def to_json(self) -> str:
        # timings are kept out so equal seeds give byte-identical reports
        return json.dumps(self.data, indent=2, allow_nan=False)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass
class Cycle:
    sequence: list
    target: Pose
    end: Pose
    prior_index: int
    prior_score: float
    nav_count: int


class _Run:
    def __init__(self, scenario: PipelineScenario, cfg: Config, seed: int):
        self.sc = scenario
        self.cfg = cfg
        self.rng = XorShift64Star(seed)
        self.start = scenario.robot_start or Pose.from_xyz_yaw(0.0, 0.0, cfg.h_stand, 0.0)
        self.library = self._library()
        self.planner = PathPlanner(self._map(), cfg.pipeline.inflation_radius)

    def _library(self) -> PriorLibrary:
        if self.cfg.paths.prior_library:
            return PriorLibrary.load(self.cfg.paths.prior_library)
        return synthetic_library(
            root_height=self.cfg.h_stand,
            squat_height=self.cfg.squat_height,
            object_height=float(self.sc.object_pose.position[2]),
        )

    def _map(self) -> OccupancyMap:
        p = self.cfg.pipeline
        if self.cfg.paths.map:
            m = OccupancyMap.load(self.cfg.paths.map, self.cfg.paths.map_meta)
        else:
            pts = np.array([self.start.position[:2], self.sc.object_pose.position[:2], self.sc.goal_position[:2]])
            lo = np.floor((pts.min(axis=0) - p.map_margin) / p.map_cell) * p.map_cell
            hi = pts.max(axis=0) + p.map_margin
            m = OccupancyMap.empty(lo, hi - lo, p.map_cell)
        for lo_xy, hi_xy in self.sc.obstacles:
            m.add_box(lo_xy, hi_xy)
        return m

    def plan_cycle(self, robot: Pose, obj: Pose) -> Cycle:
        """Retrieve a grasp target for ``obj`` and build the pick-carry-place sequence."""
        cfg = self.cfg
        rel = robot.inverse() * obj
        k, score = self.library.retrieve(rel, cfg.retrieval)
        target = self.library.target_pose(k, rel, robot)
        hold = target.inverse() * obj
        goal = self.sc.goal_position
        heading = math.atan2(goal[1] - target.position[1], goal[0] - target.position[0])
        r_end = Rotation.from_yaw(heading)
        goal_obj = Pose(np.array([goal[0], goal[1], obj.position[2]]), r_end * hold.rotation)
        end = goal_obj * hold.inverse()
        path = self.planner.plan(
            PlanarWaypoint(float(target.position[0]), float(target.position[1]), heading),
            PlanarWaypoint(float(end.position[0]), float(end.position[1]), heading),
        )
        nav = lift_waypoints(path[1:-1], cfg.h_stand)
        seq = build_sequence(robot, target, end, nav, cfg.h_stand)
        return Cycle(seq, target, end, k, score, len(nav))

    def follow(self, ref: TimedTrajectory, k: int) -> tuple[Pose, bool]:
        f = self.cfg.follower
        idx = min(max(k - f.delay_frames, 0), len(ref) - 1)
        src = ref.frames[idx]
        noise = np.array(self.rng.uniform_vec(-f.noise_pos, f.noise_pos, 3))
        dyaw = self.rng.uniform(-f.noise_yaw, f.noise_yaw)
        return Pose(src.pose.position + noise, Rotation.from_yaw(dyaw) * src.pose.rotation), src.contact


def plan_reference(scenario: PipelineScenario, cfg: Config = Config()) -> tuple[Cycle, TimedTrajectory]:
    """Plan the undisturbed pick-carry-place reference for a scenario."""
    run = _Run(scenario, cfg, 0)
    cycle = run.plan_cycle(run.start, scenario.object_pose)
    return cycle, interpolate_trajectory(cycle.sequence, cfg.limits.v_max, cfg.limits.omega_max, cfg.dt)


def _first_run_mid(ref: TimedTrajectory) -> int:
    runs = ref.contact_runs()
    if not runs:
        raise StageFailure("disturbance", "reference has no contact phase")
    s, e = runs[0]
    return (s + e) // 2


def run_pipeline(scenario: PipelineScenario, cfg: Config = Config(), seed: int = 0) -> RunReport:
    """Execute every stage in order; failures are recorded, later stages skipped."""
    timings: dict[str, float] = {}
    stages = {name: {"status": "skipped"} for name in STAGES}
    report = {
        "scenario": scenario.to_dict(),
        "seed": int(seed),
        "profile": cfg.profile,
        "limits": {"v_max": cfg.limits.v_max, "omega_max": cfg.limits.omega_max},
        "dt": cfg.dt,
        "ok": False,
        "failed_stage": None,
        "stages": stages,
    }
    t_start = time.perf_counter()
    ref = episode = None
    try:
        ref, episode = _execute(scenario, cfg, seed, stages, report, timings)
        report["ok"] = True
    except StageFailure as exc:
        stages[exc.stage] = {"status": "failed", "error": str(exc).split(": ", 1)[1]}
        report["failed_stage"] = exc.stage
    timings["total"] = time.perf_counter() - t_start
    return RunReport(_clean(report), timings, ref, episode)


def _execute(scenario, cfg: Config, seed, stages, report, timings):
    pc = cfg.pipeline
    lim = cfg.limits
    t = time.perf_counter()
    try:
        run = _Run(scenario, cfg, seed)
    except (OSError, ValueError) as exc:
        raise StageFailure("retrieve", str(exc)) from exc
    obj0 = scenario.object_pose
    try:
        cycle = run.plan_cycle(run.start, obj0)
    except PlanningError as exc:
        raise StageFailure("sequence", str(exc)) from exc
    except (LookupError, ValueError) as exc:
        raise StageFailure("retrieve", str(exc)) from exc
    stages["retrieve"] = {
        "status": "ok",
        "prior_index": cycle.prior_index,
        "score": cycle.prior_score,
        "target_pose": cycle.target.to_dict(),
    }
    stages["sequence"] = {"status": "ok", "length": len(cycle.sequence), "nav_waypoints": cycle.nav_count, "end_pose": cycle.end.to_dict()}
    ref = interpolate_trajectory(cycle.sequence, lim.v_max, lim.omega_max, cfg.dt)
    stages["interpolate"] = {"status": "ok", "frames": len(ref), "duration": ref.t_end}
    timings["plan"] = time.perf_counter() - t

    dist = scenario.disturbance
    f_d = None
    if dist is not None:
        f_d = dist.frame if dist.frame is not None else _first_run_mid(ref) + cfg.follower.delay_frames
        stages["disturbance"] = {"status": "pending", "frame": f_d}

    # loop state
    obj = obj0
    state = "resting"  # resting | held | falling
    hold = None
    fall: list[Pose] = []
    fall_start = 0
    truth_rest = None
    grasp_target = cycle.target
    planned_obj = obj0
    grasp_pending = True
    region = None
    monitor = None
    stream: list[StateFrame] = []
    alerts: list[int] = []
    exec_poses: list[Pose] = []
    ep_frames: list[EpisodeFrame] = []
    recovery = None
    prev_exec = None

    t = time.perf_counter()
    k = 0
    while k <= len(ref) - 1 + cfg.follower.delay_frames:
        if k > MAX_FRAMES:
            raise StageFailure("monitor", "execution did not terminate")
        root, cmd = run.follow(ref, k)

        if state == "resting" and grasp_pending and cmd:
            if np.linalg.norm(root.position - grasp_target.position) <= cfg.follower.grasp_tol:
                grasp_pending = False
                if np.linalg.norm(obj.position - planned_obj.position) <= pc.grasp_reach:
                    hold = root.inverse() * obj
                    state = "held"
                    center = cfg.safety.center if cfg.safety.center is not None else tuple(hold.position)
                    region = SafetyRegion(center, cfg.safety.half_extents)
                    monitor = DropMonitor(region, cfg.safety.window_n)
        if state == "held":
            obj = root * hold
            if not cmd:
                state = "resting"
                monitor = None
        if state == "held" and f_d is not None and k == f_d:
            v_root = np.zeros(3) if prev_exec is None else (root.position - prev_exec.position) / cfg.dt
            lin = v_root + root.rotation.apply(np.asarray(dist.linear, dtype=float))
            ang = np.asarray(dist.angular, dtype=float)
            truth_params = cfg.twin.refined(pc.truth_refine)
            every = max(1, int(round(cfg.dt / truth_params.sim_dt)))
            sim = simulate_drop(obj, lin, ang, truth_params, record_every=every)
            fall = sim.poses()
            fall_start = k
            truth_rest = sim.resting
            state = "falling"
            stages["disturbance"] = {
                "status": "ok",
                "frame": k,
                "release_velocity": [lin, ang],
                "true_rest_pose": truth_rest.to_dict(),
                "true_settled": sim.settled,
            }
        if state == "falling":
            j = k - fall_start
            if j < len(fall):
                obj = fall[j]
            else:
                obj = truth_rest
                state = "resting"

        hand = state == "held"
        exec_poses.append(root)
        ep_frames.append(EpisodeFrame(root, obj, bool(cmd), hand))

        if monitor is not None:
            sf = StateFrame(k * cfg.dt, root, root.inverse() * obj, bool(cmd), hand)
            stream.append(sf)
            if monitor.update(sf) is MonitorStatus.DROP_ALERT:
                alerts.append(k)
                monitor = None
                recovery = _recover(run, cfg, k, root, obj, stream, stages)
                ref.frames = ref.frames[: k + 1]
                ref.extend(recovery["trajectory"], skip_first=True)
                grasp_target = recovery["cycle"].target
                planned_obj = recovery["predicted"]
                grasp_pending = True
                stream = []
        prev_exec = root
        k += 1
    timings["execute"] = time.perf_counter() - t

    if dist is not None and stages["disturbance"]["status"] == "pending":
        stages["disturbance"] = {"status": "not_applied", "frame": f_d, "reason": "box not held at that frame"}
    if truth_rest is not None and stages["twin"].get("predicted_rest_pose"):
        pred = np.array(stages["twin"]["predicted_rest_pose"]["position"])
        stages["twin"]["position_error_vs_truth"] = float(np.linalg.norm(pred - truth_rest.position))
    stages["monitor"] = {"status": "ok", "alerts": alerts, "window_n": cfg.safety.window_n}
    if region is not None:
        stages["monitor"]["region"] = region.to_dict()

    t = time.perf_counter()
    episode = Episode(cfg.dt, ep_frames, scenario.goal_position, scenario.scenario_id, ref)
    executed = TimedTrajectory(cfg.dt, [Frame(p, f.hand_contact) for p, f in zip(exec_poses, ep_frames)])
    stages["metrics"] = {"status": "ok", **_metrics(cfg, ref, executed, episode)}
    timings["metrics"] = time.perf_counter() - t

    report["alerts"] = alerts
    report["reference_frames"] = len(ref)
    report["contact_runs"] = [list(r) for r in ref.contact_runs()]
    report["final_object_pose"] = ep_frames[-1].object_pose.to_dict()
    return ref, episode


def _recover(run: _Run, cfg: Config, k: int, root: Pose, obj_seen: Pose, stream, stages) -> dict:
    pc = cfg.pipeline
    gravity = (0.0, 0.0, -cfg.twin.gravity) if pc.gravity_compensation else None
    try:
        vel = estimate_release_velocity(stream, gravity=gravity)
    except ValueError as exc:
        raise StageFailure("twin", str(exc)) from exc
    try:
        predicted, settle_t = predict_resting_pose(obj_seen, vel, cfg.twin)
        twin_status = "ok"
    except SettleTimeout as exc:
        predicted, settle_t, twin_status = exc.last_pose, None, "timeout"
    stages["twin"] = {
        "status": twin_status,
        "alert_frame": k,
        "estimated_velocity": [vel[0], vel[1]],
        "predicted_rest_pose": predicted.to_dict(),
        "settle_time": settle_t,
    }
    try:
        gaze = gaze_adjustment(root, predicted.position, pc.camera_fov_h, pc.gaze_standoff, cfg.h_stand)
        gaze_status = "ok"
    except DegenerateBearing as exc:
        gaze, gaze_status = exc.fallback, "degenerate_fallback"
    stages["gaze"] = {
        "status": gaze_status,
        "pose": gaze.to_dict(),
        "bearing": bearing(gaze, predicted.position),
    }
    try:
        cycle = run.plan_cycle(gaze, predicted)
    except (PlanningError, LookupError, ValueError) as exc:
        raise StageFailure("recovery", str(exc)) from exc
    seq = [(root, False)] + cycle.sequence
    traj = interpolate_trajectory(seq, cfg.limits.v_max, cfg.limits.omega_max, cfg.dt, t0=k * cfg.dt)
    stages["recovery"] = {
        "status": "ok",
        "prior_index": cycle.prior_index,
        "sequence_length": len(seq),
        "frames": len(traj),
        "target_pose": cycle.target.to_dict(),
    }
    return {"trajectory": traj, "cycle": cycle, "predicted": predicted}


def _metrics(cfg: Config, ref: TimedTrajectory, executed: TimedTrajectory, ep: Episode) -> dict:
    pc = cfg.pipeline
    out = {
        "grasp_success": grasp_success(ep, pc.lift_height, pc.hold_time),
        "placement_precision": placement_precision(ep),
        "task_success": task_success(ep, pc.success_tol, pc.lift_height, pc.hold_time),
    }
    rpe, roe = rpe_roe(ref, executed)
    out["rpe"], out["roe"] = rpe, roe
    try:
        mpl = motion_phase_lag(ref, executed, pc.mpl_radius)
        out["mpl_s"], out["mpl_frames"], out["mpl_unreached"] = mpl.mean, mpl.mean_frames, mpl.n_unreached
    except MetricError as exc:
        out["mpl_s"], out["mpl_error"] = None, str(exc)
    try:
        cpl = contact_phase_lag(ref, ep, pc.cpl_window)
        out["cpl_s"], out["cpl_frames"], out["cpl_unmatched"] = cpl.mean, cpl.mean_frames, cpl.n_unreached
    except MetricError as exc:
        out["cpl_s"], out["cpl_error"] = None, str(exc)
    return out
