"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or configuration, 3 a stage failed.

``--out`` names either a file (it has a suffix) or a directory. Auxiliary
outputs are written next to the main file or inside the directory. Without
``--out`` the main JSON result goes to stdout.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from rootguide.config import Config, load_config
from rootguide.contact_opt import (
    AdamConfig,
    AnalyticBox,
    KinematicChain,
    MotionClip,
    NoContactPhase,
    OptimizerStall,
    SampledGrid,
    optimize_contact,
    write_loss_curve,
)
from rootguide.drop import (
    DegenerateBearing,
    DropMonitor,
    MonitorStatus,
    SafetyRegion,
    StateFrame,
    estimate_release_velocity,
    gaze_adjustment,
    read_state_stream,
)
from rootguide.metrics import (
    Episode,
    MetricError,
    OodSpec,
    Unreachable,
    contact_phase_lag,
    generate_ood_grid,
    grasp_success,
    motion_phase_lag,
    ood_summary,
    placement_precision,
    rpe_roe,
    task_success,
)
from rootguide.pipeline import Disturbance, PipelineScenario, StageFailure, plan_reference, run_pipeline
from rootguide.planner import PlanningError
from rootguide.priors import NoPriors, PriorLibrary, synthetic_library
from rootguide.se3 import Pose, Rotation
from rootguide.trajectory import Frame, TimedTrajectory
from rootguide.twin import SettleTimeout, predict_resting_pose

EXIT_OK, EXIT_INVALID, EXIT_STAGE = 0, 2, 3


class StageError(RuntimeError):
    pass


# ---------------------------------------------------------------- argument helpers


def _floats(text: str, n: int | tuple[int, ...] | None, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ValueError(f"{what}: expected comma-separated numbers, got {text!r}") from exc
    ns = (n,) if isinstance(n, int) else n
    if ns is not None and len(vals) not in ns:
        raise ValueError(f"{what}: expected {' or '.join(map(str, ns))} numbers, got {len(vals)}")
    return vals


def parse_pose(text: str, what: str, default_z: float = 0.0) -> Pose:
    """Pose from a JSON file, inline JSON, or ``x,y,yaw`` / ``x,y,z,yaw`` / ``x,y,z,qw,qx,qy,qz``."""
    src = text.strip()
    if Path(src).is_file():
        src = Path(src).read_text()
    if src.startswith("{"):
        try:
            return Pose.from_dict(json.loads(src))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{what}: bad pose JSON ({exc})") from exc
    v = _floats(src, (3, 4, 7), what)
    if len(v) == 3:
        return Pose.from_xyz_yaw(v[0], v[1], default_z, v[2])
    if len(v) == 4:
        return Pose.from_xyz_yaw(*v)
    return Pose(np.array(v[:3]), Rotation.from_quat(v[3:]))


class Output:
    def __init__(self, out: str | None, main_name: str):
        self.out = Path(out) if out else None
        if self.out is None:
            self.dir, self.main = None, None
        elif self.out.suffix:
            self.dir, self.main = self.out.parent, self.out
        else:
            self.dir, self.main = self.out, self.out / main_name
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def aux(self, name: str) -> Path | None:
        return None if self.dir is None else self.dir / name

    def emit(self, data: dict) -> None:
        text = json.dumps(data, indent=2, allow_nan=False)
        if self.main is None:
            print(text)
        else:
            self.main.write_text(text + "\n")


def _num(v):
    if v is None:
        return None
    f = float(v)
    return f if math.isfinite(f) else None


def _config(args) -> Config:
    cfg = load_config(args.config)
    if getattr(args, "profile", None):
        cfg = cfg.with_profile(args.profile)
    return cfg


def _library(path: str | None, cfg: Config) -> PriorLibrary:
    if path:
        return PriorLibrary.load(path)
    if cfg.paths.prior_library:
        return PriorLibrary.load(cfg.paths.prior_library)
    return synthetic_library(root_height=cfg.h_stand, squat_height=cfg.squat_height)


# ---------------------------------------------------------------- commands


def cmd_plan(args) -> int:
    cfg = _config(args)
    paths = cfg.paths
    if args.map:
        paths = dataclasses.replace(paths, map=args.map, map_meta=args.map_meta)
    if args.priors:
        paths = dataclasses.replace(paths, prior_library=args.priors)
    cfg = dataclasses.replace(cfg, paths=paths)
    start = parse_pose(args.start, "--start", cfg.h_stand)
    obj = parse_pose(args.object_pose, "--object-pose", cfg.twin.box_half_extents[2])
    goal = _floats(args.goal, (2, 3), "--goal")
    scenario = PipelineScenario(obj, np.array((goal + [0.0])[:3]), start)
    cycle, ref = plan_reference(scenario, cfg)
    out = Output(args.out, "reference.jsonl")
    summary = {
        "prior_index": cycle.prior_index,
        "prior_score": cycle.prior_score,
        "target_pose": cycle.target.to_dict(),
        "end_pose": cycle.end.to_dict(),
        "sequence_length": len(cycle.sequence),
        "frames": len(ref),
        "duration": ref.t_end,
        "contact_runs": [list(r) for r in ref.contact_runs()],
        "profile": cfg.profile,
    }
    if out.main is None:
        for line in ref.iter_json():
            print(line)
    else:
        ref.to_jsonl(out.main)
        out.aux("plan_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    cfg = _config(args)
    lib = _library(args.priors, cfg)
    weights = cfg.retrieval
    if args.w_t is not None or args.w_r is not None:
        weights = dataclasses.replace(
            weights,
            w_T=weights.w_T if args.w_t is None else args.w_t,
            w_R=weights.w_R if args.w_r is None else args.w_r,
        )
    obj_rel = parse_pose(args.object_pose, "--object-pose")
    root = parse_pose(args.root_pose, "--root-pose") if args.root_pose else Pose.identity()
    k, score = lib.retrieve(obj_rel, weights)
    Output(args.out, "prior.json").emit(
        {
            "index": k,
            "score": score,
            "clip_id": lib[k].source_clip_id,
            "target_pose": lib.target_pose(k, obj_rel, root).to_dict(),
        }
    )
    return EXIT_OK


def _region(args, cfg: Config) -> SafetyRegion:
    if args.region:
        d = json.loads(Path(args.region).read_text()) if Path(args.region).is_file() else json.loads(args.region)
        return SafetyRegion.from_dict(d)
    if cfg.safety.center is not None:
        return SafetyRegion(cfg.safety.center, cfg.safety.half_extents)
    return SafetyRegion.default(args.chest_height)


def cmd_monitor(args) -> int:
    cfg = _config(args)
    frames = read_state_stream(args.stream)
    region = _region(args, cfg)
    n = args.window or cfg.safety.window_n
    mon = DropMonitor(region, n)
    alerts = []
    for i, f in enumerate(frames):
        if mon.update(f) is MonitorStatus.DROP_ALERT:
            alerts.append(i)
            mon.reset()
    Output(args.out, "alerts.json").emit(
        {
            "frames": len(frames),
            "window_n": n,
            "region": region.to_dict(),
            "alerts": alerts,
            "alert_times": [frames[i].t for i in alerts],
        }
    )
    return EXIT_OK


def cmd_predict_drop(args) -> int:
    cfg = _config(args)
    twin = cfg.twin
    if args.restitution is not None:
        twin = dataclasses.replace(twin, restitution=args.restitution)
    if args.stream:
        frames = read_state_stream(args.stream)
        history: list[StateFrame] = frames if args.frame is None else frames[: args.frame + 1]
        if not history:
            raise ValueError("--frame selects an empty history")
        gravity = (0.0, 0.0, -twin.gravity) if args.gravity_compensation else None
        lin, ang = estimate_release_velocity(history, gravity=gravity)
        init = history[-1].object_world
        robot = history[-1].root_pose
    else:
        if not args.pose:
            raise ValueError("give --stream or --pose")
        init = parse_pose(args.pose, "--pose")
        lin = np.array(_floats(args.lin, 3, "--lin"))
        ang = np.array(_floats(args.ang, 3, "--ang"))
        robot = parse_pose(args.robot_pose, "--robot-pose", cfg.h_stand) if args.robot_pose else None
    try:
        rest, t_rest = predict_resting_pose(init, (lin, ang), twin)
    except SettleTimeout as exc:
        raise StageError(f"twin: {exc}") from exc
    result = {
        "initial_pose": init.to_dict(),
        "velocity": {"linear": list(map(float, lin)), "angular": list(map(float, ang))},
        "resting_pose": rest.to_dict(),
        "settle_time": t_rest,
    }
    if robot is not None:
        pc = cfg.pipeline
        try:
            gaze = gaze_adjustment(robot, rest.position, pc.camera_fov_h, pc.gaze_standoff, cfg.h_stand)
            result["gaze_pose"] = gaze.to_dict()
        except DegenerateBearing as exc:
            result["gaze_pose"] = exc.fallback.to_dict()
            result["gaze_warning"] = str(exc)
    Output(args.out, "prediction.json").emit(result)
    return EXIT_OK


def cmd_optimize_contact(args) -> int:
    _config(args)
    clip = MotionClip.load(args.clip)
    chain = KinematicChain.load(args.chain)
    dims = _floats(args.box, 3, "--box")
    half = tuple(0.5 * d for d in dims)
    sdf = AnalyticBox(half) if args.sdf == "analytic" else SampledGrid.from_box(half, args.cell)
    adam = AdamConfig(lr=args.lr, iters=args.iters)
    out = Output(args.out, "optimized_clip.json")
    stalled = None
    try:
        res = optimize_contact(clip, chain, sdf, adam, clamp_outside=args.clamp_outside)
    except OptimizerStall as exc:
        res, stalled = exc.result, str(exc)
    except NoContactPhase as exc:
        raise StageError(f"contact phase: {exc}") from exc
    summary = {
        "phase": list(res.phase),
        "initial_loss": res.initial_loss,
        "final_loss": res.final_loss,
        "iterations": len(res.losses) - 1,
        "stalled": stalled,
    }
    if out.main is None:
        print(json.dumps(summary, indent=2))
    else:
        res.clip.save(out.main)
        write_loss_curve(out.aux("loss_curve.csv"), res)
        out.aux("optimize_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if stalled:
        print(f"optimizer stalled: {stalled}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


METRIC_COLUMNS = (
    "episode_id",
    "grasp_success",
    "placement_precision",
    "task_success",
    "rpe",
    "roe",
    "mpl_s",
    "mpl_frames",
    "cpl_s",
    "cpl_frames",
)


def score_episode(ep: Episode, ref: TimedTrajectory | None, cfg: Config) -> dict:
    pc = cfg.pipeline
    row = {
        "episode_id": ep.episode_id,
        "grasp_success": grasp_success(ep, pc.lift_height, pc.hold_time),
        "placement_precision": placement_precision(ep),
        "task_success": task_success(ep, pc.success_tol, pc.lift_height, pc.hold_time),
    }
    for k in METRIC_COLUMNS[4:]:
        row[k] = None
    if ref is not None:
        executed = TimedTrajectory(ep.dt, [Frame(f.root_pose, f.hand_contact) for f in ep.frames])
        row["rpe"], row["roe"] = rpe_roe(ref, executed)
        try:
            mpl = motion_phase_lag(ref, executed, pc.mpl_radius)
            row["mpl_s"], row["mpl_frames"] = mpl.mean, mpl.mean_frames
        except Unreachable:
            pass
        try:
            cpl = contact_phase_lag(ref, ep, pc.cpl_window)
            row["cpl_s"], row["cpl_frames"] = cpl.mean, cpl.mean_frames
        except MetricError:
            pass
    return row


def _mean(vals) -> float | None:
    vals = [v for v in vals if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    src = Path(args.episodes)
    files = sorted(src.glob("*.jsonl")) if src.is_dir() else [src]
    if not files:
        raise ValueError(f"no episode files in {src}")
    ref = TimedTrajectory.from_jsonl(args.reference) if args.reference else None
    rows = [score_episode(Episode.from_jsonl(f), ref, cfg) for f in files]
    n = len(rows)
    ok = [r for r in rows if r["grasp_success"]]
    report = {
        "episodes": rows,
        "aggregate": {
            "count": n,
            "grasp_success_rate": len(ok) / n,
            "placement_precision_mean": _mean(r["placement_precision"] for r in ok),
            "task_success_rate": sum(r["task_success"] for r in rows) / n,
            **{f"{k}_mean": _mean(r[k] for r in rows) for k in METRIC_COLUMNS[4:]},
        },
    }
    out = Output(args.out, "report.json")
    out.emit(_numclean(report))
    csv_path = out.aux("episodes.csv")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if r[k] is None else r[k]) for k in METRIC_COLUMNS})
    return EXIT_OK


def _numclean(v):
    if isinstance(v, dict):
        return {k: _numclean(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_numclean(x) for x in v]
    if isinstance(v, float):
        return _num(v)
    return v


def cmd_grid(args) -> int:
    _config(args)
    spec = OodSpec(
        x_min=args.x_min,
        x_max=args.x_max,
        spacing=args.spacing,
        yaws_deg=tuple(_floats(args.yaws, None, "--yaws")),
        target_radius=args.radius,
        target_step_deg=args.step_deg,
    )
    grid = generate_ood_grid(spec)
    summary = ood_summary(spec)
    out = Output(args.out, "grid_summary.json")
    out.emit(summary)
    scen = out.aux("scenarios.jsonl")
    if scen is not None:
        with open(scen, "w") as fh:
            for s in grid:
                fh.write(json.dumps(s.to_dict()) + "\n")
    if not summary["matches_published"]:
        print(f"note: {summary['note']}", file=sys.stderr)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    if args.scenario:
        scenario = PipelineScenario.from_dict(json.loads(Path(args.scenario).read_text()))
    else:
        grid = generate_ood_grid()
        if not 0 <= args.grid_index < len(grid):
            raise ValueError(f"--grid-index must be in [0, {len(grid)})")
        scenario = PipelineScenario.from_grid(grid[args.grid_index], cfg)
    if args.disturb:
        scenario.disturbance = scenario.disturbance or Disturbance(args.disturb_frame)
    report = run_pipeline(scenario, cfg, args.seed)
    out = Output(args.out, "report.json")
    if out.main is None:
        print(report.to_json())
    else:
        report.write(out.main)
        out.aux("timings.json").write_text(json.dumps(report.timings, indent=2) + "\n")
        if report.reference is not None:
            report.reference.to_jsonl(out.aux("reference.jsonl"))
            report.episode.to_jsonl(out.aux("episode.jsonl"))
    if not report.ok:
        print(f"stage failed: {report.data['failed_stage']}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands re-declare the flags without defaults so a value given
    # before the subcommand name is not overwritten
    g = argparse.ArgumentParser(add_help=False)
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g.add_argument("--config", default=d(None), help="TOML or JSON config file")
    g.add_argument("--seed", type=int, default=d(0))
    g.add_argument("--out", default=d(None), help="output file or directory (default: stdout)")
    return g


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rootguide", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    sub = p.add_subparsers(dest="command", required=True)
    sub_flags = _global_flags(True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, parents=[sub_flags])
        sp.set_defaults(func=fn)
        return sp

    sp = add("plan", cmd_plan, "plan a pick-carry-place root trajectory")
    sp.add_argument("--map", default=None, help="occupancy PGM (sidecar JSON next to it)")
    sp.add_argument("--map-meta", default=None)
    sp.add_argument("--start", default="0,0,0", help="robot start: x,y,yaw | x,y,z,yaw | pose JSON")
    sp.add_argument("--goal", required=True, help="placement location x,y")
    sp.add_argument("--priors", default=None, help="prior library JSON (default: built-in synthetic set)")
    sp.add_argument("--object-pose", required=True, help="object world pose")
    sp.add_argument("--profile", default=None, help="velocity profile name (slow, middle, fast)")

    sp = add("retrieve-prior", cmd_retrieve, "nearest interaction prior for an object pose")
    sp.add_argument("--priors", default=None)
    sp.add_argument("--object-pose", required=True, help="object pose in the robot root frame")
    sp.add_argument("--root-pose", default=None, help="robot world pose for the target (default identity)")
    sp.add_argument("--w-t", type=float, default=None)
    sp.add_argument("--w-r", type=float, default=None)

    sp = add("monitor", cmd_monitor, "run the drop monitor over a state stream")
    sp.add_argument("--stream", required=True)
    sp.add_argument("--window", type=int, default=None)
    sp.add_argument("--region", default=None, help="region JSON {center, half_extents} (file or inline)")
    sp.add_argument("--chest-height", type=float, default=0.0)

    sp = add("predict-drop", cmd_predict_drop, "predict where a released box comes to rest")
    sp.add_argument("--stream", default=None, help="state stream; the last frames give pose and velocity")
    sp.add_argument("--frame", type=int, default=None, help="use the stream up to this frame index")
    sp.add_argument("--pose", default=None, help="initial object world pose (instead of --stream)")
    sp.add_argument("--lin", default="0,0,0")
    sp.add_argument("--ang", default="0,0,0")
    sp.add_argument("--robot-pose", default=None, help="also compute a gaze pose from here")
    sp.add_argument("--restitution", type=float, default=None)
    sp.add_argument("--gravity-compensation", action="store_true", default=False)

    sp = add("optimize-contact", cmd_optimize_contact, "reduce hand-box penetration in a motion clip")
    sp.add_argument("--clip", required=True)
    sp.add_argument("--chain", required=True)
    sp.add_argument("--box", required=True, help="box dimensions x,y,z in metres (full lengths)")
    sp.add_argument("--iters", type=int, default=500)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--sdf", choices=("analytic", "grid"), default="analytic")
    sp.add_argument("--cell", type=float, default=0.005)
    sp.add_argument("--clamp-outside", action="store_true", default=False)

    sp = add("evaluate", cmd_evaluate, "score episode logs")
    sp.add_argument("--episodes", required=True, help="directory of episode JSONL files, or one file")
    sp.add_argument("--reference", default=None, help="reference trajectory JSONL")

    sp = add("grid", cmd_grid, "enumerate the out-of-distribution scenario grid")
    sp.add_argument("--x-min", type=float, default=0.4)
    sp.add_argument("--x-max", type=float, default=1.4)
    sp.add_argument("--spacing", type=float, default=0.2)
    sp.add_argument("--yaws", default="0,15,30,45")
    sp.add_argument("--radius", type=float, default=4.0)
    sp.add_argument("--step-deg", type=float, default=10.0)

    sp = add("pipeline", cmd_pipeline, "plan, execute, recover and score one scenario")
    sp.add_argument("--scenario", default=None, help="scenario JSON (default: a grid scenario)")
    sp.add_argument("--grid-index", type=int, default=0)
    sp.add_argument("--disturb", action="store_true", default=False, help="knock the box loose mid-carry")
    sp.add_argument("--disturb-frame", type=int, default=None)
    sp.add_argument("--profile", default=None, help="velocity profile name (slow, middle, fast)")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (StageError, StageFailure, PlanningError, NoPriors, SettleTimeout, Unreachable, OptimizerStall) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
