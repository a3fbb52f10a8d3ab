"""Time-stamped root trajectories with contact flags, plus JSON Lines I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from rootguide.se3 import Pose, interpolate_pose


@dataclass(frozen=True)
class Frame:
    pose: Pose
    contact: bool


@dataclass
class TimedTrajectory:
    """Uniformly sampled trajectory; frame ``i`` sits at ``t0 + i * dt``."""

    dt: float
    frames: list[Frame] = field(default_factory=list)
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.frames))

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (len(self.frames) - 1)

    @property
    def positions(self) -> np.ndarray:
        return np.array([f.pose.position for f in self.frames]).reshape(-1, 3)

    @property
    def quats(self) -> np.ndarray:
        return np.array([f.pose.rotation.quat for f in self.frames]).reshape(-1, 4)

    @property
    def contacts(self) -> np.ndarray:
        return np.array([f.contact for f in self.frames], dtype=bool)

    def contact_runs(self) -> list[tuple[int, int]]:
        """Inclusive (start, end) frame index of every contiguous contact block."""
        return bool_runs(self.contacts)

    def pose_at(self, t: float) -> Pose:
        """Pose at time ``t`` by interpolation between the bracketing frames."""
        if not self.frames:
            raise ValueError("empty trajectory")
        u = (t - self.t0) / self.dt
        if abs(u - round(u)) < 1e-9:  # on a sample: return it unblended
            u = float(round(u))
        n = len(self.frames)
        if u <= 0.0:
            if u < -1e-9:
                raise ValueError(f"t={t} before trajectory start {self.t0}")
            return self.frames[0].pose
        if u >= n - 1:
            if u > n - 1 + 1e-9:
                raise ValueError(f"t={t} after trajectory end {self.t_end}")
            return self.frames[-1].pose
        i = int(math.floor(u))
        s = u - i
        return interpolate_pose(self.frames[i].pose, self.frames[i + 1].pose, s)

    def extend(self, other: TimedTrajectory, skip_first: bool = False) -> None:
        if not math.isclose(other.dt, self.dt):
            raise ValueError("cannot concatenate trajectories with different dt")
        self.frames.extend(other.frames[1:] if skip_first else other.frames)

    # I/O
    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for line in self.iter_json():
                fh.write(line + "\n")

    def iter_json(self) -> Iterable[str]:
        for t, f in zip(self.times, self.frames):
            yield json.dumps({"t": float(t), "pose": f.pose.to_dict(), "contact": bool(f.contact)})

    @classmethod
    def from_jsonl(cls, path: str | Path) -> TimedTrajectory:
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        if not rows:
            raise ValueError(f"{path}: empty trajectory file")
        ts = [r["t"] for r in rows]
        dt = ts[1] - ts[0] if len(ts) > 1 else 0.02
        frames = [Frame(Pose.from_dict(r["pose"]), bool(r["contact"])) for r in rows]
        return cls(dt=dt, frames=frames, t0=ts[0])


def bool_runs(flags) -> list[tuple[int, int]]:
    flags = np.asarray(flags, dtype=bool)
    runs = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(flags) - 1))
    return runs
