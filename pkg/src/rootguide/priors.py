"""Interaction pose priors: storage, nearest-prior retrieval and target synthesis."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rootguide.se3 import Pose, Rotation, angular_distances, extract_yaw, yaw_only


class NoPriors(LookupError):
    pass


@dataclass(frozen=True)
class PriorEntry:
    """Object pose and robot interaction pose recorded at contact onset.

    Both poses are expressed in the robot root frame of the clip's first frame.
    """

    object_pose: Pose
    interaction_pose: Pose
    source_clip_id: str = ""

    def to_dict(self) -> dict:
        return {
            "clip_id": self.source_clip_id,
            "object_pose": self.object_pose.to_dict(),
            "interaction_pose": self.interaction_pose.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> PriorEntry:
        return cls(
            Pose.from_dict(d["object_pose"]),
            Pose.from_dict(d["interaction_pose"]),
            str(d.get("clip_id", "")),
        )


@dataclass(frozen=True)
class RetrievalWeights:
    w_T: float = 1.0  # per meter
    w_R: float = 0.3  # per radian
    yaw_only: bool = False  # compare only heading, for symmetric boxes

    def __post_init__(self):
        if self.w_T < 0 or self.w_R < 0:
            raise ValueError("retrieval weights must be non-negative")
        if self.w_T == 0 and self.w_R == 0:
            raise ValueError("retrieval weights cannot both be zero")


@dataclass
class PriorLibrary:
    """Insertion-ordered prior store. Single writer; concurrent reads are fine."""

    entries: list[PriorEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, k: int) -> PriorEntry:
        if not 0 <= k < len(self.entries):
            raise IndexError(f"prior index {k} out of range (library size {len(self.entries)})")
        return self.entries[k]

    def add_prior(self, entry: PriorEntry) -> int:
        self.entries.append(entry)
        return len(self.entries) - 1

    def scores(self, current_object_pose: Pose, weights: RetrievalWeights = RetrievalWeights()) -> np.ndarray:
        """Weighted error of every stored prior against ``current_object_pose``."""
        if not self.entries:
            raise NoPriors("prior library is empty")
        pos = np.array([e.object_pose.position for e in self.entries])
        d_pos = np.linalg.norm(pos - current_object_pose.position, axis=1)
        if weights.yaw_only:
            cur = _yaw_quat(current_object_pose.rotation)
            quats = np.array([_yaw_quat(e.object_pose.rotation) for e in self.entries])
        else:
            cur = np.asarray(current_object_pose.rotation.quat)
            quats = np.array([e.object_pose.rotation.quat for e in self.entries])
        d_rot = angular_distances(quats, cur[None, :])
        return weights.w_T * d_pos + weights.w_R * d_rot

    def retrieve(
        self, current_object_pose: Pose, weights: RetrievalWeights = RetrievalWeights()
    ) -> tuple[int, float]:
        """Index of the closest prior and its score; ties go to the earliest insert."""
        s = self.scores(current_object_pose, weights)
        k = int(np.argmin(s))  # argmin returns the first minimum
        return k, float(s[k])

    def target_pose(self, k: int, current_object_pose: Pose, root_pose: Pose) -> Pose:
        """Interaction target in the world frame.

        The stored interaction position is shifted by the object's displacement
        from the prior, rotated by the root heading and offset by the root
        position; the orientation is the root rotation times the stored one.
        """
        entry = self[k]
        shift = current_object_pose.position - entry.object_pose.position
        local = entry.interaction_pose.position + shift
        p = yaw_only(root_pose.rotation).apply(local) + root_pose.position
        return Pose(p, root_pose.rotation * entry.interaction_pose.rotation)

    # persistence
    def to_json(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> PriorLibrary:
        data = json.loads(Path(path).read_text())
        if not isinstance(data, list):
            raise ValueError(f"{path}: prior file must be a JSON array")
        return cls([PriorEntry.from_dict(d) for d in data])


def _yaw_quat(r: Rotation) -> np.ndarray:
    return np.asarray(Rotation.from_yaw(extract_yaw(r)[0]).quat)


def synthetic_library(
    root_height: float = 0.75,
    squat_height: float = 0.45,
    object_height: float = 0.125,
    standoff: float = 0.35,
) -> PriorLibrary:
    """Small library of box-pick priors for demos and the synthetic pipeline.

    Each entry places the robot ``standoff`` meters behind the box along the
    box heading, facing it, at squat height. Poses are relative to a root
    frame standing at ``root_height`` above the floor.
    """
    lib = PriorLibrary()
    for i, (x, y, yaw_deg) in enumerate(
        (x, y, yaw) for x in (0.6, 1.0, 1.4) for y in (-0.4, 0.0, 0.4) for yaw in (0.0, 30.0)
    ):
        yaw = np.radians(yaw_deg)
        obj = Pose.from_xyz_yaw(x, y, object_height - root_height, yaw)
        fwd = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        p_int = obj.position - standoff * fwd
        p_int[2] = squat_height - root_height
        lib.add_prior(PriorEntry(obj, Pose(p_int, Rotation.from_yaw(yaw)), f"synthetic_{i:02d}"))
    return lib
