"""Reference hand trajectories: file format, validation, resampling, and
a parametric synthetic reach-and-grasp generator.

File format (one frame per line):

    # header declares keypoint count and level tags
    frames F=15 levels=1,2,1,...
    t wx wy wz qw qx qy qz k1x k1y k1z ... kFx kFy kFz

Values are written with 9 significant digits; load(save(x)) is exact at
that precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .geometry import Pose, quat_normalize, quat_slerp
from .hand import (
    NUM_WRIST_DOF,
    HandSpec,
    JointState,
    forward_kinematics,
)

__all__ = [
    "ReferenceFrame",
    "ReferenceTrajectory",
    "TrajectoryError",
    "load_trajectory",
    "save_trajectory",
    "load_trajectories",
    "resample",
    "synthesize_reach_grasp",
    "plan_reach_grasp",
    "ReachGraspParams",
]


class TrajectoryError(ValueError):
    pass


@dataclass
class ReferenceFrame:
    timestamp: float
    wrist: Pose
    keypoints: np.ndarray  # (F, 3)
    levels: np.ndarray     # (F,)

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 3)
        self.levels = np.asarray(self.levels, dtype=np.int64).reshape(-1)
        if len(self.levels) != len(self.keypoints):
            raise TrajectoryError("levels length != keypoint count")


@dataclass
class ReferenceTrajectory:
    frames: List[ReferenceFrame]
    source_id: str = ""

    def __post_init__(self):
        if len(self.frames) < 2:
            raise TrajectoryError("trajectory needs at least 2 frames")
        F = len(self.frames[0].keypoints)
        prev_t = -np.inf
        for i, fr in enumerate(self.frames):
            if len(fr.keypoints) != F:
                raise TrajectoryError(
                    f"frame {i + 1}: keypoint count {len(fr.keypoints)} != {F}"
                )
            if fr.timestamp <= prev_t:
                raise TrajectoryError(
                    f"frame {i + 1}: timestamp {fr.timestamp} not strictly increasing"
                )
            prev_t = fr.timestamp

    @property
    def duration(self) -> float:
        return self.frames[-1].timestamp - self.frames[0].timestamp

    @property
    def num_keypoints(self) -> int:
        return len(self.frames[0].keypoints)


def save_trajectory(traj: ReferenceTrajectory, path) -> None:
    levels = ",".join(str(int(v)) for v in traj.frames[0].levels)
    lines = [f"frames F={traj.num_keypoints} levels={levels}"]
    for fr in traj.frames:
        vals = [fr.timestamp, *fr.wrist.position, *fr.wrist.quat]
        vals.extend(fr.keypoints.reshape(-1))
        lines.append(" ".join(f"{v:.9g}" for v in vals))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trajectory(path) -> ReferenceTrajectory:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = None
    frames: List[ReferenceFrame] = []
    F = None
    levels = None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if header is None:
            if not line.startswith("frames "):
                raise TrajectoryError(f"{path}:{lineno}: missing header line")
            header = line
            for token in line.split()[1:]:
                key, _, val = token.partition("=")
                if key == "F":
                    F = int(val)
                elif key == "levels":
                    levels = np.array([int(v) for v in val.split(",")])
            if F is None or levels is None or len(levels) != F:
                raise TrajectoryError(f"{path}:{lineno}: bad header {line!r}")
            continue
        vals = line.split()
        expect = 1 + 3 + 4 + 3 * F
        if len(vals) != expect:
            raise TrajectoryError(
                f"{path}:{lineno}: expected {expect} fields for F={F}, got {len(vals)}"
            )
        try:
            nums = np.array([float(v) for v in vals])
        except ValueError as exc:
            raise TrajectoryError(f"{path}:{lineno}: {exc}") from exc
        frames.append(
            ReferenceFrame(
                timestamp=nums[0],
                wrist=Pose(nums[1:4], quat_normalize(nums[4:8])),
                keypoints=nums[8:].reshape(F, 3),
                levels=levels,
            )
        )
    if header is None:
        raise TrajectoryError(f"{path}: empty file")
    try:
        return ReferenceTrajectory(frames, source_id=str(path))
    except TrajectoryError as exc:
        raise TrajectoryError(f"{path}: {exc}") from exc


def load_trajectories(path) -> List[ReferenceTrajectory]:
    """Load every *.traj file under a directory (or a single file)."""
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.traj"))
        if not files:
            raise TrajectoryError(f"{path}: no .traj files")
        return [load_trajectory(f) for f in files]
    return [load_trajectory(p)]


def resample(traj: ReferenceTrajectory, dt: float) -> ReferenceTrajectory:
    """Uniform resampling at 0, dt, 2dt, ... <= duration.

    Keypoints and wrist positions interpolate linearly; wrist orientation
    uses slerp.
    """
    if dt <= 0:
        raise TrajectoryError("dt must be positive")
    t0 = traj.frames[0].timestamp
    times = t0 + dt * np.arange(int(np.floor(traj.duration / dt + 1e-12)) + 1)
    src_t = np.array([fr.timestamp for fr in traj.frames])
    out = []
    for t in times:
        j = int(np.searchsorted(src_t, t, side="right")) - 1
        j = min(max(j, 0), len(src_t) - 2)
        a, b = traj.frames[j], traj.frames[j + 1]
        u = (t - a.timestamp) / (b.timestamp - a.timestamp)
        u = min(max(u, 0.0), 1.0)
        out.append(
            ReferenceFrame(
                timestamp=float(t),
                wrist=Pose(
                    (1 - u) * a.wrist.position + u * b.wrist.position,
                    quat_normalize(quat_slerp(a.wrist.quat, b.wrist.quat, u)),
                ),
                keypoints=(1 - u) * a.keypoints + u * b.keypoints,
                levels=a.levels,
            )
        )
    return ReferenceTrajectory(out, source_id=traj.source_id + f"@dt={dt:g}")


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class ReachGraspParams:
    approach_distance: float = 0.10   # m, wrist travel during reach
    approach_duration: float = 1.0    # s
    close_duration: float = 1.0       # s
    close_fraction: float = 0.7       # fraction of the joint range closed at the end
    lift_height: float = 0.0          # m, optional vertical lift after closing
    lift_duration: float = 1.0        # s
    hold_duration: float = 0.0        # s, stationary tail after the lift
    frame_rate: float = 20.0          # frames per second


def _minimum_jerk(u: np.ndarray) -> np.ndarray:
    # classic 5th-order profile: 0->1 with zero boundary vel/acc
    return 10 * u**3 - 15 * u**4 + 6 * u**5


def synthesize_reach_grasp(
    spec: HandSpec,
    seed: int,
    params: ReachGraspParams = ReachGraspParams(),
    start_wrist: Optional[Pose] = None,
) -> ReferenceTrajectory:
    """Minimum-jerk wrist approach plus coordinated finger closing,
    emitting keypoints through the hand model's forward kinematics so
    every frame is reachable by construction."""
    rng = np.random.default_rng(seed)
    start = start_wrist if start_wrist is not None else Pose.identity()

    # seeded approach direction: mostly horizontal, slightly downward
    theta = rng.uniform(0, 2 * np.pi)
    direction = np.array([np.cos(theta), np.sin(theta), rng.uniform(-0.4, -0.1)])
    direction /= np.linalg.norm(direction)
    travel = params.approach_distance * direction
    traj, _ = _generate(spec, start, travel, params, f"synthetic-reach-grasp-{seed}")
    return traj


def plan_reach_grasp(
    spec: HandSpec,
    start_wrist: Pose,
    wrist_goal_position,
    params: ReachGraspParams = ReachGraspParams(),
):
    """Deterministic reach plan toward an explicit wrist goal.

    Returns (trajectory, joint profile (T, 18)) — unlike the seeded
    synthesizer, the planned finger joints are exposed so controllers can
    track the plan in joint space.
    """
    travel = np.asarray(wrist_goal_position, dtype=np.float64) - start_wrist.position
    return _generate(spec, start_wrist, travel, params, "planned-reach-grasp")


def _generate(
    spec: HandSpec,
    start: Pose,
    travel: np.ndarray,
    params: ReachGraspParams,
    source_id: str,
):
    lims = spec.joint_limits()
    mid = 0.5 * (lims[:, 0] + lims[:, 1])
    open_q = np.zeros(18)
    closed_q = open_q + params.close_fraction * (mid - open_q) * 2.0
    closed_q = np.clip(closed_q, lims[:, 0], lims[:, 1])

    total = params.approach_duration + params.close_duration
    lift_end = total
    if params.lift_height > 0:
        total += params.lift_duration
        lift_end = total
    total += params.hold_duration
    n_frames = max(int(round(total * params.frame_rate)) + 1, 2)
    frames = []
    joint_profile = np.empty((n_frames, 18))
    for i in range(n_frames):
        t = total * i / (n_frames - 1)
        if t <= params.approach_duration:
            u = _minimum_jerk(np.array(t / params.approach_duration))
            wrist_pos = start.position + float(u) * travel
            q = open_q
        elif t <= params.approach_duration + params.close_duration:
            u = _minimum_jerk(np.array((t - params.approach_duration) / params.close_duration))
            wrist_pos = start.position + travel
            q = open_q + float(u) * (closed_q - open_q)
        elif params.lift_height > 0 and t <= lift_end:
            u = _minimum_jerk(
                np.array(
                    (t - params.approach_duration - params.close_duration)
                    / params.lift_duration
                )
            )
            wrist_pos = start.position + travel + np.array([0, 0, float(u) * params.lift_height])
            q = closed_q
        else:
            lift = params.lift_height if params.lift_height > 0 else 0.0
            wrist_pos = start.position + travel + np.array([0, 0, lift])
            q = closed_q
        joints = JointState(positions=np.concatenate([np.zeros(NUM_WRIST_DOF), q]))
        wrist = Pose(wrist_pos, start.quat)
        kp, _ = forward_kinematics(spec, joints, wrist)
        frames.append(ReferenceFrame(t, wrist, kp.positions, kp.levels))
        joint_profile[i] = q
    return ReferenceTrajectory(frames, source_id=source_id), joint_profile
