"""Deterministic kinematic grasping environment.

There are no rigid-body dynamics: the object rests on the table until an
opposition-style contact test attaches it to the hand, after which it
follows the wrist as a rigid body. Every quantity the rewards and metrics
consume (poses, keypoints, distances) is available exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    PointCloud,
    Pose,
    farthest_point_sample,
    quat_from_axis_angle,
    transform_cloud,
)
from .hand import (
    HandSpec,
    JointState,
    apply_action,
    default_hand_spec,
    forward_kinematics,
)
from .rewards import RewardBreakdown, TeacherWeights, teacher_reward

__all__ = [
    "EnvConfig",
    "ObjectState",
    "RobotState",
    "Observation",
    "StepResult",
    "GraspEnv",
    "BatchedGraspEnv",
    "update_attachment",
    "build_student_cloud",
    "default_camera_rig",
    "EpisodeTrace",
    "EnvError",
    "LifecycleError",
]


class EnvError(ValueError):
    pass


class LifecycleError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    max_steps: int = 200
    success_radius: float = 0.05        # alpha_s, m
    contact_radius: float = 0.02        # m
    goal_offset: Tuple[float, float, float] = (0.0, 0.0, 0.20)
    num_envs: int = 64
    rng_seed: int = 0
    cloud_size: int = 1024
    dt: float = 0.05
    reset_offset_range: float = 0.02    # planar scatter of the object at reset, m
    hand_start: Tuple[float, float, float] = (0.0, -0.16, 0.12)
    p_dex_mode: str = "wrist"           # or "fingertip_mean"

    def __post_init__(self):
        if self.max_steps <= 0:
            raise EnvError("max_steps must be > 0")
        if self.success_radius <= 0 or self.contact_radius <= 0:
            raise EnvError("radii must be > 0")
        if self.cloud_size <= 0:
            raise EnvError("cloud_size must be > 0")
        if self.p_dex_mode not in ("wrist", "fingertip_mean"):
            raise EnvError(f"unknown p_dex_mode {self.p_dex_mode!r}")


@dataclass
class ObjectState:
    pose: Pose
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attached: bool = False


@dataclass
class RobotState:
    wrist: Pose
    joints: JointState
    fingertips: List[np.ndarray]


@dataclass
class Observation:
    robot: RobotState
    object: Optional[ObjectState]
    cloud: PointCloud
    negative: PointCloud
    variant: str  # "teacher" | "student"

    def __post_init__(self):
        if self.variant == "teacher" and self.object is None:
            raise EnvError("teacher observation requires object state")
        if self.variant == "student" and self.object is not None:
            raise EnvError("student observation must not carry object state")


@dataclass
class StepResult:
    teacher: Observation
    student: Observation
    reward_breakdown: RewardBreakdown
    done: bool
    success: bool


def default_camera_rig() -> List[Pose]:
    """Five cameras around the table; positions follow the published rig,
    all focused at (0, 0, 0.15). Only positions matter for culling."""
    positions = [
        (0.0, 0.0, 0.55),
        (0.5, 0.0, 0.15),
        (-0.5, 0.0, 0.15),
        (0.0, 0.5, 0.15),
        (0.0, -0.5, 0.15),
    ]
    return [Pose(position=np.array(p)) for p in positions]


def update_attachment(
    fingertips: Sequence[np.ndarray],
    object_cloud_world: PointCloud,
    previously_attached: bool,
    contact_radius: float,
) -> bool:
    """Opposition-style contact rule with hysteresis.

    Attach: at least 2 fingertips within contact_radius of the cloud and
    the two closest touching tips subtend more than 90 degrees at the
    object centroid (an opposing grip, not two fingers pressing the same
    side). Detach: fewer than 2 tips within 1.5 * contact_radius.
    """
    if len(fingertips) < 2:
        raise EnvError("need at least 2 fingertips")
    pts = object_cloud_world.points
    centroid = pts.mean(axis=0)
    tips = np.asarray(fingertips)
    dists = np.min(
        np.linalg.norm(pts[None, :, :] - tips[:, None, :], axis=2), axis=1
    )
    if previously_attached:
        return int(np.sum(dists < 1.5 * contact_radius)) >= 2
    touching = np.nonzero(dists < contact_radius)[0]
    if len(touching) < 2:
        return False
    order = touching[np.argsort(dists[touching], kind="stable")]
    a = tips[order[0]] - centroid
    b = tips[order[1]] - centroid
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return False
    return float(np.dot(a, b)) < 0.0  # angle > 90 degrees


def _fill_to_size(cloud: PointCloud, size: int) -> PointCloud:
    n = len(cloud)
    if n == size:
        return cloud
    if n > size:
        return farthest_point_sample(cloud, size, seed_index=0)
    reps = -(-size // n)  # pad by repetition
    idx = np.tile(np.arange(n), reps)[:size]
    return cloud.take(idx)


def build_student_cloud(
    object_cloud_world: PointCloud,
    hand_points: PointCloud,
    camera_rig: Sequence[Pose],
    cloud_size: int,
) -> PointCloud:
    """Camera-visible subset of the scene cloud, resized to cloud_size.

    Visibility uses centroid-normal culling: a point is visible to a
    camera iff (point - centroid) . (camera - point) > 0.
    """
    if not camera_rig:
        raise EnvError("camera rig must be non-empty")
    pts = np.vstack([object_cloud_world.points, hand_points.points])
    centroid = pts.mean(axis=0)
    visible = np.zeros(len(pts), dtype=bool)
    for cam in camera_rig:
        visible |= np.einsum(
            "ij,ij->i", pts - centroid, cam.position[None, :] - pts
        ) > 0.0
    if not np.any(visible):
        raise EnvError("no visible points under the camera rig")
    return _fill_to_size(PointCloud(pts[visible]), cloud_size)


def _scene_cloud(
    object_cloud_world: PointCloud, hand_points: PointCloud, cloud_size: int
) -> PointCloud:
    return _fill_to_size(
        PointCloud(np.vstack([object_cloud_world.points, hand_points.points])),
        cloud_size,
    )


@dataclass
class TraceRecord:
    step: int
    action: List[float]
    reward: dict
    object_pose: List[float]
    success: bool


class EpisodeTrace:
    """Line-delimited JSON episode record, for debugging and golden tests."""

    def __init__(self):
        self.records: List[TraceRecord] = []

    def append(self, step, action, breakdown: RewardBreakdown, pose: Pose, success: bool):
        self.records.append(
            TraceRecord(
                step=int(step),
                action=[float(a) for a in action],
                reward=breakdown.as_dict(),
                object_pose=[float(v) for v in np.concatenate([pose.position, pose.quat])],
                success=bool(success),
            )
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.__dict__, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "EpisodeTrace":
        trace = EpisodeTrace()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                trace.records.append(TraceRecord(**json.loads(line)))
        return trace


class GraspEnv:
    """Single-environment state machine. One owner at a time; batching is
    a list of independent instances."""

    def __init__(
        self,
        config: EnvConfig,
        object_cloud: PointCloud,
        negative_cloud: Optional[PointCloud] = None,
        hand_spec: Optional[HandSpec] = None,
        weights: Optional[TeacherWeights] = None,
        camera_rig: Optional[Sequence[Pose]] = None,
    ):
        if len(object_cloud) == 0:
            raise EnvError("object cloud is empty")
        self.config = config
        # canonical frame: centroid at origin so the pose position tracks p_obj
        centroid = object_cloud.points.mean(axis=0)
        self.object_canonical = PointCloud(object_cloud.points - centroid, object_cloud.labels)
        if negative_cloud is not None and len(negative_cloud) > 0:
            self.negative_canonical = PointCloud(negative_cloud.points - centroid)
        else:
            self.negative_canonical = PointCloud(np.zeros((0, 3)))
        self.hand_spec = hand_spec if hand_spec is not None else default_hand_spec()
        self.weights = weights if weights is not None else TeacherWeights(
            alpha_s=config.success_radius
        )
        self.camera_rig = list(camera_rig) if camera_rig is not None else default_camera_rig()
        self._started = False

    # -- lifecycle ----------------------------------------------------------

    def reset(self, initial_pose_seed: int) -> Tuple[Observation, Observation]:
        rng = np.random.default_rng(self.config.rng_seed + initial_pose_seed)
        yaw = float(rng.uniform(0.0, 2.0 * np.pi))
        offset = rng.uniform(-self.config.reset_offset_range,
                             self.config.reset_offset_range, size=2)
        quat = quat_from_axis_angle([0, 0, 1], yaw)
        rotated = transform_cloud(self.object_canonical, Pose(quat=quat))
        z_rest = -float(np.min(rotated.points[:, 2]))  # rest on the table plane
        self.object_pose = Pose(np.array([offset[0], offset[1], z_rest]), quat)
        self.object_state = ObjectState(pose=self.object_pose)
        self.goal = self.object_pose.position + np.asarray(self.config.goal_offset)
        self.joints = JointState()
        self.wrist = Pose(position=np.asarray(self.config.hand_start))
        self.attach_rel: Optional[Pose] = None
        self.step_count = 0
        self.done = False
        self.success = False
        self._started = True
        return self._observe()

    def step(self, action: np.ndarray) -> StepResult:
        if not self._started:
            raise LifecycleError("step before reset")
        if self.done:
            raise LifecycleError("step on a finished environment")
        self.step_count += 1
        old_obj = self.object_pose

        self.joints, self.wrist = apply_action(
            self.hand_spec, self.joints, self.wrist, action, self.config.dt
        )
        keypoints, fingertips = forward_kinematics(self.hand_spec, self.joints, self.wrist)

        # attached object rigidly follows the wrist
        if self.attach_rel is not None:
            self.object_pose = self.wrist.compose(self.attach_rel)
        obj_world = transform_cloud(self.object_canonical, self.object_pose)

        attached = update_attachment(
            fingertips, obj_world, self.attach_rel is not None, self.config.contact_radius
        )
        if attached and self.attach_rel is None:
            self.attach_rel = self.wrist.inverse().compose(self.object_pose)
        elif not attached:
            self.attach_rel = None

        lin_vel = (self.object_pose.position - old_obj.position) / self.config.dt
        self.object_state = ObjectState(
            pose=self.object_pose, linear_velocity=lin_vel, attached=attached
        )

        neg_world = (
            transform_cloud(self.negative_canonical, self.object_pose)
            if len(self.negative_canonical)
            else self.negative_canonical
        )
        if self.config.p_dex_mode == "wrist":
            p_dex = self.wrist.position
        else:
            p_dex = np.mean(np.asarray(fingertips), axis=0)
        breakdown = teacher_reward(
            p_dex, self.object_pose.position, self.goal, fingertips, neg_world, self.weights
        )
        goal_dist = float(np.linalg.norm(self.object_pose.position - self.goal))
        self.success = goal_dist < self.config.success_radius
        self.done = self.success or self.step_count >= self.config.max_steps

        teacher, student = self._observe(keypoints, fingertips, obj_world, neg_world)
        return StepResult(
            teacher=teacher,
            student=student,
            reward_breakdown=breakdown,
            done=self.done,
            success=self.success,
        )

    # -- observations -------------------------------------------------------

    def _observe(self, keypoints=None, fingertips=None, obj_world=None, neg_world=None):
        if keypoints is None:
            keypoints, fingertips = forward_kinematics(self.hand_spec, self.joints, self.wrist)
        if obj_world is None:
            obj_world = transform_cloud(self.object_canonical, self.object_pose)
        if neg_world is None:
            neg_world = (
                transform_cloud(self.negative_canonical, self.object_pose)
                if len(self.negative_canonical)
                else self.negative_canonical
            )
        hand_pts = PointCloud(keypoints.positions)
        robot = RobotState(wrist=self.wrist, joints=self.joints.copy(), fingertips=fingertips)
        teacher_cloud = _scene_cloud(obj_world, hand_pts, self.config.cloud_size)
        student_cloud = build_student_cloud(
            obj_world, hand_pts, self.camera_rig, self.config.cloud_size
        )
        teacher = Observation(
            robot=robot,
            object=self.object_state,
            cloud=teacher_cloud,
            negative=neg_world,
            variant="teacher",
        )
        student = Observation(
            robot=robot, object=None, cloud=student_cloud, negative=neg_world,
            variant="student",
        )
        return teacher, student


class BatchedGraspEnv:
    """Independent environments stepped together; env i is seeded with
    reset_seed + i so batch results match single-env runs exactly."""

    def __init__(self, make_env, num_envs: int):
        self.envs: List[GraspEnv] = [make_env(i) for i in range(num_envs)]

    def reset(self, base_seed: int):
        return [env.reset(base_seed + i) for i, env in enumerate(self.envs)]

    def step(self, actions: Sequence[np.ndarray]) -> List[StepResult]:
        if len(actions) != len(self.envs):
            raise EnvError("actions length != num_envs")
        return [env.step(a) for env, a in zip(self.envs, actions)]
