"""Simplified 24-DOF dexterous hand: joint layout, limits, forward
kinematics to imitation keypoints and fingertips, and the normalized
action-to-joint mapping.

Joint channel order: 0..5 are the wrist (tx, ty, tz, rx, ry, rz), 6..23
are the finger joints in finger order thumb, index, middle, ring, little.
Finger DOF split: thumb 5, index/middle/ring 3 each, little 4 (18 total).

Keypoints: each finger contributes (base, middle, tip), 15 in all,
ordered finger-major. Level-1 keypoints are the bases and tips, level-2
the middles; the levels live in the hand spec file and drive the
imitation reward decay rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .geometry import Pose, quat_from_axis_angle, quat_multiply, quat_normalize

__all__ = [
    "FingerSpec",
    "HandSpec",
    "JointState",
    "HandKeypoints",
    "load_hand_spec",
    "save_hand_spec",
    "default_hand_spec",
    "forward_kinematics",
    "apply_action",
    "NUM_DOF",
    "NUM_WRIST_DOF",
    "NUM_FINGER_DOF",
]

NUM_WRIST_DOF = 6
NUM_FINGER_DOF = 18
NUM_DOF = NUM_WRIST_DOF + NUM_FINGER_DOF

_AXES = {
    "x": np.array([1.0, 0.0, 0.0]),
    "y": np.array([0.0, 1.0, 0.0]),
    "z": np.array([0.0, 0.0, 1.0]),
}


class HandError(ValueError):
    pass


@dataclass(frozen=True)
class FingerSpec:
    name: str
    base: np.ndarray                  # attachment point in the wrist frame
    base_yaw: float                   # rotation of the whole chain about palm z
    axes: Tuple[str, ...]             # per-joint rotation axis (local frame)
    link_lengths: Tuple[float, ...]   # meters; link i follows joint i
    limits: Tuple[Tuple[float, float], ...]
    keypoint_joints: Tuple[int, int, int]   # joint index whose link end is (base, middle, tip)
    keypoint_levels: Tuple[int, int, int]

    def __post_init__(self):
        n = len(self.axes)
        if not (len(self.link_lengths) == len(self.limits) == n):
            raise HandError(f"finger {self.name}: inconsistent chain arrays")
        for j in self.keypoint_joints:
            if not (0 <= j < n):
                raise HandError(f"finger {self.name}: keypoint joint {j} out of range")


@dataclass(frozen=True)
class HandSpec:
    fingers: Tuple[FingerSpec, ...]
    wrist_translation_cap: float = 0.01   # m per step at |action| = 1
    wrist_rotation_cap: float = 0.05      # rad per step at |action| = 1
    tracking_rate: float = 0.5            # fraction of (target - position) applied per step
    kp: float = 10.0                      # torque proxy gain
    rest_keypoints: Optional[np.ndarray] = None  # golden FK table, wrist frame

    def __post_init__(self):
        ndof = sum(len(f.axes) for f in self.fingers)
        if ndof != NUM_FINGER_DOF:
            raise HandError(f"finger DOF count {ndof} != {NUM_FINGER_DOF}")
        if len(self.fingers) != 5:
            raise HandError("expected 5 fingers")

    @property
    def num_keypoints(self) -> int:
        return 3 * len(self.fingers)

    @property
    def keypoint_levels(self) -> np.ndarray:
        return np.array([lv for f in self.fingers for lv in f.keypoint_levels])

    @property
    def fingertip_keypoint_indices(self) -> np.ndarray:
        """Indices into the keypoint list of the 5 fingertips (K_c)."""
        return np.arange(2, self.num_keypoints, 3)

    def joint_limits(self) -> np.ndarray:
        """(18, 2) finger joint limits in channel order."""
        return np.array([lim for f in self.fingers for lim in f.limits])


@dataclass
class JointState:
    """24-channel joint bookkeeping. Wrist channels store cumulative
    commanded translation (m) / rotation (rad) increments; finger channels
    store joint positions (rad)."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros(NUM_DOF))
    velocities: np.ndarray = field(default_factory=lambda: np.zeros(NUM_DOF))
    torques: np.ndarray = field(default_factory=lambda: np.zeros(NUM_DOF))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(NUM_DOF)
        self.velocities = np.asarray(self.velocities, dtype=np.float64).reshape(NUM_DOF)
        self.torques = np.asarray(self.torques, dtype=np.float64).reshape(NUM_DOF)
        if not (
            np.all(np.isfinite(self.positions))
            and np.all(np.isfinite(self.velocities))
            and np.all(np.isfinite(self.torques))
        ):
            raise HandError("non-finite joint state")

    def copy(self) -> "JointState":
        return JointState(self.positions.copy(), self.velocities.copy(), self.torques.copy())


@dataclass
class HandKeypoints:
    positions: np.ndarray  # (F, 3)
    levels: np.ndarray     # (F,)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.levels = np.asarray(self.levels, dtype=np.int64).reshape(-1)
        if len(self.levels) != len(self.positions):
            raise HandError("keypoint levels length mismatch")


def _axis_rotation(axis: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def _finger_chain_points(finger: FingerSpec, q: np.ndarray) -> np.ndarray:
    """Positions after each joint's link, in the wrist frame. (n_joints, 3)."""
    R = _axis_rotation("z", finger.base_yaw)
    p = finger.base.copy()
    out = np.empty((len(finger.axes), 3))
    for i, axis in enumerate(finger.axes):
        R = R @ _axis_rotation(axis, q[i])
        p = p + R @ np.array([0.0, finger.link_lengths[i], 0.0])
        out[i] = p
    return out


def clamp_to_limits(spec: HandSpec, positions: np.ndarray) -> np.ndarray:
    out = positions.copy()
    lims = spec.joint_limits()
    out[NUM_WRIST_DOF:] = np.clip(out[NUM_WRIST_DOF:], lims[:, 0], lims[:, 1])
    return out


def forward_kinematics(
    spec: HandSpec, joints: JointState, wrist: Pose
) -> Tuple[HandKeypoints, List[np.ndarray]]:
    """World-frame imitation keypoints and fingertip positions (ordered K_c).

    Finger joint positions are clamped to limits before evaluation.
    """
    q = clamp_to_limits(spec, joints.positions)[NUM_WRIST_DOF:]
    kp_local = np.empty((spec.num_keypoints, 3))
    tips_local = np.empty((len(spec.fingers), 3))
    off = 0
    for fi, finger in enumerate(spec.fingers):
        n = len(finger.axes)
        chain = _finger_chain_points(finger, q[off : off + n])
        for ki, joint_idx in enumerate(finger.keypoint_joints):
            kp_local[3 * fi + ki] = chain[joint_idx]
        tips_local[fi] = chain[finger.keypoint_joints[2]]
        off += n
    kp_world = wrist.apply(kp_local)
    tips_world = wrist.apply(tips_local)
    return HandKeypoints(kp_world, spec.keypoint_levels), [t for t in tips_world]


def apply_action(
    spec: HandSpec,
    joints: JointState,
    wrist: Pose,
    action: np.ndarray,
    dt: float,
) -> Tuple[JointState, Pose]:
    """One control step under a normalized action in [-1, 1]^24.

    Finger channels map linearly to position targets inside the joint
    limits; the joint moves a ``tracking_rate`` fraction toward its target
    each step. Wrist channels command bounded per-step pose deltas along
    the world axes. Velocities are (new - old)/dt; torques use the
    proportional proxy kp * (target - position).
    """
    action = np.asarray(action, dtype=np.float64).reshape(NUM_DOF)
    if np.any(np.abs(action) > 1.0) or not np.all(np.isfinite(action)):
        raise HandError("action channel outside [-1, 1]")
    if dt <= 0:
        raise HandError("dt must be positive")

    old = clamp_to_limits(spec, joints.positions)
    lims = spec.joint_limits()

    delta = np.empty(NUM_DOF)
    target_err = np.empty(NUM_DOF)

    # wrist: bounded world-axis deltas
    t_delta = spec.wrist_translation_cap * action[0:3]
    r_delta = spec.wrist_rotation_cap * action[3:6]
    delta[0:3] = t_delta
    delta[3:6] = r_delta
    target_err[0:6] = delta[0:6]

    # fingers: linear map to targets, first-order tracking
    lo, hi = lims[:, 0], lims[:, 1]
    targets = lo + 0.5 * (action[NUM_WRIST_DOF:] + 1.0) * (hi - lo)
    target_err[NUM_WRIST_DOF:] = targets - old[NUM_WRIST_DOF:]
    delta[NUM_WRIST_DOF:] = spec.tracking_rate * target_err[NUM_WRIST_DOF:]

    # Velocity is the primary quantity: positions advance by exactly vel*dt,
    # so new == old + velocities*dt holds bit-for-bit. Rounding of vel*dt can
    # push a limit-touching joint past its bound by a ULP; back the velocity
    # off until the result is back inside.
    velocities = clamp_to_limits(spec, old + delta) - old
    velocities /= dt
    new_positions = old + velocities * dt
    lims_full = np.empty((NUM_DOF, 2))
    lims_full[:NUM_WRIST_DOF] = [-np.inf, np.inf]
    lims_full[NUM_WRIST_DOF:] = lims
    for i in np.nonzero(
        (new_positions < lims_full[:, 0]) | (new_positions > lims_full[:, 1])
    )[0]:
        while not (lims_full[i, 0] <= old[i] + velocities[i] * dt <= lims_full[i, 1]):
            velocities[i] = np.nextafter(velocities[i], 0.0)
        new_positions[i] = old[i] + velocities[i] * dt
    torques = spec.kp * target_err

    new_wrist_pos = wrist.position + t_delta
    q = wrist.quat
    for axis_idx, axis_name in ((0, "x"), (1, "y"), (2, "z")):
        if r_delta[axis_idx] != 0.0:
            q = quat_multiply(quat_from_axis_angle(_AXES[axis_name], r_delta[axis_idx]), q)
    new_wrist = Pose(new_wrist_pos, quat_normalize(q))

    return JointState(new_positions, velocities, torques), new_wrist


# ---------------------------------------------------------------------------
# hand spec file: line-based key-value document


def save_hand_spec(spec: HandSpec, path) -> None:
    lines = ["format hand-spec 1"]
    for key in ("wrist_translation_cap", "wrist_rotation_cap", "tracking_rate", "kp"):
        lines.append(f"{key} {float(getattr(spec, key))!r}")
    for f in spec.fingers:
        lines.append(f"finger {f.name}")
        lines.append(f"base {f.name} {float(f.base[0])!r} {float(f.base[1])!r} {float(f.base[2])!r} yaw {float(f.base_yaw)!r}")
        for ax, ln, (lo, hi) in zip(f.axes, f.link_lengths, f.limits):
            lines.append(f"joint {f.name} {ax} {float(ln)!r} {float(lo)!r} {float(hi)!r}")
        for name, j, lv in zip(("base", "middle", "tip"), f.keypoint_joints, f.keypoint_levels):
            lines.append(f"keypoint {f.name} {name} {j} level {lv}")
    if spec.rest_keypoints is not None:
        for fi, f in enumerate(spec.fingers):
            for ki, name in enumerate(("base", "middle", "tip")):
                p = spec.rest_keypoints[3 * fi + ki]
                lines.append(f"rest {f.name} {name} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_hand_spec(path) -> HandSpec:
    scalars = {}
    order: List[str] = []
    bases, yaws, chains, limits, kpj, kpl = {}, {}, {}, {}, {}, {}
    rest = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "format":
                if parts[1:] != ["hand-spec", "1"]:
                    raise HandError(f"unsupported format: {line}")
            elif kind in ("wrist_translation_cap", "wrist_rotation_cap", "tracking_rate", "kp"):
                scalars[kind] = float(parts[1])
            elif kind == "finger":
                order.append(parts[1])
                chains[parts[1]] = []
                limits[parts[1]] = []
                kpj[parts[1]] = {}
                kpl[parts[1]] = {}
            elif kind == "base":
                bases[parts[1]] = np.array([float(v) for v in parts[2:5]])
                yaws[parts[1]] = float(parts[6])
            elif kind == "joint":
                chains[parts[1]].append((parts[2], float(parts[3])))
                limits[parts[1]].append((float(parts[4]), float(parts[5])))
            elif kind == "keypoint":
                kpj[parts[1]][parts[2]] = int(parts[3])
                kpl[parts[1]][parts[2]] = int(parts[5])
            elif kind == "rest":
                rest[(parts[1], parts[2])] = [float(v) for v in parts[3:6]]
            else:
                raise HandError(f"unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            raise HandError(f"{path}:{lineno}: {exc}") from exc

    fingers = []
    for name in order:
        axes, lens = zip(*chains[name])
        fingers.append(
            FingerSpec(
                name=name,
                base=bases[name],
                base_yaw=yaws[name],
                axes=axes,
                link_lengths=lens,
                limits=tuple(limits[name]),
                keypoint_joints=tuple(kpj[name][k] for k in ("base", "middle", "tip")),
                keypoint_levels=tuple(kpl[name][k] for k in ("base", "middle", "tip")),
            )
        )
    rest_table = None
    if rest:
        rest_table = np.array(
            [rest[(name, k)] for name in order for k in ("base", "middle", "tip")]
        )
    return HandSpec(fingers=tuple(fingers), rest_keypoints=rest_table, **scalars)


def _builtin_fingers() -> Tuple[FingerSpec, ...]:
    flex = (-1.6, 0.0)  # curls toward -z with fingers along +y, palm-down grasping
    return (
        FingerSpec(
            "thumb",
            base=np.array([0.035, 0.010, 0.0]),
            base_yaw=-1.1,
            axes=("z", "x", "x", "z", "x"),
            link_lengths=(0.0, 0.045, 0.035, 0.0, 0.030),
            limits=((-0.6, 0.6), (-1.5, 0.0), flex, (-0.3, 0.3), flex),
            keypoint_joints=(1, 2, 4),
            keypoint_levels=(1, 2, 1),
        ),
        FingerSpec(
            "index",
            base=np.array([0.030, 0.045, 0.0]),
            base_yaw=0.0,
            axes=("x", "x", "x"),
            link_lengths=(0.045, 0.030, 0.022),
            limits=(flex, (-1.7, 0.0), flex),
            keypoint_joints=(0, 1, 2),
            keypoint_levels=(1, 2, 1),
        ),
        FingerSpec(
            "middle",
            base=np.array([0.010, 0.048, 0.0]),
            base_yaw=0.0,
            axes=("x", "x", "x"),
            link_lengths=(0.048, 0.032, 0.024),
            limits=(flex, (-1.7, 0.0), flex),
            keypoint_joints=(0, 1, 2),
            keypoint_levels=(1, 2, 1),
        ),
        FingerSpec(
            "ring",
            base=np.array([-0.010, 0.045, 0.0]),
            base_yaw=0.0,
            axes=("x", "x", "x"),
            link_lengths=(0.044, 0.030, 0.022),
            limits=(flex, (-1.7, 0.0), flex),
            keypoint_joints=(0, 1, 2),
            keypoint_levels=(1, 2, 1),
        ),
        FingerSpec(
            "little",
            base=np.array([-0.030, 0.040, 0.0]),
            base_yaw=0.0,
            axes=("z", "x", "x", "x"),
            link_lengths=(0.0, 0.036, 0.024, 0.018),
            limits=((-0.4, 0.4), flex, (-1.7, 0.0), flex),
            keypoint_joints=(1, 2, 3),
            keypoint_levels=(1, 2, 1),
        ),
    )


def default_hand_spec() -> HandSpec:
    """The bundled simplified hand, with its golden rest-pose table."""
    path = Path(__file__).parent / "data" / "hand_simplified_24dof.txt"
    if path.exists():
        return load_hand_spec(path)
    # bootstrap path used to (re)generate the data file
    spec = HandSpec(fingers=_builtin_fingers())
    kp, _ = forward_kinematics(spec, JointState(), Pose.identity())
    return replace(spec, rest_keypoints=kp.positions)
