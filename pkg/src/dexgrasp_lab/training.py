"""Training machinery: PPO with manual gradients, the reference-tracking
pretraining task, residual training over a frozen base actor, and DAgger
distillation.

Stage layout mirrors the two-stage pipeline: a base policy learns to
track reference reach-and-grasp trajectories (dense keypoint-imitation
reward); a residual policy is then trained on top of the frozen base
against the grasping reward; finally the teacher's composed behaviour is
distilled into a student that only sees camera-visible state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .env import GraspEnv
from .geometry import Pose, quat_conjugate, quat_multiply
from .hand import (
    NUM_DOF,
    NUM_WRIST_DOF,
    HandKeypoints,
    HandSpec,
    JointState,
    apply_action,
    forward_kinematics,
)
from .mlp import AdamState, MlpSpec, adam_step
from .policy import (
    PolicyParams,
    compose_residual,
    encode_observation,
    gaussian_log_prob,
    policy_backward,
    policy_forward,
    sample_action,
    value_backward,
    value_forward,
)
from .rewards import (
    ImitationWeights,
    finger_imitation_reward,
    imitation_total,
    smoothness_reward,
)
from .trajectory import ReachGraspParams, ReferenceTrajectory, plan_reach_grasp

__all__ = [
    "PpoConfig",
    "RolloutBatch",
    "TrainError",
    "NumericFailure",
    "ppo_clip_objective",
    "gae",
    "ppo_update",
    "ImitationTask",
    "imitation_features",
    "imitation_obs_dim",
    "train_imitation",
    "evaluate_imitation",
    "grasp_plan_tasks",
    "pinch_midpoint",
    "BaseActor",
    "ScriptedActor",
    "train_residual",
    "evaluate_residual",
    "run_grasp_episode",
    "run_student_episode",
    "DistillDataset",
    "DaggerConfig",
    "dagger_round",
    "regress_student",
]


class TrainError(ValueError):
    pass


class NumericFailure(RuntimeError):
    """NaN/inf appeared in gradients; the update was aborted."""


@dataclass(frozen=True)
class PpoConfig:
    clip_epsilon: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 256
    entropy_coef: float = 0.0
    value_coef: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.clip_epsilon < 1.0):
            raise TrainError("clip_epsilon must be in (0, 1)")
        if not (0.0 < self.discount <= 1.0):
            raise TrainError("discount must be in (0, 1]")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise TrainError("gae_lambda must be in [0, 1]")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise TrainError("epochs and minibatch_size must be >= 1")


@dataclass
class RolloutBatch:
    obs: np.ndarray        # (N, D)
    actions: np.ndarray    # (N, A) raw (pre-clip) samples
    log_probs: np.ndarray  # (N,)
    rewards: np.ndarray    # (N,)
    values: np.ndarray     # (N,)
    dones: np.ndarray      # (N,)
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.obs)
        for name in ("actions", "log_probs", "rewards", "values", "dones"):
            if len(getattr(self, name)) != n:
                raise TrainError(f"batch field {name} length != {n}")

    def __len__(self) -> int:
        return len(self.obs)

    @staticmethod
    def concat(batches: Sequence["RolloutBatch"]) -> "RolloutBatch":
        if not batches:
            raise TrainError("no batches to concatenate")
        cat = lambda name: np.concatenate([np.asarray(getattr(b, name)) for b in batches])
        return RolloutBatch(
            obs=cat("obs"),
            actions=cat("actions"),
            log_probs=cat("log_probs"),
            rewards=cat("rewards"),
            values=cat("values"),
            dones=cat("dones"),
            advantages=cat("advantages") if batches[0].advantages is not None else None,
            returns=cat("returns") if batches[0].returns is not None else None,
        )


def ppo_clip_objective(ratio, advantage, epsilon: float):
    """Clipped surrogate min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    if np.any(ratio <= 0.0):
        raise TrainError("probability ratio must be positive")
    if not (0.0 < epsilon < 1.0):
        raise TrainError("epsilon must be in (0, 1)")
    advantage = np.asarray(advantage, dtype=np.float64)
    out = np.minimum(
        ratio * advantage,
        np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage,
    )
    return float(out) if out.ndim == 0 else out


def gae(rewards, values, dones, gamma: float, lam: float, bootstrap_value: float = 0.0):
    """Generalized advantage estimation over one trajectory segment.
    Returns (advantages, returns) with returns = advantages + values."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (len(rewards) == len(values) == len(dones)):
        raise TrainError("gae inputs must have equal length")
    T = len(rewards)
    adv = np.zeros(T)
    next_value = bootstrap_value
    next_adv = 0.0
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        next_adv = delta + gamma * lam * nonterminal * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericFailure("non-finite gradient; update aborted")


def ppo_update(
    policy: PolicyParams,
    value: PolicyParams,
    batch: RolloutBatch,
    cfg: PpoConfig,
    seed: int,
    policy_adam: Optional[AdamState] = None,
    value_adam: Optional[AdamState] = None,
):
    """One PPO optimization phase (cfg.epochs passes of minibatch updates).

    Operates on copies; on numeric failure the inputs are untouched and
    NumericFailure is raised. Returns (policy, value, stats).
    """
    if batch.advantages is None or batch.returns is None:
        raise TrainError("batch advantages/returns not populated (run gae first)")
    policy = policy.copy()
    value = value.copy()
    if policy_adam is None:
        policy_adam = AdamState.zeros(len(policy.params))
    if value_adam is None:
        value_adam = AdamState.zeros(len(value.params))

    adv = batch.advantages
    std = float(adv.std())
    adv = (adv - adv.mean()) / (std + 1e-8)

    rng = np.random.default_rng(seed)
    n = len(batch)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "clip_fraction": 0.0, "minibatches": 0}
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            m = len(idx)
            obs = batch.obs[idx]
            acts = batch.actions[idx]
            logp_old = batch.log_probs[idx]
            a_mb = adv[idx]
            ret = batch.returns[idx]

            mean, log_std, cache = policy_forward(policy, obs)
            var = np.exp(2.0 * log_std)
            diff = acts - mean
            logp = gaussian_log_prob(mean, log_std, acts)
            ratio = np.exp(logp - logp_old)
            surr1 = ratio * a_mb
            surr2 = np.clip(ratio, 1 - cfg.clip_epsilon, 1 + cfg.clip_epsilon) * a_mb
            obj = np.minimum(surr1, surr2)

            # subgradient of -mean(min(surr1, surr2)) through logp
            g = np.where(surr1 <= surr2, ratio * a_mb, 0.0)
            dlogp = -g / m
            dmean = dlogp[:, None] * (diff / var)
            dlog_std = (dlogp[:, None] * (diff**2 / var - 1.0)).sum(axis=0)
            dlog_std -= cfg.entropy_coef  # entropy bonus: dH/dlog_std = 1 per dim
            grads_pi = policy_backward(policy, cache, dmean, dlog_std)

            v, vcache = value_forward(value, obs)
            verr = v - ret
            grads_v = value_backward(value, vcache, cfg.value_coef * 2.0 * verr / m)

            _check_finite(grads_pi, grads_v)
            policy = PolicyParams(
                policy.role,
                policy.spec,
                adam_step(policy.params, grads_pi, policy_adam, lr=cfg.learning_rate),
            )
            value = PolicyParams(
                value.role,
                value.spec,
                adam_step(value.params, grads_v, value_adam, lr=cfg.learning_rate),
            )
            stats["policy_loss"] = float(-obj.mean())
            stats["value_loss"] = float(cfg.value_coef * np.mean(verr**2))
            stats["clip_fraction"] = float(np.mean(np.abs(ratio - 1.0) > cfg.clip_epsilon))
            stats["minibatches"] += 1
    return policy, value, stats


# ---------------------------------------------------------------------------
# stage 1: reference-tracking pretraining task


def imitation_obs_dim() -> int:
    # joints(24) + wrist pos(3) + wrist quat(4) + tracking hint(24)
    # + keypoint deltas(45) + phase(1)
    return 24 + 3 + 4 + 24 + 45 + 1


def _rotation_hint(current_quat, target_quat, cap: float) -> np.ndarray:
    rel = quat_multiply(target_quat, quat_conjugate(current_quat))
    if rel[0] < 0:
        rel = -rel
    v = rel[1:]
    s = np.linalg.norm(v)
    angle = 2.0 * np.arctan2(s, rel[0])
    axis = v / s if s > 1e-12 else np.zeros(3)
    return np.clip(angle * axis / cap, -1.0, 1.0)


def imitation_features(
    spec: HandSpec,
    joints: JointState,
    wrist: Pose,
    keypoints_now: np.ndarray,
    ref_frame,
    ref_joints: Optional[np.ndarray],
    phase: float,
) -> np.ndarray:
    """Observation for reference tracking: proprioception plus a per-channel
    tracking hint (the normalized action that would move each channel toward
    the reference) and the raw keypoint deltas."""
    hint = np.zeros(NUM_DOF)
    hint[0:3] = np.clip(
        (ref_frame.wrist.position - wrist.position) / spec.wrist_translation_cap,
        -1.0,
        1.0,
    )
    hint[3:6] = _rotation_hint(wrist.quat, ref_frame.wrist.quat, spec.wrist_rotation_cap)
    if ref_joints is not None:
        lims = spec.joint_limits()
        lo, hi = lims[:, 0], lims[:, 1]
        q = joints.positions[NUM_WRIST_DOF:]
        target = q + (ref_joints - q) / spec.tracking_rate
        hint[NUM_WRIST_DOF:] = np.clip(2.0 * (target - lo) / (hi - lo) - 1.0, -1.0, 1.0)
    delta = (ref_frame.keypoints - keypoints_now).reshape(-1)
    return np.concatenate(
        [joints.positions, wrist.position, wrist.quat, hint, delta, [phase]]
    )


class ImitationTask:
    """Single-trajectory tracking episode: the hand starts at the reference
    start state and is rewarded for keeping its keypoints on the reference."""

    def __init__(
        self,
        spec: HandSpec,
        traj: ReferenceTrajectory,
        joint_profile: Optional[np.ndarray],
        weights: ImitationWeights,
        dt: float,
    ):
        ts = np.array([f.timestamp for f in traj.frames])
        if not np.allclose(np.diff(ts), dt, atol=1e-9):
            raise TrainError("trajectory must be sampled at the control dt")
        if joint_profile is not None and len(joint_profile) != len(traj.frames):
            raise TrainError("joint profile length != frame count")
        self.spec = spec
        self.traj = traj
        self.joint_profile = joint_profile
        self.weights = weights
        self.dt = dt
        self.horizon = len(traj.frames) - 1

    def _obs(self) -> np.ndarray:
        nxt = min(self.t + 1, self.horizon)
        ref = self.traj.frames[nxt]
        qref = None if self.joint_profile is None else self.joint_profile[nxt]
        kp, _ = forward_kinematics(self.spec, self.joints, self.wrist)
        return imitation_features(
            self.spec, self.joints, self.wrist, kp.positions, ref, qref,
            self.t / self.horizon,
        )

    def reset(self) -> np.ndarray:
        f0 = self.traj.frames[0]
        q0 = np.zeros(18) if self.joint_profile is None else self.joint_profile[0]
        self.joints = JointState(positions=np.concatenate([np.zeros(NUM_WRIST_DOF), q0]))
        self.wrist = f0.wrist
        self.t = 0
        return self._obs()

    def step(self, action: np.ndarray):
        if self.t >= self.horizon:
            raise TrainError("step past the end of the reference")
        self.joints, self.wrist = apply_action(
            self.spec, self.joints, self.wrist, action, self.dt
        )
        self.t += 1
        ref = self.traj.frames[self.t]
        kp, _ = forward_kinematics(self.spec, self.joints, self.wrist)
        finger = finger_imitation_reward(
            kp, HandKeypoints(ref.keypoints, ref.levels), self.weights
        )
        smooth = smoothness_reward(self.joints, self.weights.w_smooth)
        total = imitation_total(finger, smooth, self.weights)
        done = self.t >= self.horizon
        return self._obs(), total, done, {"finger": finger, "smooth": smooth}


def grasp_plan_tasks(
    spec: HandSpec,
    seeds: Sequence[int],
    weights: ImitationWeights,
    dt: float = 0.05,
    hand_start=(0.0, -0.16, 0.12),
    object_z: float = 0.04,
    scatter: float = 0.02,
    params: Optional[ReachGraspParams] = None,
) -> List["ImitationTask"]:
    """Pretraining corpus whose references are exactly the reach-grasp
    plans the frozen base actor executes later: approach, close, lift,
    aimed at seeded object placements from the tabletop scatter."""
    if params is None:
        params = ReachGraspParams(
            approach_duration=1.0,
            close_duration=0.6,
            close_fraction=0.4,
            lift_height=0.25,
            lift_duration=1.5,
            frame_rate=1.0 / dt,
        )
    offset = pinch_midpoint(spec, params.close_fraction)
    start = Pose(position=np.asarray(hand_start, dtype=np.float64))
    tasks = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        obj = np.array([*rng.uniform(-scatter, scatter, size=2), object_z])
        traj, profile = plan_reach_grasp(spec, start, obj - offset, params)
        tasks.append(ImitationTask(spec, traj, profile, weights, dt))
    return tasks


def _collect_imitation(tasks, policy, value, cfg: PpoConfig, rng) -> RolloutBatch:
    batches = []
    for task in tasks:
        obs = task.reset()
        rows = {k: [] for k in ("obs", "actions", "log_probs", "rewards", "values", "dones")}
        done = False
        while not done:
            execa, raw, logp = sample_action(policy, obs, rng)
            v, _ = value_forward(value, obs)
            nobs, reward, done, _ = task.step(execa)
            rows["obs"].append(obs)
            rows["actions"].append(raw)
            rows["log_probs"].append(logp)
            rows["rewards"].append(reward)
            rows["values"].append(float(v))
            rows["dones"].append(float(done))
            obs = nobs
        batch = RolloutBatch(**{k: np.asarray(v) for k, v in rows.items()})
        batch.advantages, batch.returns = gae(
            batch.rewards, batch.values, batch.dones, cfg.discount, cfg.gae_lambda
        )
        batches.append(batch)
    return RolloutBatch.concat(batches)


def evaluate_imitation(policy: PolicyParams, tasks) -> float:
    """Mean per-step finger-tracking reward under the deterministic mean
    action."""
    total, steps = 0.0, 0
    for task in tasks:
        obs = task.reset()
        done = False
        while not done:
            mean, _, _ = policy_forward(policy, obs)
            obs, _, done, info = task.step(np.clip(mean, -1.0, 1.0))
            total += info["finger"]
            steps += 1
    return total / steps


def train_imitation(
    train_tasks,
    eval_tasks,
    policy: PolicyParams,
    value: PolicyParams,
    cfg: PpoConfig,
    iterations: int,
    seed: int,
    target: Optional[float] = None,
    callback: Optional[Callable] = None,
):
    """PPO on the tracking task. Returns (policy, value, history) where
    history rows are (iteration, eval finger reward)."""
    rng = np.random.default_rng(seed)
    p_adam = AdamState.zeros(len(policy.params))
    v_adam = AdamState.zeros(len(value.params))
    history: List[Tuple[int, float]] = []
    for it in range(iterations):
        batch = _collect_imitation(train_tasks, policy, value, cfg, rng)
        policy, value, stats = ppo_update(
            policy, value, batch, cfg, seed=seed * 10007 + it, policy_adam=p_adam,
            value_adam=v_adam,
        )
        score = evaluate_imitation(policy, eval_tasks)
        history.append((it, score))
        if callback is not None:
            callback(it, score, stats)
        if target is not None and score >= target:
            break
    return policy, value, history


# ---------------------------------------------------------------------------
# stage 2: frozen base actor + residual policy


def pinch_midpoint(spec: HandSpec, close_fraction: float) -> np.ndarray:
    """Wrist-frame midpoint of the thumb and index fingertips at the
    closed configuration a reach-grasp plan ends in. Placing the object
    centroid here puts those two tips in an opposing grip around it."""
    lims = spec.joint_limits()
    mid = 0.5 * (lims[:, 0] + lims[:, 1])
    closed = np.clip(close_fraction * mid * 2.0, lims[:, 0], lims[:, 1])
    joints = JointState(positions=np.concatenate([np.zeros(NUM_WRIST_DOF), closed]))
    _, tips = forward_kinematics(spec, joints, Pose.identity())
    return 0.5 * (np.asarray(tips[0]) + np.asarray(tips[1]))


class BaseActor:
    """Drives the frozen pretrained tracking policy along a reach-grasp
    plan aimed at the environment's object. The plan (and so the base
    behaviour) is recomputed at every episode reset.

    ``aim_offset`` shifts the grasp site away from the object centroid;
    it is expressed in the object's canonical frame (centroid at the
    origin) and rotates with the object, so e.g. a tool can be pinched
    at its handle regardless of how it landed on the table."""

    def __init__(
        self,
        policy: PolicyParams,
        spec: HandSpec,
        pinch_offset=None,
        plan_params: Optional[ReachGraspParams] = None,
        aim_offset=None,
    ):
        self.policy = policy
        self.spec = spec
        self.pinch_offset = (
            None if pinch_offset is None
            else np.asarray(pinch_offset, dtype=np.float64)
        )
        self.plan_params = plan_params
        self.aim_offset = (
            None if aim_offset is None
            else np.asarray(aim_offset, dtype=np.float64)
        )

    def reset(self, env: GraspEnv) -> None:
        params = self.plan_params
        if params is None:
            params = ReachGraspParams(
                approach_duration=1.0,
                close_duration=0.6,
                close_fraction=0.4,
                lift_height=0.25,
                lift_duration=1.5,
                frame_rate=1.0 / env.config.dt,
            )
        offset = self.pinch_offset
        if offset is None:
            offset = pinch_midpoint(self.spec, params.close_fraction)
        aim = env.object_pose.position
        if self.aim_offset is not None:
            aim = env.object_pose.apply(self.aim_offset)
        goal = aim - offset
        self.traj, self.joint_profile = plan_reach_grasp(self.spec, env.wrist, goal, params)
        self.t = 0

    def observe(self, env: GraspEnv) -> np.ndarray:
        """Tracking observation against the next plan frame; advances the
        plan cursor."""
        nxt = min(self.t + 1, len(self.traj.frames) - 1)
        ref = self.traj.frames[nxt]
        kp, _ = forward_kinematics(self.spec, env.joints, env.wrist)
        obs = imitation_features(
            self.spec, env.joints, env.wrist, kp.positions, ref,
            self.joint_profile[nxt], min(self.t / max(len(self.traj.frames) - 1, 1), 1.0),
        )
        self.t += 1
        return obs

    def action(self, env: GraspEnv) -> np.ndarray:
        mean, _, _ = policy_forward(self.policy, self.observe(env))
        return np.clip(mean, -1.0, 1.0)


class ScriptedActor(BaseActor):
    """Oracle plan executor: returns the embedded tracking hint verbatim,
    so the hand follows the reach-grasp plan exactly. Upper bound for the
    learned tracking policy and a known-good reference in evaluation."""

    _HINT = slice(NUM_DOF + 3 + 4, NUM_DOF + 3 + 4 + NUM_DOF)

    def __init__(self, spec: HandSpec, pinch_offset=None,
                 plan_params: Optional[ReachGraspParams] = None):
        super().__init__(None, spec, pinch_offset, plan_params)

    def action(self, env: GraspEnv) -> np.ndarray:
        return self.observe(env)[self._HINT].copy()


def run_grasp_episode(
    env: GraspEnv,
    base: Optional[BaseActor],
    residual: Optional[PolicyParams],
    seed: int,
    rng: Optional[np.random.Generator] = None,
    record: Optional[Callable] = None,
):
    """Roll one episode with base/residual composition (mean actions when
    rng is None). Returns a summary dict."""
    teacher_obs, _ = env.reset(seed)
    if base is not None:
        base.reset(env)
    steps = 0
    while True:
        base_a = base.action(env) if base is not None else np.zeros(NUM_DOF)
        if residual is not None:
            obs_vec = encode_observation(teacher_obs, "teacher")
            if rng is None:
                mean, _, _ = policy_forward(residual, obs_vec)
                res_a = np.clip(mean, -1.0, 1.0)
            else:
                res_a, _, _ = sample_action(residual, obs_vec, rng)
        else:
            res_a = np.zeros(NUM_DOF)
        action = compose_residual(base_a, res_a)
        result = env.step(action)
        steps += 1
        teacher_obs = result.teacher
        if record is not None:
            record(steps, action, result)
        if result.done:
            break
    return {
        "success": result.success,
        "steps": steps,
        "fingertips": result.teacher.robot.fingertips,
        "final_result": result,
    }


def run_student_episode(
    env: GraspEnv,
    base: Optional[BaseActor],
    student: PolicyParams,
    seed: int,
    record: Optional[Callable] = None,
):
    """Roll one episode of the distilled student: its mean action is a
    residual over the frozen base actor, computed from camera-visible
    observations only. Returns the same summary dict as
    ``run_grasp_episode``."""
    _, student_obs = env.reset(seed)
    if base is not None:
        base.reset(env)
    steps = 0
    while True:
        base_a = base.action(env) if base is not None else np.zeros(NUM_DOF)
        mean, _, _ = policy_forward(student, encode_observation(student_obs, "student"))
        action = compose_residual(base_a, np.clip(mean, -1.0, 1.0))
        result = env.step(action)
        steps += 1
        student_obs = result.student
        if record is not None:
            record(steps, action, result)
        if result.done:
            break
    return {
        "success": result.success,
        "steps": steps,
        "fingertips": result.teacher.robot.fingertips,
        "final_result": result,
    }


def evaluate_residual(
    make_env: Callable[[int], GraspEnv],
    base: Optional[BaseActor],
    residual: Optional[PolicyParams],
    eval_seeds: Sequence[int],
) -> Tuple[float, float]:
    """Deterministic (success rate, mean episodic return) of the composed
    policy (mean actions) over a fixed set of episode seeds. The tuple
    orders lexicographically: task success dominates, the dense return
    breaks ties among equally successful candidates."""
    total = 0.0
    successes = 0
    for s in eval_seeds:
        env = make_env(s)
        teacher_obs, _ = env.reset(s)
        if base is not None:
            base.reset(env)
        done = False
        while not done:
            base_a = base.action(env) if base is not None else np.zeros(NUM_DOF)
            if residual is not None:
                mean, _, _ = policy_forward(
                    residual, encode_observation(teacher_obs, "teacher")
                )
                res_a = np.clip(mean, -1.0, 1.0)
            else:
                res_a = np.zeros(NUM_DOF)
            result = env.step(compose_residual(base_a, res_a))
            total += result.reward_breakdown.total_teacher
            done = result.done
            teacher_obs = result.teacher
        successes += bool(result.success)
    return successes / len(eval_seeds), total / len(eval_seeds)


def train_residual(
    make_env: Callable[[int], GraspEnv],
    base: BaseActor,
    residual: PolicyParams,
    value: PolicyParams,
    cfg: PpoConfig,
    iterations: int,
    episodes_per_iter: int,
    seed: int,
    callback: Optional[Callable] = None,
    eval_seeds: Optional[Sequence[int]] = None,
):
    """PPO over the residual policy with the base actor frozen; the
    residual consumes teacher-variant observation encodings.

    When ``eval_seeds`` is given, every iterate (including the initial
    residual) is scored deterministically on those episodes and the
    best-scoring residual is returned — PPO on tiny batches can drift,
    and a residual must never leave the composed policy worse than the
    point it started from."""
    rng = np.random.default_rng(seed)
    p_adam = AdamState.zeros(len(residual.params))
    v_adam = AdamState.zeros(len(value.params))
    episode_counter = 0
    history = []
    best = None
    if eval_seeds is not None:
        best = (evaluate_residual(make_env, base, residual, eval_seeds),
                residual.copy(), value.copy())
    for it in range(iterations):
        batches = []
        mean_reward = 0.0
        for _ in range(episodes_per_iter):
            env = make_env(episode_counter)
            teacher_obs, _ = env.reset(episode_counter)
            base.reset(env)
            episode_counter += 1
            rows = {k: [] for k in ("obs", "actions", "log_probs", "rewards", "values", "dones")}
            done = False
            while not done:
                obs_vec = encode_observation(teacher_obs, "teacher")
                base_a = base.action(env)
                execa, raw, logp = sample_action(residual, obs_vec, rng)
                v, _ = value_forward(value, obs_vec)
                result = env.step(compose_residual(base_a, execa))
                reward = result.reward_breakdown.total_teacher
                done = result.done
                rows["obs"].append(obs_vec)
                rows["actions"].append(raw)
                rows["log_probs"].append(logp)
                rows["rewards"].append(reward)
                rows["values"].append(float(v))
                rows["dones"].append(float(done))
                teacher_obs = result.teacher
            batch = RolloutBatch(**{k: np.asarray(v) for k, v in rows.items()})
            batch.advantages, batch.returns = gae(
                batch.rewards, batch.values, batch.dones, cfg.discount, cfg.gae_lambda
            )
            batches.append(batch)
            mean_reward += batch.rewards.mean() / episodes_per_iter
        residual, value, stats = ppo_update(
            residual, value, RolloutBatch.concat(batches), cfg,
            seed=seed * 20011 + it, policy_adam=p_adam, value_adam=v_adam,
        )
        history.append((it, float(mean_reward)))
        if best is not None:
            score = evaluate_residual(make_env, base, residual, eval_seeds)
            if score > best[0]:
                best = (score, residual.copy(), value.copy())
        if callback is not None:
            callback(it, mean_reward, stats)
    if best is not None:
        residual, value = best[1], best[2]
    return residual, value, history


# ---------------------------------------------------------------------------
# stage 3: DAgger distillation


@dataclass
class DistillDataset:
    obs: List[np.ndarray] = field(default_factory=list)
    actions: List[np.ndarray] = field(default_factory=list)

    def append(self, obs_vec: np.ndarray, action: np.ndarray) -> None:
        self.obs.append(np.asarray(obs_vec, dtype=np.float64))
        self.actions.append(np.asarray(action, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.obs)

    def arrays(self):
        return np.asarray(self.obs), np.asarray(self.actions)


@dataclass(frozen=True)
class DaggerConfig:
    epochs: int = 40
    learning_rate: float = 1e-3
    minibatch_size: int = 256
    episodes_per_round: int = 8

    def __post_init__(self):
        if self.epochs < 1 or self.minibatch_size < 1 or self.episodes_per_round < 1:
            raise TrainError("DaggerConfig counts must be >= 1")


def regress_student(
    student: PolicyParams,
    dataset: DistillDataset,
    cfg: DaggerConfig,
    seed: int,
    adam: Optional[AdamState] = None,
) -> Tuple[PolicyParams, float]:
    """Minimize mean squared action error over the aggregate dataset.
    Returns (student, final-epoch loss)."""
    if len(dataset) == 0:
        raise TrainError("empty aggregate dataset")
    X, Y = dataset.arrays()
    student = student.copy()
    if adam is None:
        adam = AdamState.zeros(len(student.params))
    rng = np.random.default_rng(seed)
    n = len(X)
    loss = np.inf
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            m = len(idx)
            mean, _, cache = policy_forward(student, X[idx])
            err = mean - Y[idx]
            dmean = 2.0 * err / (m * Y.shape[1])
            grads = policy_backward(student, cache, dmean, np.zeros(student.spec.output_dim))
            _check_finite(grads)
            student = PolicyParams(
                student.role,
                student.spec,
                adam_step(student.params, grads, adam, lr=cfg.learning_rate),
            )
        mean, _, _ = policy_forward(student, X)
        loss = float(np.mean((mean - Y) ** 2))
    return student, loss


def dagger_round(
    teacher: PolicyParams,
    base: Optional[BaseActor],
    student: PolicyParams,
    make_env: Callable[[int], GraspEnv],
    aggregate: DistillDataset,
    cfg: DaggerConfig,
    seed: int,
    adam: Optional[AdamState] = None,
):
    """One DAgger round: roll out the student (composed with the frozen
    base, like the teacher it mimics), label visited states with the
    privileged teacher residual's mean action, regress on the aggregate.
    Returns (student, aggregate, final loss).

    The student is a residual over the same replanned base actor, not a
    standalone clone of the composed action. The base plan only needs the
    object centroid — available from the camera cloud at deployment —
    while regressing the full composed action from student observations
    is hopeless in practice: the wrist channels integrate per-step
    deltas, so sub-1e-2 RMS action errors compound into centimetres of
    drift by the grasp window and success collapses even at tiny
    regression loss."""
    for ep in range(cfg.episodes_per_round):
        env = make_env(seed * 100 + ep)
        teacher_obs, student_obs = env.reset(seed * 100 + ep)
        if base is not None:
            base.reset(env)
        done = False
        while not done:
            t_vec = encode_observation(teacher_obs, "teacher")
            s_vec = encode_observation(student_obs, "student")
            base_a = base.action(env) if base is not None else np.zeros(NUM_DOF)
            t_mean, _, _ = policy_forward(teacher, t_vec)
            label = np.clip(t_mean, -1.0, 1.0)
            aggregate.append(s_vec, label)
            s_mean, _, _ = policy_forward(student, s_vec)
            result = env.step(compose_residual(base_a, np.clip(s_mean, -1.0, 1.0)))
            done = result.done
            teacher_obs, student_obs = result.teacher, result.student
    student, loss = regress_student(student, aggregate, cfg, seed, adam=adam)
    return student, aggregate, loss
