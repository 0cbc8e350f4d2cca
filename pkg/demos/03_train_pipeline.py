"""The full two-stage pipeline, end to end, at demo scale.

Stage 1 pretrains a base policy to track planned reach-grasp references
(a few minutes on one CPU core). Stage 2 trains a residual on top of
the frozen base against the grasping reward with keep-best selection.
Finally the composed teacher is distilled into a student that only sees
camera-visible state. Counts here are trimmed for a quick run; the
committed configs under src/dexgrasp_lab/data/configs hold the full
recipes.

Run:  python3 demos/03_train_pipeline.py
"""

import time

import numpy as np

from dexgrasp_lab.env import EnvConfig, GraspEnv
from dexgrasp_lab.hand import NUM_DOF, default_hand_spec
from dexgrasp_lab.mlp import MlpSpec
from dexgrasp_lab.objects import make_ball
from dexgrasp_lab.policy import PolicyParams, encoded_dim
from dexgrasp_lab.rewards import ImitationWeights
from dexgrasp_lab.training import (
    BaseActor,
    DaggerConfig,
    DistillDataset,
    PpoConfig,
    dagger_round,
    grasp_plan_tasks,
    imitation_obs_dim,
    run_grasp_episode,
    run_student_episode,
    train_imitation,
    train_residual,
)


def evaluate(env_fn, actor_fn, episodes=20):
    wins = 0
    for seed in range(episodes):
        wins += actor_fn(env_fn(seed), seed)
    return wins / episodes


def main():
    spec = default_hand_spec()
    ball = make_ball()
    ppo = PpoConfig(minibatch_size=128)

    # ---- stage 1: track planned reach-grasp references ------------------
    weights = ImitationWeights.for_levels(spec.keypoint_levels, w_smooth=0.0)
    train_tasks = grasp_plan_tasks(spec, range(8), weights)
    eval_tasks = grasp_plan_tasks(spec, [100, 101], weights)
    base = PolicyParams.init("base", MlpSpec(imitation_obs_dim(), NUM_DOF, (64, 64)),
                             seed=7, final_scale=0.01, log_std_init=-1.5)
    value = PolicyParams.init("value", MlpSpec(imitation_obs_dim(), 1, (64, 64)), seed=8)
    t0 = time.time()
    base, value, history = train_imitation(train_tasks, eval_tasks, base, value, ppo,
                                           iterations=400, seed=7, target=0.85)
    print(f"stage 1: tracking reward {history[-1][1]:.4f} after "
          f"{len(history)} iterations ({time.time() - t0:.0f}s)")

    make_env = lambda s: GraspEnv(EnvConfig(), ball.cloud)
    actor = BaseActor(base, spec)

    def run_base(env, seed):
        return run_grasp_episode(env, actor, None, seed)["success"]

    print(f"stage 1 grasp success: {evaluate(make_env, run_base):.2f}")

    # ---- stage 2: residual on the grasping reward -----------------------
    dim = encoded_dim("teacher")
    residual = PolicyParams.init("teacher_residual", MlpSpec(dim, NUM_DOF, (64, 64)),
                                 seed=11, final_scale=0.0, log_std_init=-1.5)
    rvalue = PolicyParams.init("value", MlpSpec(dim, 1, (64, 64)), seed=12)
    t0 = time.time()
    residual, rvalue, _ = train_residual(make_env, actor, residual, rvalue, ppo,
                                         iterations=10, episodes_per_iter=4, seed=21,
                                         eval_seeds=range(10_000, 10_016))
    print(f"stage 2: residual trained ({time.time() - t0:.0f}s)")

    def run_teacher(env, seed):
        return run_grasp_episode(env, actor, residual, seed)["success"]

    print(f"teacher grasp success: {evaluate(make_env, run_teacher):.2f}")

    # ---- stage 3: distill the teacher into a student --------------------
    student = PolicyParams.init("student",
                                MlpSpec(encoded_dim("student"), NUM_DOF, (64, 64)),
                                seed=31, final_scale=0.0, log_std_init=-1.5)
    aggregate = DistillDataset()
    t0 = time.time()
    for rnd in range(4):
        student, aggregate, loss = dagger_round(
            residual, actor, student, make_env, aggregate,
            DaggerConfig(episodes_per_round=4), seed=40 + rnd)
        print(f"distillation round {rnd}: loss {loss:.5f} "
              f"(dataset {len(aggregate)} states)")
    print(f"stage 3: distilled ({time.time() - t0:.0f}s)")

    def run_student(env, seed):
        return run_student_episode(env, actor, student, seed)["success"]

    print(f"student grasp success: {evaluate(make_env, run_student):.2f}")


if __name__ == "__main__":
    main()
