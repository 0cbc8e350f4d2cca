"""A first look at the environment: plan a pinch grasp and execute it.

The scripted actor follows a minimum-jerk reach-grasp plan exactly —
approach the object, close thumb and index around it, lift to the goal.
No learning involved; this is the oracle the pretrained base policy is
later trained to imitate.

Run:  python3 demos/01_scripted_grasp.py
"""

import numpy as np

from dexgrasp_lab.env import EnvConfig, GraspEnv
from dexgrasp_lab.hand import default_hand_spec
from dexgrasp_lab.objects import make_ball
from dexgrasp_lab.training import ScriptedActor, pinch_midpoint, run_grasp_episode


def main():
    spec = default_hand_spec()
    ball = make_ball()

    offset = pinch_midpoint(spec, close_fraction=0.4)
    print(f"pinch midpoint (wrist frame): {np.round(offset, 4)}")
    print("aiming the wrist so the object centroid lands between thumb "
          "and index at the closed configuration\n")

    successes = 0
    for seed in range(10):
        env = GraspEnv(EnvConfig(), ball.cloud)
        out = run_grasp_episode(env, ScriptedActor(spec), None, seed)
        obj = np.round(env.object_pose.position, 3)
        print(f"episode {seed}: success={out['success']} "
              f"steps={out['steps']:3d} final object position={obj}")
        successes += out["success"]
    print(f"\nscripted oracle: {successes}/10 successful grasps")


if __name__ == "__main__":
    main()
