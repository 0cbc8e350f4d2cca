"""A desk-scale laboratory for two-stage dexterous grasping.

The package trains a 24-DOF hand model in a lightweight kinematic
tabletop environment: a base policy is pretrained with PPO to track
reference reach-and-grasp trajectories, a residual policy is trained on
top of the frozen base against a grasping reward that can penalize
contact with an object's negative (do-not-touch) region, and the
composed teacher is distilled into a vision-state student with DAgger.
The negative regions come from a promptable-segmentation pipeline over
rendered views, served either by deterministic built-in providers or by
an external service speaking a small line-JSON wire protocol.

Module map:

- ``geometry``, ``hand``, ``trajectory``: math, the hand model, and
  reference trajectory tooling
- ``rewards``, ``metrics``: reward kernels and evaluation metrics
- ``objects``, ``naa``, ``providers``, ``wire``: synthetic object
  corpus, the negative-affordance pipeline, and its provider backends
- ``mlp``, ``policy``, ``training``: networks, policy containers and
  checkpoints, PPO / residual / DAgger training loops
- ``env``: the grasping environment
- ``harness``, ``cli``: reproducible experiment runs and the
  ``dexgrasp-lab`` command line
"""

__version__ = "0.1.0"
