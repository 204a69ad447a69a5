"""Planar redundant arm: forward kinematics, IK dataset generation, and the
position / angular error metrics for sampled IK solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError


def wrap_angle(phi):
    """Wrap to (-pi, pi]."""
    phi = np.asarray(phi, dtype=np.float64)
    out = np.mod(-phi + np.pi, 2 * np.pi)
    out = np.pi - out
    return out if out.ndim else float(out)


@dataclass
class PlanarArm:
    lengths: tuple = (1.0, 1.0, 1.0)
    limits: tuple = field(default=None)  # per-joint (lo, hi); default (-pi, pi)

    def __post_init__(self):
        if len(self.lengths) < 2:
            raise UsageError("arm needs at least 2 links")
        if any(l <= 0 for l in self.lengths):
            raise UsageError("link lengths must be positive")
        if self.limits is None:
            self.limits = tuple((-math.pi, math.pi) for _ in self.lengths)
        if len(self.limits) != len(self.lengths):
            raise UsageError("one joint limit interval per link required")

    @property
    def n_joints(self):
        return len(self.lengths)

    @property
    def reach(self):
        return float(sum(self.lengths))


def fk(arm, theta):
    """End-effector pose (x, y, phi) for joint angles theta; accepts a single
    configuration (J,) or a batch (n, J)."""
    theta = np.asarray(theta, dtype=np.float64)
    single = theta.ndim == 1
    th = np.atleast_2d(theta)
    if th.shape[1] != arm.n_joints:
        raise UsageError(f"expected {arm.n_joints} joint angles, got {th.shape[1]}")
    for j, (lo, hi) in enumerate(arm.limits):
        if np.any(th[:, j] < lo - 1e-12) or np.any(th[:, j] > hi + 1e-12):
            raise UsageError(f"joint {j} outside its limits")
    cum = np.cumsum(th, axis=1)
    lengths = np.asarray(arm.lengths)
    x = (lengths * np.cos(cum)).sum(axis=1)
    y = (lengths * np.sin(cum)).sum(axis=1)
    phi = wrap_angle(cum[:, -1])
    pose = np.stack([x, y, np.atleast_1d(phi)], axis=1)
    return pose[0] if single else pose


def gen_ik_dataset(arm, n, rng=None, theta=None):
    """(joints, poses) arrays with joints uniform within limits and poses from
    fk; ``theta`` can be injected for exact tests."""
    if n < 1:
        raise UsageError("n must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    if theta is None:
        lows = np.array([lo for lo, _ in arm.limits])
        highs = np.array([hi for _, hi in arm.limits])
        theta = rng.uniform(lows, highs, size=(n, arm.n_joints))
    else:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    return theta, fk(arm, theta)


def pose_condition(pose):
    """Flow condition (x, y, cos phi, sin phi); continuous across the wrap."""
    pose = np.asarray(pose, dtype=np.float64)
    single = pose.ndim == 1
    p = np.atleast_2d(pose)
    cond = np.stack([p[:, 0], p[:, 1], np.cos(p[:, 2]), np.sin(p[:, 2])], axis=1)
    return cond[0] if single else cond


def ik_errors(arm, solutions, target_pose):
    """(mean position error, mean angular error in degrees) of a nonempty
    solution set against a target pose."""
    solutions = np.atleast_2d(np.asarray(solutions, dtype=np.float64))
    if solutions.shape[0] == 0:
        raise UsageError("solution set is empty")
    target_pose = np.asarray(target_pose, dtype=np.float64)
    poses = np.atleast_2d(fk(arm, solutions))
    pos_err = np.linalg.norm(poses[:, :2] - target_pose[:2], axis=1).mean()
    ang = np.abs(wrap_angle(poses[:, 2] - target_pose[2]))
    return float(pos_err), float(np.degrees(ang.mean()))
