"""Comparison controllers: direct passthrough and hindsight-style goal
inference combined with artificial potential fields.

The goal-inference likelihood is a directional maximum-entropy surrogate
p(cmd | g) proportional to exp(kappa * cos(angle(cmd, g - x)) * |cmd| / v_max):
commands aligned with the bearing to a goal raise that goal's belief,
and stronger commands count for more.  Full hindsight-optimization
rollout machinery is deliberately out of scope for a point robot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import worldsim
from .intentnet import clamp_speed


class BaselineError(Exception):
    pass


@dataclass(frozen=True)
class ApfConfig:
    w_attract: float = 2.4     # 0.8 * v_max at the 3 m/s cap
    w_repulse: float = 1.5
    rho0: float = 2.0          # obstacle influence radius, m
    kappa: float = 5.0         # goal-inference rationality
    v_max: float = 3.0

    def __post_init__(self):
        if self.w_attract <= 0 or self.w_repulse <= 0:
            raise BaselineError("weights must be positive")
        if self.rho0 <= 0:
            raise BaselineError("influence radius must be positive")


@dataclass(frozen=True)
class GoalBelief:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if len(p) < 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise BaselineError("belief must be a simplex")
        object.__setattr__(self, "probs", p)

    @staticmethod
    def uniform(n: int) -> "GoalBelief":
        return GoalBelief(np.full(n, 1.0 / n))


def ho_update(belief: GoalBelief, position, cmd_action, goals, config: ApfConfig) -> GoalBelief:
    """One recursive-Bayes step of the goal belief from a user command.

    A zero command carries no directional information and leaves the
    belief unchanged; likewise for a goal the robot is standing on.
    """
    cmd = np.asarray(cmd_action, dtype=np.float64).reshape(2)
    goals = np.atleast_2d(np.asarray(goals, dtype=np.float64))
    if len(goals) != len(belief.probs):
        raise BaselineError("belief/goal count mismatch")
    speed = np.linalg.norm(cmd)
    if speed < 1e-9:
        return belief
    position = np.asarray(position, dtype=np.float64).reshape(2)
    bearings = goals - position
    norms = np.linalg.norm(bearings, axis=1)
    cos = np.where(norms > 1e-9, bearings @ cmd / np.maximum(norms * speed, 1e-12), 0.0)
    log_like = config.kappa * cos * speed / config.v_max
    logp = np.log(np.maximum(belief.probs, 1e-300)) + log_like
    logp -= logp.max()
    p = np.exp(logp)
    return GoalBelief(p / p.sum())


def _repulsion(workspace: worldsim.Workspace, position, rho0):
    """w_r-free repulsive velocity: (1/rho - 1/rho0) / rho^2 * grad(rho)."""
    if len(workspace.obstacles) == 0:
        return np.zeros(2)
    position = np.asarray(position, dtype=np.float64).reshape(2)
    rho = float(worldsim.obstacle_distances(workspace, position[None])[0])
    if rho >= rho0 or rho <= 1e-9:
        return np.zeros(2)
    h = 1e-5  # central-difference gradient of the distance field
    grad = np.array(
        [
            (worldsim.obstacle_distances(workspace, [position + [h, 0]])[0]
             - worldsim.obstacle_distances(workspace, [position - [h, 0]])[0]) / (2 * h),
            (worldsim.obstacle_distances(workspace, [position + [0, h]])[0]
             - worldsim.obstacle_distances(workspace, [position - [0, h]])[0]) / (2 * h),
        ]
    )
    return (1.0 / rho - 1.0 / rho0) / rho**2 * grad


def apf_velocity(
    config: ApfConfig,
    belief: GoalBelief,
    position,
    workspace: worldsim.Workspace,
    cmd_action,
) -> np.ndarray:
    """Blend the user command with belief-weighted attraction and obstacle
    repulsion; the result is speed-clamped."""
    position = np.asarray(position, dtype=np.float64).reshape(2)
    goals = np.atleast_2d(workspace.goals)
    if len(goals) != len(belief.probs):
        raise BaselineError("belief/goal count mismatch")
    bearings = goals - position
    norms = np.linalg.norm(bearings, axis=1)
    units = np.where(norms[:, None] > 1e-9, bearings / np.maximum(norms[:, None], 1e-12), 0.0)
    attract = config.w_attract * (belief.probs @ units)
    repulse = config.w_repulse * _repulsion(workspace, position, config.rho0)
    v = np.asarray(cmd_action, dtype=np.float64).reshape(2) + attract + repulse
    return clamp_speed(v, config.v_max)


def direct_passthrough(cmd_action, v_max=3.0) -> np.ndarray:
    """Pure user control: the command itself, speed-clamped."""
    return clamp_speed(np.asarray(cmd_action, dtype=np.float64).reshape(2), v_max)
