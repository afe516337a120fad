"""Lyapunov-style point-tracking law for a differential-drive robot.

    v = ||x||_2 * k_v * cos(theta_e)
    w = k_w * cos(theta_e) * sin(theta_e) + k_w2 * theta_e      (k_w2 = k_w by default)

``theta_e`` is the bearing to the target minus the heading, wrapped to
(-pi, pi]. When the target is behind the robot (|theta_e| > pi/2) ``v`` is
negative and the robot reverses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2 * math.pi)
    if w <= 0:
        w += 2 * math.pi
    return w - math.pi


@dataclass
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        self.theta = wrap_angle(self.theta)


@dataclass
class Twist:
    v: float
    omega: float


@dataclass
class Gains:
    k_v: float = 0.5
    k_omega: float = 1.5
    k_omega2: float | None = None
    v_max: float = 1.0
    omega_max: float = 2.0

    def __post_init__(self):
        if self.k_v <= 0 or self.k_omega <= 0 or (self.k_omega2 is not None and self.k_omega2 <= 0):
            raise ValueError("controller gains must be positive")


def heading_error(current: Pose2D, target) -> float:
    tx, ty = (target.x, target.y) if isinstance(target, Pose2D) else target
    return wrap_angle(math.atan2(ty - current.y, tx - current.x) - current.theta)


def control_law(distance: float, theta_e: float, k_v: float, k_omega: float, k_omega2: float | None = None):
    """Unsaturated ``(v, omega)`` from distance and orientation error."""
    k2 = k_omega if k_omega2 is None else k_omega2
    c = math.cos(theta_e)
    v = distance * k_v * c
    omega = k_omega * c * math.sin(theta_e) + k2 * theta_e
    return v, omega


def _sat(u: float, lim: float) -> float:
    return max(-lim, min(lim, u))


def control_step(current: Pose2D, target, gains: Gains | None = None) -> Twist:
    gains = gains or Gains()
    tx, ty = (target.x, target.y) if isinstance(target, Pose2D) else target
    d = math.hypot(tx - current.x, ty - current.y)
    if d == 0.0:
        return Twist(0.0, 0.0)
    v, w = control_law(d, heading_error(current, (tx, ty)), gains.k_v, gains.k_omega, gains.k_omega2)
    return Twist(_sat(v, gains.v_max), _sat(w, gains.omega_max))
