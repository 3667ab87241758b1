"""Planar differential-drive kinematics.

Conventions used throughout the package: lengths in mm, angles in radians,
time in seconds unless a field is explicitly a millisecond timestamp.
Headings are counterclockwise-positive and wrapped to (-pi, pi].  Wheel
speeds are ground-contact speeds in mm/s, right wheel first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TAU = 2.0 * math.pi

# Hard actuator limit of the platform, mm/s.  Commands beyond it saturate.
MAX_WHEEL_SPEED = 180.0

# Below this |omega * dt| the constant-twist arc degenerates to a straight
# segment and the closed form loses precision, so integration switches to
# the first-order limit.
ARC_EPSILON = 1e-9


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    if not math.isfinite(angle):
        raise ValueError(f"angle must be finite, got {angle!r}")
    wrapped = math.remainder(angle, TAU)
    # math.remainder returns [-pi, pi]; fold the open end onto +pi.
    if wrapped <= -math.pi:
        wrapped += TAU
    return wrapped


@dataclass(frozen=True)
class Posture:
    """Planar pose (x, y, theta). Heading is wrapped on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("posture coordinates must be finite")
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True)
class WheelSpeeds:
    """Right/left wheel ground speeds, mm/s.

    The type itself carries no speed limit; the plant and controller clamp
    commands to MAX_WHEEL_SPEED by saturation where they are applied.
    """

    right: float
    left: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.right) and math.isfinite(self.left)):
            raise ValueError("wheel speeds must be finite")


@dataclass(frozen=True)
class Twist:
    """Body velocity: forward speed v (mm/s) and yaw rate w (rad/s)."""

    v: float
    w: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.v) and math.isfinite(self.w)):
            raise ValueError("twist components must be finite")


@dataclass(frozen=True)
class RobotGeometry:
    """Fixed physical parameters of one robot."""

    wheel_base: float = 100.0            # wheel separation l, mm
    flow_separation: float = 60.0        # lateral spacing of the two flow sensors, mm
    mm_per_tick: float = 0.5             # encoder displacement quantum, mm
    body_radius: float = 60.0            # circumscribed body radius, mm
    ir_range_min: float = 200.0          # mm
    ir_range_max: float = 1500.0         # mm

    # Body-frame bearings of the five range sensors: one forward, the rest
    # paired symmetrically around the pentagon.
    ir_ray_angles: tuple[float, ...] = (
        0.0,
        2.0 * math.pi / 5.0,
        -2.0 * math.pi / 5.0,
        4.0 * math.pi / 5.0,
        -4.0 * math.pi / 5.0,
    )

    def __post_init__(self) -> None:
        if self.wheel_base <= 0 or self.flow_separation <= 0:
            raise ValueError("wheel_base and flow_separation must be positive")
        if self.mm_per_tick <= 0:
            raise ValueError("mm_per_tick must be positive")
        if not (0 <= self.ir_range_min < self.ir_range_max):
            raise ValueError("require 0 <= ir_range_min < ir_range_max")


def wheels_to_twist(wheels: WheelSpeeds, geometry: RobotGeometry) -> Twist:
    """Forward kinematics: wheel pair to body twist.

    v = (right + left) / 2, w = (right - left) / wheel_base.  A faster right
    wheel turns the robot counterclockwise.
    """
    v = 0.5 * (wheels.right + wheels.left)
    w = (wheels.right - wheels.left) / geometry.wheel_base
    return Twist(v, w)


def twist_to_wheels(twist: Twist, geometry: RobotGeometry) -> WheelSpeeds:
    """Inverse of wheels_to_twist."""
    half = 0.5 * geometry.wheel_base * twist.w
    return WheelSpeeds(twist.v + half, twist.v - half)


def integrate_unicycle(pose: Posture, twist: Twist, dt: float) -> Posture:
    """Advance a pose under a constant twist for dt seconds.

    Uses the exact circular-arc solution; when |w * dt| <= ARC_EPSILON the
    first-order straight-line limit is used instead.
    """
    if not math.isfinite(dt) or dt < 0:
        raise ValueError(f"dt must be finite and non-negative, got {dt!r}")
    swept = twist.w * dt
    if abs(swept) > ARC_EPSILON:
        radius = twist.v / twist.w
        x = pose.x + radius * (math.sin(pose.theta + swept) - math.sin(pose.theta))
        y = pose.y + radius * (-math.cos(pose.theta + swept) + math.cos(pose.theta))
    else:
        x = pose.x + twist.v * dt * math.cos(pose.theta)
        y = pose.y + twist.v * dt * math.sin(pose.theta)
    return Posture(x, y, wrap_angle(pose.theta + swept))


def error_posture(reference: Posture, current: Posture) -> Posture:
    """Tracking error of `reference` expressed in the body frame of `current`.

    Positive x is ahead of the robot, positive y to its left; theta is the
    wrapped heading difference.
    """
    dx = reference.x - current.x
    dy = reference.y - current.y
    cos_t = math.cos(current.theta)
    sin_t = math.sin(current.theta)
    return Posture(
        cos_t * dx + sin_t * dy,
        -sin_t * dx + cos_t * dy,
        wrap_angle(reference.theta - current.theta),
    )
