"""Robot plant and sensor models.

The plant is a differential-drive body whose wheel speeds follow commands
through a PI-regulated first-order motor lag.  Slip decouples wheel motion
from ground motion: encoders sense the wheels (slip-blind) while the paired
optical-flow sensors sense true ground motion (slip-immune).  All sensor
models draw from caller-supplied numpy generators so runs are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    ARC_EPSILON,
    MAX_WHEEL_SPEED,
    Posture,
    RobotGeometry,
    Twist,
    WheelSpeeds,
    integrate_unicycle,
    wheels_to_twist,
    wrap_angle,
)


# --- wheel speed regulation ------------------------------------------------


@dataclass(frozen=True)
class PiConfig:
    """Wheel speed loop: PI trim around a command feedforward, driving a
    first-order motor lag.  Defaults settle a step to a few percent within
    0.3 s without overshoot."""

    kp: float = 0.8
    ki: float = 2.0
    motor_tau: float = 0.05        # s
    v_max: float = MAX_WHEEL_SPEED

    def __post_init__(self) -> None:
        if self.kp < 0 or self.ki < 0 or self.motor_tau <= 0 or self.v_max <= 0:
            raise ValueError("invalid PI configuration")


@dataclass(frozen=True)
class PlantState:
    """Complete state of one simulated robot at time_ms."""

    pose: Posture
    wheel_command: WheelSpeeds = WheelSpeeds(0.0, 0.0)
    wheel_actual: WheelSpeeds = WheelSpeeds(0.0, 0.0)
    pi_integral: tuple[float, float] = (0.0, 0.0)   # right, left
    time_ms: float = 0.0
    slip_active: bool = False


def _clamp(value: float, limit: float) -> float:
    return max(-limit, min(limit, value))


def _pi_wheel(command: float, actual: float, integral: float, cfg: PiConfig,
              dt: float) -> tuple[float, float]:
    target = _clamp(command, cfg.v_max)
    error = target - actual
    drive_raw = target + cfg.kp * error + cfg.ki * integral
    drive = _clamp(drive_raw, cfg.v_max)
    if drive == drive_raw:
        integral += error * dt   # anti-windup: freeze while the drive clips
    actual += dt * (drive - actual) / cfg.motor_tau
    return actual, integral


def wheel_pi_step(state: PlantState, cfg: PiConfig, dt: float) -> PlantState:
    """Advance the two wheel speed loops by dt (does not move the body)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    right, int_r = _pi_wheel(
        state.wheel_command.right, state.wheel_actual.right, state.pi_integral[0], cfg, dt
    )
    left, int_l = _pi_wheel(
        state.wheel_command.left, state.wheel_actual.left, state.pi_integral[1], cfg, dt
    )
    return replace(state, wheel_actual=WheelSpeeds(right, left), pi_integral=(int_r, int_l))


# --- slip --------------------------------------------------------------------


@dataclass(frozen=True)
class SlipEvent:
    """Wheel/ground decoupling over [start_ms, end_ms).

    mode 'stuck': wheels spin, the body does not move.
    mode 'scale': ground speed is factor times wheel speed.
    """

    start_ms: float
    end_ms: float
    mode: str = "stuck"
    factor: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in ("stuck", "scale"):
            raise ValueError(f"unknown slip mode {self.mode!r}")
        if not self.start_ms < self.end_ms:
            raise ValueError("slip interval must have start < end")
        if self.factor < 0:
            raise ValueError("slip factor must be non-negative")


def active_slip(schedule: tuple[SlipEvent, ...], t_ms: float) -> SlipEvent | None:
    for event in schedule:
        if event.start_ms <= t_ms < event.end_ms:
            return event
    return None


def ground_wheels(state: PlantState, slip: SlipEvent | None) -> WheelSpeeds:
    """Ground-contact wheel speeds under the active slip event."""
    if slip is None:
        return state.wheel_actual
    if slip.mode == "stuck":
        return WheelSpeeds(0.0, 0.0)
    return WheelSpeeds(slip.factor * state.wheel_actual.right,
                       slip.factor * state.wheel_actual.left)


def step_plant(state: PlantState, geometry: RobotGeometry, dt: float,
               slip: SlipEvent | None = None) -> PlantState:
    """Move the body for dt seconds at its current wheel speeds."""
    if not 0 < dt <= 0.2:
        raise ValueError(f"dt must be in (0, 0.2], got {dt!r}")
    twist = wheels_to_twist(ground_wheels(state, slip), geometry)
    return replace(
        state,
        pose=integrate_unicycle(state.pose, twist, dt),
        time_ms=state.time_ms + dt * 1e3,
        slip_active=slip is not None,
    )


class PlantLoop:
    """Fused wheel-PI + motion stepper for long runs.

    Arithmetic is kept line-for-line identical to
    ``step_plant(wheel_pi_step(state, cfg, dt), geometry, dt, slip)`` but the
    state lives in plain floats, so a multi-minute simulation does not spend
    most of its time constructing frozen dataclasses.  ``snapshot()``
    materializes the same PlantState the one-step functions would have
    produced, bit for bit (see the equivalence test).
    """

    def __init__(self, state: PlantState, cfg: PiConfig,
                 geometry: RobotGeometry) -> None:
        self._kp = cfg.kp
        self._ki = cfg.ki
        self._tau = cfg.motor_tau
        self._v_max = cfg.v_max
        self._wheel_base = geometry.wheel_base
        # Ground-contact wheel speeds of the most recent step, for sensors
        # that observe body motion rather than wheel rotation.
        self.ground_right = 0.0
        self.ground_left = 0.0
        self.load(state)

    def load(self, state: PlantState) -> None:
        self.x = state.pose.x
        self.y = state.pose.y
        self.theta = state.pose.theta
        self.cmd_right = state.wheel_command.right
        self.cmd_left = state.wheel_command.left
        self.act_right = state.wheel_actual.right
        self.act_left = state.wheel_actual.left
        self.int_right, self.int_left = state.pi_integral
        self.time_ms = state.time_ms
        self.slip_active = state.slip_active

    def snapshot(self) -> PlantState:
        return PlantState(
            pose=Posture(self.x, self.y, self.theta),
            wheel_command=WheelSpeeds(self.cmd_right, self.cmd_left),
            wheel_actual=WheelSpeeds(self.act_right, self.act_left),
            pi_integral=(self.int_right, self.int_left),
            time_ms=self.time_ms,
            slip_active=self.slip_active,
        )

    def set_command(self, right: float, left: float) -> None:
        self.cmd_right = right
        self.cmd_left = left

    def advance(self, dt: float, slip: SlipEvent | None = None) -> None:
        """One PI update followed by one motion step, as the fused pair."""
        if not 0 < dt <= 0.2:
            raise ValueError(f"dt must be in (0, 0.2], got {dt!r}")
        v_max = self._v_max
        kp = self._kp
        ki = self._ki
        tau = self._tau
        # right wheel speed loop (mirrors _pi_wheel)
        target = max(-v_max, min(v_max, self.cmd_right))
        error = target - self.act_right
        drive_raw = target + kp * error + ki * self.int_right
        drive = max(-v_max, min(v_max, drive_raw))
        if drive == drive_raw:
            self.int_right += error * dt
        self.act_right += dt * (drive - self.act_right) / tau
        # left wheel speed loop
        target = max(-v_max, min(v_max, self.cmd_left))
        error = target - self.act_left
        drive_raw = target + kp * error + ki * self.int_left
        drive = max(-v_max, min(v_max, drive_raw))
        if drive == drive_raw:
            self.int_left += error * dt
        self.act_left += dt * (drive - self.act_left) / tau
        # ground contact (mirrors ground_wheels)
        if slip is None:
            g_right = self.act_right
            g_left = self.act_left
        elif slip.mode == "stuck":
            g_right = 0.0
            g_left = 0.0
        else:
            g_right = slip.factor * self.act_right
            g_left = slip.factor * self.act_left
        self.ground_right = g_right
        self.ground_left = g_left
        # body motion (mirrors wheels_to_twist + integrate_unicycle)
        v = 0.5 * (g_right + g_left)
        w = (g_right - g_left) / self._wheel_base
        swept = w * dt
        theta = self.theta
        if abs(swept) > ARC_EPSILON:
            radius = v / w
            self.x += radius * (math.sin(theta + swept) - math.sin(theta))
            self.y += radius * (-math.cos(theta + swept) + math.cos(theta))
        else:
            self.x += v * dt * math.cos(theta)
            self.y += v * dt * math.sin(theta)
        self.theta = wrap_angle(theta + swept)
        self.time_ms += dt * 1e3
        self.slip_active = slip is not None


# --- sensors -----------------------------------------------------------------


@dataclass(frozen=True)
class SensorNoise:
    """Per-sample noise levels and the flow calibration factor.

    encoder_sigma and flow_sigma are speed-noise standard deviations (mm/s)
    applied per sample at the sensor's own rate; both land near 2 mm/s at
    the 70 ms report level with the default rates.  Wheel odometry error is
    dominated by tick quantization instead of this term.
    """

    encoder_sigma: float = 1.0     # mm/s per 400 Hz sample
    flow_sigma: float = 25.0       # mm/s per 1000 Hz sample
    gyro_sigma: float = 0.01       # rad
    ir_sigma: float = 1.0          # mm
    flow_scale: float = 1.0        # calibration factor, 1.0 when perfect

    def __post_init__(self) -> None:
        if min(self.encoder_sigma, self.flow_sigma, self.gyro_sigma, self.ir_sigma) < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.flow_scale <= 0:
            raise ValueError("flow_scale must be positive")

    @classmethod
    def noiseless(cls) -> "SensorNoise":
        return cls(encoder_sigma=0.0, flow_sigma=0.0, gyro_sigma=0.0, ir_sigma=0.0)


def quantize_ticks(disp_mm: float, carry_mm: float, mm_per_tick: float) -> tuple[int, float]:
    """Turn a displacement into whole encoder ticks, carrying the remainder.

    Truncates toward zero so forward and reverse motion quantize
    symmetrically; the carry stays below one tick in magnitude.
    """
    total = carry_mm + disp_mm
    ticks = int(total / mm_per_tick)
    return ticks, total - ticks * mm_per_tick


class EncoderModel:
    """Incremental wheel encoders: quantized, noisy, and slip-blind."""

    def __init__(self, geometry: RobotGeometry, noise: SensorNoise,
                 rng: np.random.Generator):
        self.geometry = geometry
        self.noise = noise
        self.rng = rng
        self._carry = [0.0, 0.0]   # right, left

    def sample(self, state: PlantState, dt: float) -> tuple[int, int]:
        """Tick counts for one sample interval ending at `state`."""
        return self.sample_speeds(state.wheel_actual.right,
                                  state.wheel_actual.left, dt)

    def sample_speeds(self, right: float, left: float, dt: float) -> tuple[int, int]:
        ticks = []
        for i, speed in enumerate((right, left)):
            noisy = speed + self.noise.encoder_sigma * self.rng.standard_normal()
            t, self._carry[i] = quantize_ticks(noisy * dt, self._carry[i],
                                               self.geometry.mm_per_tick)
            ticks.append(t)
        return ticks[0], ticks[1]


def flow_displacement(twist_ground: Twist, dt: float,
                      geometry: RobotGeometry) -> tuple[float, float]:
    """True longitudinal displacement (mm) seen by the left and right flow
    sensors, mounted half the sensor separation to each side of the body
    axis.  A counterclockwise turn slows the left sensor."""
    half = 0.5 * geometry.flow_separation * twist_ground.w
    return (twist_ground.v - half) * dt, (twist_ground.v + half) * dt


class FlowModel:
    """Paired downward optical-flow sensors measuring ground motion."""

    def __init__(self, geometry: RobotGeometry, noise: SensorNoise,
                 rng: np.random.Generator):
        self.geometry = geometry
        self.noise = noise
        self.rng = rng

    def sample(self, twist_ground: Twist, dt: float) -> tuple[float, float]:
        return self.sample_vw(twist_ground.v, twist_ground.w, dt)

    def sample_vw(self, v: float, w: float, dt: float) -> tuple[float, float]:
        half = 0.5 * self.geometry.flow_separation * w
        dx_l = (v - half) * dt
        dx_r = (v + half) * dt
        sigma = self.noise.flow_sigma * dt
        return (
            dx_l * self.noise.flow_scale + sigma * self.rng.standard_normal(),
            dx_r * self.noise.flow_scale + sigma * self.rng.standard_normal(),
        )


def sample_gyro(pose: Posture, noise: SensorNoise, rng: np.random.Generator) -> float:
    """Absolute heading with Gaussian noise, wrapped to (-pi, pi]."""
    return wrap_angle(pose.theta + noise.gyro_sigma * rng.standard_normal())


# --- world and range sensing --------------------------------------------------


@dataclass(frozen=True)
class Rect:
    """Axis-aligned obstacle."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError("rect must have positive extent")

    def edges(self) -> tuple[tuple[float, float, float, float], ...]:
        return (
            (self.x0, self.y0, self.x1, self.y0),
            (self.x1, self.y0, self.x1, self.y1),
            (self.x1, self.y1, self.x0, self.y1),
            (self.x0, self.y1, self.x0, self.y0),
        )

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True)
class Segment:
    """Thin wall between two endpoints."""

    ax: float
    ay: float
    bx: float
    by: float

    def __post_init__(self) -> None:
        if self.ax == self.bx and self.ay == self.by:
            raise ValueError("segment endpoints must differ")


@dataclass(frozen=True)
class World:
    """Rectangular arena with axis-aligned rectangle and segment obstacles."""

    bounds: Rect = Rect(-2500.0, -2500.0, 2500.0, 2500.0)
    rects: tuple[Rect, ...] = ()
    segments: tuple[Segment, ...] = ()

    def obstacle_edges(self) -> list[tuple[float, float, float, float]]:
        edges = list(self.bounds.edges())
        for r in self.rects:
            edges.extend(r.edges())
        edges.extend((s.ax, s.ay, s.bx, s.by) for s in self.segments)
        return edges


def _ray_segment_distance(ox: float, oy: float, dx: float, dy: float,
                          edge: tuple[float, float, float, float]) -> float | None:
    ax, ay, bx, by = edge
    ex, ey = bx - ax, by - ay
    denom = dx * ey - dy * ex
    if abs(denom) < 1e-12:
        return None   # parallel (collinear grazing treated as a miss)
    t = ((ax - ox) * ey - (ay - oy) * ex) / denom
    s = ((ax - ox) * dy - (ay - oy) * dx) / denom
    if t >= 0.0 and 0.0 <= s <= 1.0:
        return t
    return None


def cast_ray(world: World, ox: float, oy: float, angle: float) -> float:
    """Distance (mm) to the nearest obstacle or arena wall along a ray."""
    dx, dy = math.cos(angle), math.sin(angle)
    best = math.inf
    for edge in world.obstacle_edges():
        hit = _ray_segment_distance(ox, oy, dx, dy, edge)
        if hit is not None and hit < best:
            best = hit
    return best


def sample_ir(world: World, pose: Posture, geometry: RobotGeometry,
              noise: SensorNoise, rng: np.random.Generator) -> list[float | None]:
    """Five range readings in ray order; None marks out-of-range.

    A ray is classified against the true cast distance, then the reported
    value carries additive Gaussian noise.
    """
    if not world.bounds.contains(pose.x, pose.y):
        raise ValueError("pose must lie inside the world bounds")
    readings: list[float | None] = []
    for bearing in geometry.ir_ray_angles:
        d = cast_ray(world, pose.x, pose.y, pose.theta + bearing)
        if geometry.ir_range_min <= d <= geometry.ir_range_max:
            readings.append(max(0.0, d + noise.ir_sigma * rng.standard_normal()))
        else:
            readings.append(None)
    return readings
