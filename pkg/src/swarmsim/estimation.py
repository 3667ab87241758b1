"""Velocity-fusion localization over timestamped sensor reports.

State is (x, y, theta, v, omega).  Each report yields five measurements:
wheel-odometry speed and turn rate, flow-derived speed and turn rate, and
an absolute gyro heading.  Prediction advances the state with the interval
between report timestamps, never the arrival cadence, so latency jitter and
dropped reports do not corrupt the integration.  When wheel and flow speeds
disagree persistently the wheels are slipping; the wheel-channel noise is
inflated so the fused estimate leans on ground-truth flow.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .comms import FLOW_WRAP_MM, SensorPacket
from .core import Posture, RobotGeometry, Twist, integrate_unicycle, wrap_angle

STATE_DIM = 5
_H = np.array([
    [0.0, 0.0, 0.0, 1.0, 0.0],   # wheel speed
    [0.0, 0.0, 0.0, 0.0, 1.0],   # wheel turn rate
    [0.0, 0.0, 0.0, 1.0, 0.0],   # flow speed
    [0.0, 0.0, 0.0, 0.0, 1.0],   # flow turn rate
    [0.0, 0.0, 1.0, 0.0, 0.0],   # gyro heading
])
_HEADING_ROW = 4
_WHEEL_ROWS = (0, 1)


class EstimationFault(Exception):
    """The filter hit a numerically unusable innovation covariance."""


class StaleData(Exception):
    """Report timestamps must strictly increase."""


@dataclass(frozen=True)
class EkfConfig:
    """Noise model of the filter.

    q_diag is continuous-time process noise per second of prediction;
    r_base is the diagonal measurement covariance for
    (v_wheel, w_wheel, v_flow, w_flow, heading).  While slip is detected the
    two wheel channels are inflated by slip_inflation.
    """

    q_diag: tuple[float, ...] = (1.0, 1.0, 1e-4, 25.0, 1e-2)
    r_base: tuple[float, ...] = (4.27, 1.71e-3, 4.55, 5.05e-3, 1.0001e-4)
    slip_threshold: float = 20.0      # mm/s of wheel/flow disagreement
    slip_window: int = 5
    slip_inflation: float = 100.0

    def __post_init__(self) -> None:
        if len(self.q_diag) != STATE_DIM or len(self.r_base) != len(_H):
            raise ValueError("q_diag must have 5 entries, r_base 5")
        if min(self.q_diag) < 0 or min(self.r_base) < 0:
            raise ValueError("noise variances must be non-negative")
        if self.slip_threshold <= 0 or self.slip_window < 1:
            raise ValueError("invalid slip detector settings")
        if self.slip_inflation < 1:
            raise ValueError("slip_inflation must be at least 1")

    @classmethod
    def from_noise(cls, noise, geometry: RobotGeometry,
                   send_period_s: float = 0.07,
                   encoder_hz: float = 400.0, flow_hz: float = 1000.0,
                   **overrides) -> "EkfConfig":
        """Derive r_base from sensor noise levels and wire quantization."""
        t = send_period_s
        # Per-wheel speed variance: sample noise plus the two tick-boundary
        # truncation errors of the report window.
        var_wheel = (noise.encoder_sigma ** 2 / (encoder_hz * t)
                     + geometry.mm_per_tick ** 2 / (6.0 * t * t))
        # Per-sensor flow displacement variance: sample noise plus the
        # 0.1 mm wire quantum.
        var_dx = noise.flow_sigma ** 2 * t / flow_hz + 0.1 ** 2 / 12.0
        r = (
            var_wheel / 2.0,
            2.0 * var_wheel / geometry.wheel_base ** 2,
            var_dx / (2.0 * t * t),
            2.0 * var_dx / (geometry.flow_separation * t) ** 2,
            noise.gyro_sigma ** 2 + 1e-6 / 12.0,
        )
        return cls(r_base=r, **overrides)


@dataclass(frozen=True)
class EkfBelief:
    """Gaussian state estimate stamped with its report time."""

    mean: np.ndarray          # (5,)
    cov: np.ndarray           # (5, 5)
    t_ms: float

    @property
    def pose(self) -> Posture:
        return Posture(self.mean[0], self.mean[1], self.mean[2])


def initial_belief(pose: Posture, t_ms: float = 0.0) -> EkfBelief:
    mean = np.array([pose.x, pose.y, pose.theta, 0.0, 0.0])
    cov = np.diag([1.0, 1.0, 1e-4, 100.0, 0.1])
    return EkfBelief(mean, cov, t_ms)


@dataclass(frozen=True)
class VelocityMeasurement:
    """One report converted to physical units over its own interval."""

    dt: float                 # s, from report timestamps
    v_wheel: float            # mm/s
    w_wheel: float            # rad/s
    v_flow: float             # mm/s
    w_flow: float             # rad/s
    heading: float            # rad
    t_ms: float

    def vector(self) -> np.ndarray:
        return np.array([self.v_wheel, self.w_wheel, self.v_flow, self.w_flow,
                         self.heading])


def _diff_ticks(curr: int, prev: int) -> int:
    """Signed difference of two i16 free-running tick counters."""
    return ((curr - prev + 0x8000) & 0xFFFF) - 0x8000


def _diff_flow(curr: float, prev: float) -> float:
    """Signed difference of two flow distance counters (wrap at 0.1 mm i16)."""
    return (curr - prev + FLOW_WRAP_MM / 2) % FLOW_WRAP_MM - FLOW_WRAP_MM / 2


def measurement_from_packets(prev: SensorPacket, curr: SensorPacket,
                             geometry: RobotGeometry) -> VelocityMeasurement:
    """Convert consecutive reports into velocities over their interval.

    Tick and flow fields are free-running counters, so the wraparound
    difference spans the full gap between the two reports even when frames
    in between were lost; dividing by the timestamp interval then yields
    the true average velocities.  Requires less than half a counter wrap
    of motion per gap (thousands of mm at the wire widths).

    Raises StaleData when curr does not postdate prev.
    """
    if curr.t_sent <= prev.t_sent:
        raise StaleData(f"report at {curr.t_sent} ms does not postdate {prev.t_sent} ms")
    dt = (curr.t_sent - prev.t_sent) / 1e3
    mmpt = geometry.mm_per_tick
    v_right = _diff_ticks(curr.ticks_right, prev.ticks_right) * mmpt / dt
    v_left = _diff_ticks(curr.ticks_left, prev.ticks_left) * mmpt / dt
    dx_left = _diff_flow(curr.flow_dx_left, prev.flow_dx_left)
    dx_right = _diff_flow(curr.flow_dx_right, prev.flow_dx_right)
    v_flow = (dx_left + dx_right) / (2.0 * dt)
    w_flow = (dx_right - dx_left) / (geometry.flow_separation * dt)
    return VelocityMeasurement(
        dt=dt,
        v_wheel=0.5 * (v_right + v_left),
        w_wheel=(v_right - v_left) / geometry.wheel_base,
        v_flow=v_flow,
        w_flow=w_flow,
        heading=curr.gyro_heading,
        t_ms=float(curr.t_sent),
    )


def transition_jacobian(mean: np.ndarray, dt: float) -> np.ndarray:
    """Jacobian of the constant-velocity unicycle prediction."""
    theta, v = mean[2], mean[3]
    f = np.eye(STATE_DIM)
    f[0, 2] = -v * dt * math.sin(theta)
    f[0, 3] = dt * math.cos(theta)
    f[1, 2] = v * dt * math.cos(theta)
    f[1, 3] = dt * math.sin(theta)
    f[2, 4] = dt
    return f


def ekf_predict(belief: EkfBelief, dt: float, cfg: EkfConfig) -> EkfBelief:
    """Propagate the belief dt seconds under constant (v, omega)."""
    if dt <= 0:
        raise ValueError("prediction interval must be positive")
    x, y, theta, v, w = belief.mean
    mean = np.array([
        x + v * dt * math.cos(theta),
        y + v * dt * math.sin(theta),
        wrap_angle(theta + w * dt),
        v,
        w,
    ])
    f = transition_jacobian(belief.mean, dt)
    cov = f @ belief.cov @ f.T + np.diag(cfg.q_diag) * dt
    return EkfBelief(mean, cov, belief.t_ms + dt * 1e3)


def ekf_update(belief: EkfBelief, meas: VelocityMeasurement, cfg: EkfConfig,
               slip: bool) -> EkfBelief:
    """Fuse one report; wheel channels are deweighted while slip holds."""
    r = np.array(cfg.r_base, dtype=float)
    if slip:
        for row in _WHEEL_ROWS:
            r[row] *= cfg.slip_inflation
    r_mat = np.diag(r)
    s = _H @ belief.cov @ _H.T + r_mat
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        raise EstimationFault("innovation covariance is not positive definite")
    innovation = meas.vector() - _H @ belief.mean
    innovation[_HEADING_ROW] = wrap_angle(meas.heading - belief.mean[2])
    gain = belief.cov @ _H.T @ np.linalg.inv(s)
    mean = belief.mean + gain @ innovation
    mean[2] = wrap_angle(mean[2])
    ikh = np.eye(STATE_DIM) - gain @ _H
    cov = ikh @ belief.cov @ ikh.T + gain @ r_mat @ gain.T
    cov = 0.5 * (cov + cov.T)
    return EkfBelief(mean, cov, meas.t_ms)


class SlipDetector:
    """Debounced wheel/flow disagreement vote over a sliding window."""

    def __init__(self, cfg: EkfConfig):
        self.threshold = cfg.slip_threshold
        self.window = cfg.slip_window
        self._votes: deque[bool] = deque(maxlen=cfg.slip_window)

    def update(self, meas: VelocityMeasurement) -> bool:
        self._votes.append(abs(meas.v_wheel - meas.v_flow) > self.threshold)
        return 2 * sum(self._votes) > self.window


@dataclass
class EstimationRun:
    """Belief trajectory of one estimator over a report stream."""

    times_ms: list[float] = field(default_factory=list)
    means: list[np.ndarray] = field(default_factory=list)
    cov_diags: list[np.ndarray] = field(default_factory=list)
    slip_flags: list[bool] = field(default_factory=list)
    stale_skipped: int = 0

    def positions(self) -> np.ndarray:
        return np.array([[m[0], m[1]] for m in self.means])

    def final_pose(self) -> Posture:
        m = self.means[-1]
        return Posture(m[0], m[1], m[2])


def run_estimator(packets: list[SensorPacket], start: Posture,
                  geometry: RobotGeometry, cfg: EkfConfig,
                  start_t_ms: int = 0, adaptive: bool = True,
                  fixed_dt_s: float | None = None) -> EstimationRun:
    """Run the filter over reports in arrival order.

    Reports that do not postdate the newest processed one are skipped and
    counted.  With adaptive=False the slip detector still runs but never
    inflates anything (the fixed-trust baseline).  fixed_dt_s hardwires the
    filter's sampling time: every prediction advances by that interval no
    matter what the report timestamps say, which is the naive
    constant-cadence assumption this design argues against.
    """
    belief = initial_belief(start, float(start_t_ms))
    detector = SlipDetector(cfg)
    prev = _virtual_origin_packet(packets, start_t_ms)
    run = EstimationRun()
    for packet in packets:
        try:
            meas = measurement_from_packets(prev, packet, geometry)
        except StaleData:
            run.stale_skipped += 1
            continue
        prev = packet
        slip = detector.update(meas)
        belief = ekf_predict(belief, fixed_dt_s or meas.dt, cfg)
        belief = ekf_update(belief, meas, cfg, slip and adaptive)
        run.times_ms.append(float(packet.t_sent))
        run.means.append(belief.mean.copy())
        run.cov_diags.append(np.diag(belief.cov).copy())
        run.slip_flags.append(slip)
    return run


def dead_reckon(packets: list[SensorPacket], start: Posture,
                geometry: RobotGeometry, source: str,
                start_t_ms: int = 0) -> EstimationRun:
    """Open-loop integration of one velocity source, same staleness rules."""
    if source not in ("wheels", "flow"):
        raise ValueError(f"unknown dead-reckoning source {source!r}")
    pose = start
    prev = _virtual_origin_packet(packets, start_t_ms)
    run = EstimationRun()
    for packet in packets:
        try:
            meas = measurement_from_packets(prev, packet, geometry)
        except StaleData:
            run.stale_skipped += 1
            continue
        prev = packet
        if source == "wheels":
            twist = Twist(meas.v_wheel, meas.w_wheel)
        else:
            twist = Twist(meas.v_flow, meas.w_flow)
        pose = integrate_unicycle(pose, twist, meas.dt)
        run.times_ms.append(float(packet.t_sent))
        run.means.append(np.array([pose.x, pose.y, pose.theta, twist.v, twist.w]))
        run.cov_diags.append(np.zeros(STATE_DIM))
        run.slip_flags.append(False)
    return run


def _virtual_origin_packet(packets: list[SensorPacket], start_t_ms: int) -> SensorPacket:
    robot_id = packets[0].robot_id if packets else 0
    return SensorPacket(
        robot_id=robot_id, t_sent=start_t_ms, ticks_left=0, ticks_right=0,
        flow_dx_left=0.0, flow_dx_right=0.0, gyro_heading=0.0,
    )
