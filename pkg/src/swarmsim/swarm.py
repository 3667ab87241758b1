"""Heading consensus, both as pure synchronous iteration and over the
simulated star network.

The iteration is plain arithmetic on scalar headings: every agent moves a
fraction K toward the current swarm mean. That preserves the mean exactly
and contracts every pairwise difference by (1 - K) per round, so any
K in (0, 2) converges. Headings are treated as unwrapped scalars; demos
keep the initial spread below pi so the arithmetic never fights the
branch cut (a circular mean is out of scope).

In networked mode the robots only report headings over the star channel;
the server averages the freshest report per robot, hands each robot its
corrected target, and the robots turn in place toward it between rounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .comms import ChannelModel, FrameError, FreshnessBuffer, SensorPacket, StarChannel, decode_frame, encode_frame
from .control import Gains, tracking_control
from .core import Posture, RobotGeometry, integrate_unicycle, wheels_to_twist, wrap_angle

__all__ = [
    "ConsensusConfig",
    "ConsensusResult",
    "RoundRecord",
    "SwarmState",
    "consensus_step",
    "mean_heading",
    "run_networked_consensus",
    "run_synchronous_consensus",
    "spread",
]


def mean_heading(headings) -> float:
    """Arithmetic mean of scalar headings (deliberately not circular)."""
    values = list(headings)
    if not values:
        raise ValueError("mean_heading needs at least one heading")
    return math.fsum(values) / len(values)


def spread(headings) -> float:
    """Largest pairwise difference: max - min for scalar headings."""
    values = list(headings)
    if not values:
        raise ValueError("spread needs at least one heading")
    return max(values) - min(values)


@dataclass(frozen=True)
class SwarmState:
    headings: tuple[float, ...]
    round: int = 0

    def __post_init__(self):
        object.__setattr__(self, "headings", tuple(float(h) for h in self.headings))
        if len(self.headings) < 2:
            raise ValueError("a swarm needs at least two agents")

    @property
    def mean(self) -> float:
        return mean_heading(self.headings)

    @property
    def spread(self) -> float:
        return spread(self.headings)


def consensus_step(state: SwarmState, k: float) -> SwarmState:
    """One synchronous round: every heading moves K of the way to the
    pre-step mean, simultaneously."""
    if not 0.0 < k < 2.0:
        raise ValueError("consensus gain must lie in (0, 2)")
    m = state.mean
    return SwarmState(
        tuple(h + k * (m - h) for h in state.headings),
        state.round + 1,
    )


@dataclass(frozen=True)
class ConsensusConfig:
    k: float = 0.2
    epsilon: float = 0.01               # rad
    max_rounds: int = 2000
    mode: str = "networked"
    round_period_ms: float = 70.0
    settle_rounds: int = 10             # consecutive sub-epsilon rounds
    staleness_horizon_ms: float = 500.0
    turn_gain: float = 8.0              # heading P-gain for turn-in-place, 1/s

    def __post_init__(self):
        if not 0.0 < self.k < 2.0:
            raise ValueError("consensus gain must lie in (0, 2)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.mode not in ("synchronous", "networked"):
            raise ValueError("mode must be 'synchronous' or 'networked'")
        if self.round_period_ms <= 0 or self.staleness_horizon_ms <= 0:
            raise ValueError("periods must be positive")
        if self.settle_rounds < 1:
            raise ValueError("settle_rounds must be at least 1")
        if self.turn_gain <= 0:
            raise ValueError("turn_gain must be positive")


@dataclass(frozen=True)
class RoundRecord:
    t_s: float
    headings: tuple[float, ...]
    mean: float
    spread: float


@dataclass
class ConsensusResult:
    converged: bool
    time_s: float
    rounds: int
    trace: list[RoundRecord] = field(default_factory=list)
    staleness_warnings: int = 0


def _check_settled(streak: int, value: float, cfg: ConsensusConfig) -> int:
    return streak + 1 if value < cfg.epsilon else 0


def run_synchronous_consensus(initial_headings, cfg: ConsensusConfig) -> ConsensusResult:
    """Iterate the pure algebraic rounds until the spread settles."""
    state = SwarmState(tuple(initial_headings))
    period_s = cfg.round_period_ms / 1e3
    trace = [RoundRecord(0.0, state.headings, state.mean, state.spread)]
    streak = _check_settled(0, state.spread, cfg)
    while state.round < cfg.max_rounds and streak < cfg.settle_rounds:
        state = consensus_step(state, cfg.k)
        trace.append(RoundRecord(state.round * period_s, state.headings,
                                 state.mean, state.spread))
        streak = _check_settled(streak, state.spread, cfg)
    converged = streak >= cfg.settle_rounds
    return ConsensusResult(converged, state.round * period_s, state.round, trace)


class _TurningRobot:
    """Robot that holds position and turns in place toward a target heading.

    The pure-rotation command rides the tracking controller's feedforward
    channel: with a stationary reference at the robot's own position the
    error terms vanish and the commanded turn rate maps to an exact
    opposite wheel pair.
    """

    def __init__(self, robot_id: int, heading: float, geometry: RobotGeometry,
                 gyro_sigma: float, rng: np.random.Generator):
        self.robot_id = robot_id
        self.pose = Posture(300.0 * robot_id, 0.0, heading)
        self.target = heading
        self.geometry = geometry
        self.gyro_sigma = gyro_sigma
        self.rng = rng
        self.gains = Gains()

    def report(self, t_ms: float) -> bytes:
        heading = self.pose.theta
        if self.gyro_sigma > 0:
            heading = wrap_angle(heading + self.rng.normal(0.0, self.gyro_sigma))
        packet = SensorPacket(
            robot_id=self.robot_id, t_sent=int(round(t_ms)),
            ticks_left=0, ticks_right=0,
            flow_dx_left=0.0, flow_dx_right=0.0,
            gyro_heading=heading, ir=(None,) * 5,
        )
        return encode_frame(packet)

    def advance(self, dt_s: float, turn_gain: float):
        w_cmd = turn_gain * wrap_angle(self.target - self.pose.theta)
        ref = Posture(self.pose.x, self.pose.y, self.pose.theta)
        cmd = tracking_control(ref, self.pose, 0.0, w_cmd, self.gains, self.geometry)
        self.pose = integrate_unicycle(
            self.pose, wheels_to_twist(cmd, self.geometry), dt_s)


def run_networked_consensus(initial_headings, cfg: ConsensusConfig,
                            channel_model: ChannelModel | None = None,
                            geometry: RobotGeometry | None = None,
                            gyro_sigma: float = 0.0,
                            seed: int = 0) -> ConsensusResult:
    """Consensus over the star network with turn-in-place robots.

    Every round period each robot uplinks its gyro heading; the server
    refreshes its per-robot buffer, averages the freshest headings, and
    assigns each robot the target one K-step toward the mean. Rounds run
    only once every robot has reported at least once. A report older than
    the staleness horizon still participates but is counted as a warning.
    Convergence means the buffered spread stayed below epsilon for
    ``settle_rounds`` consecutive rounds.
    """
    headings = [float(h) for h in initial_headings]
    if len(headings) < 2:
        raise ValueError("a swarm needs at least two agents")
    geometry = geometry or RobotGeometry()
    channel_model = channel_model or ChannelModel()

    robots = [
        _TurningRobot(i, h, geometry, gyro_sigma,
                      np.random.default_rng([seed, i, 1]))
        for i, h in enumerate(headings)
    ]
    channel = StarChannel(channel_model, np.random.default_rng([seed, 0xFFFF, 2]))
    buffer = FreshnessBuffer()
    expected_ids = [r.robot_id for r in robots]

    period_s = cfg.round_period_ms / 1e3
    trace: list[RoundRecord] = []
    staleness_warnings = 0
    streak = 0
    converged_at = None

    for round_idx in range(1, cfg.max_rounds + 1):
        t_ms = round_idx * cfg.round_period_ms
        for robot in robots:
            channel.send(robot.report(t_ms), t_ms, robot.robot_id)
        for delivery in channel.pop_due(t_ms):
            try:
                buffer.update(decode_frame(delivery.data))
            except FrameError:
                continue
        if buffer.robot_ids() == expected_ids:
            latest = [buffer.latest(i) for i in expected_ids]
            for packet in latest:
                if t_ms - packet.t_sent > cfg.staleness_horizon_ms:
                    staleness_warnings += 1
            values = [p.gyro_heading for p in latest]
            m = mean_heading(values)
            for robot, h in zip(robots, values):
                robot.target = h + cfg.k * (m - h)
            trace.append(RoundRecord(t_ms / 1e3, tuple(values), m, spread(values)))
            streak = _check_settled(streak, spread(values), cfg)
            if streak >= cfg.settle_rounds:
                converged_at = t_ms / 1e3
                break
        for robot in robots:
            robot.advance(period_s, cfg.turn_gain)

    if converged_at is not None:
        return ConsensusResult(True, converged_at, len(trace), trace,
                               staleness_warnings)
    return ConsensusResult(False, cfg.max_rounds * period_s, len(trace), trace,
                           staleness_warnings)
