"""Application runners: deterministic simulations behind each subcommand.

Each runner consumes a validated Scenario, writes its artifact files into
an output directory, and returns a RunSummary. Output files never contain
wall-clock time, so an identical (scenario, seed) pair reproduces them
byte for byte; timing appears only in the printed summary.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from swarmsim.comms import (
    ChannelModel,
    FrameError,
    SensorPacket,
    StarChannel,
    decode_frame,
    encode_frame,
)
from swarmsim.control import (
    Gains,
    circle_trajectory,
    line_trajectory,
    lyapunov_value,
    tracking_control,
)
from swarmsim.core import (
    Posture,
    RobotGeometry,
    WheelSpeeds,
    error_posture,
    integrate_unicycle,
    wheels_to_twist,
    wrap_angle,
)
from swarmsim.estimation import (
    EkfConfig,
    SlipDetector,
    ekf_predict,
    ekf_update,
    dead_reckon,
    initial_belief,
    measurement_from_packets,
    run_estimator,
    StaleData,
)
from swarmsim.planning import (
    InvalidEndpoint,
    OccupancyGrid,
    astar,
    inflate,
    ingest_ir_scan,
    median_filter,
    save_grid,
)
from swarmsim.sim import (
    EncoderModel,
    FlowModel,
    PiConfig,
    PlantLoop,
    PlantState,
    Rect,
    Segment,
    SensorNoise,
    SlipEvent,
    World,
    active_slip,
    sample_gyro,
    sample_ir,
)
from swarmsim.swarm import (
    ConsensusConfig,
    run_networked_consensus,
    run_synchronous_consensus,
)
from swarmsim.cli.scenario import Scenario, ScenarioError


class RuntimeFault(Exception):
    """A validated scenario failed while running (exit code 3)."""


# Independent, seed-derived random streams per (robot, purpose): adding a
# robot or toggling one sensor never perturbs any other stream.
(STREAM_ENCODER, STREAM_FLOW, STREAM_GYRO, STREAM_IR, STREAM_CHANNEL,
 STREAM_SCHEDULE) = range(6)

COMPARE_VARIANTS = ("adaptive", "nonadaptive", "fixed_dt", "wheels", "flow")


def stream_rng(seed: int, robot_id: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, robot_id, purpose])


# --- scenario section builders ---------------------------------------------------


@dataclass(frozen=True)
class Rates:
    """Sensor sampling and report schedule.

    report_jitter_ms > 0 spreads each inter-report interval uniformly over
    period +- jitter, modeling a robot whose send loop does not keep exact
    time. The report payload still covers the true interval and carries the
    true send timestamp, so a timestamp-driven consumer stays consistent.
    """

    encoder_hz: float = 400.0
    flow_hz: float = 1000.0
    report_period_ms: float = 70.0
    report_jitter_ms: float = 0.0

    @property
    def encoder_period_us(self) -> int:
        return round(1e6 / self.encoder_hz)

    @property
    def flow_period_us(self) -> int:
        return round(1e6 / self.flow_hz)

    @property
    def report_period_us(self) -> int:
        return round(1e3 * self.report_period_ms)

    @property
    def report_jitter_us(self) -> int:
        return round(1e3 * self.report_jitter_ms)


def build_rates(data: dict) -> Rates:
    return Rates(**data.get("rates", {}))


def build_geometry(data: dict) -> RobotGeometry:
    return RobotGeometry(**data.get("robot", {}).get("geometry", {}))


def build_noise(data: dict) -> SensorNoise:
    robot = data.get("robot", {})
    base = SensorNoise.noiseless() if robot.get("noiseless") else SensorNoise()
    overrides = robot.get("noise", {})
    return replace(base, **overrides) if overrides else base


def build_channel(data: dict) -> ChannelModel:
    return ChannelModel(**data.get("channel", {}))


def build_world(data: dict) -> World:
    w = data["world"]
    return World(
        bounds=Rect(*w["bounds"]),
        rects=tuple(Rect(*r) for r in w.get("rects", ())),
        segments=tuple(Segment(*s) for s in w.get("segments", ())),
    )


def build_slip(data: dict) -> tuple[SlipEvent, ...]:
    return tuple(SlipEvent(**e) for e in data.get("robot", {}).get("slip", ()))


def build_start(data: dict) -> Posture:
    x, y, theta = data.get("robot", {}).get("start", (0.0, 0.0, 0.0))
    return Posture(x, y, wrap_angle(theta))


def build_ekf_config(data: dict, noise: SensorNoise, geometry: RobotGeometry,
                     rates: Rates) -> tuple[EkfConfig, bool, float | None]:
    """(config, adaptive flag, fixed dt in seconds or None)."""
    est = data.get("estimator", {})
    overrides = {}
    for key in ("slip_inflation", "slip_threshold", "slip_window"):
        if key in est:
            overrides[key] = est[key]
    cfg = EkfConfig.from_noise(
        noise, geometry,
        send_period_s=rates.report_period_ms / 1e3,
        encoder_hz=rates.encoder_hz, flow_hz=rates.flow_hz,
        **overrides,
    )
    adaptive = est.get("adaptive", True)
    fixed_dt = est.get("fixed_dt_ms")
    return cfg, adaptive, None if fixed_dt is None else fixed_dt / 1e3


def build_trajectory(data: dict, geometry: RobotGeometry):
    control = data["control"]
    ref = control["reference"]
    duration = data["duration_s"]
    period_s = control.get("period_ms", 70.0) / 1e3
    start = build_start(data)
    if "start" in ref:
        x, y, theta = ref["start"]
        ref_start = Posture(x, y, wrap_angle(theta))
    else:
        ref_start = start
    if ref["shape"] == "circle":
        if "radius" not in ref:
            raise ScenarioError(
                "control.reference.radius is required for shape 'circle'")
        traj = circle_trajectory(ref["radius"], ref["speed"], duration,
                                 period_s, ref.get("ccw", True), ref_start)
    else:
        traj = line_trajectory(ref["speed"], duration, period_s, ref_start)
    gains = Gains(**control.get("gains", {}))
    return traj, gains, period_s, start


# --- CSV and summary formatting ---------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")
    return path


@dataclass
class RunSummary:
    """What one scenario run produced; printed as structured text."""

    name: str
    kind: str
    seed: int
    digest: str
    metrics: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    wall_clock_s: float = 0.0


def format_summary(summary: RunSummary) -> str:
    lines = [
        f"scenario: {summary.name}",
        f"kind: {summary.kind}",
        f"seed: {summary.seed}",
        f"config_digest: {summary.digest}",
    ]
    lines += [f"{key}: {_fmt(value)}" for key, value in summary.metrics.items()]
    lines += [f"wrote: {path}" for path in summary.files]
    lines.append(f"wall_clock_s: {summary.wall_clock_s:.3f}")
    return "\n".join(lines)


# --- one-robot plant and sensor engine ---------------------------------------------


class RobotSim:
    """Plant, wheel PI loop, and sensor suite of one robot.

    Time advances on an integer microsecond grid so the 400 Hz encoder,
    1000 Hz flow, and report clocks stay exactly commensurate; every event
    fires at its true instant regardless of the other rates.
    """

    def __init__(self, geometry: RobotGeometry, noise: SensorNoise,
                 pi_cfg: PiConfig, start: Posture, seed: int,
                 slip_schedule: tuple[SlipEvent, ...] = (),
                 rates: Rates = Rates(), world: World | None = None,
                 robot_id: int = 0):
        self.geometry = geometry
        self.noise = noise
        self.pi_cfg = pi_cfg
        self.world = world
        self.robot_id = robot_id
        self.slip_schedule = slip_schedule
        self._loop = PlantLoop(PlantState(pose=start), pi_cfg, geometry)
        self.encoders = EncoderModel(geometry, noise,
                                     stream_rng(seed, robot_id, STREAM_ENCODER))
        self.flow = FlowModel(geometry, noise,
                              stream_rng(seed, robot_id, STREAM_FLOW))
        self.gyro_rng = stream_rng(seed, robot_id, STREAM_GYRO)
        self.ir_rng = stream_rng(seed, robot_id, STREAM_IR)
        self.truth_at_send: dict[int, Posture] = {}
        self.t_us = 0
        self._enc_us = rates.encoder_period_us
        self._flow_us = rates.flow_period_us
        self._report_us = rates.report_period_us
        self._jitter_us = rates.report_jitter_us
        self._schedule_rng = stream_rng(seed, robot_id, STREAM_SCHEDULE)
        self._next_enc = self._enc_us
        self._next_flow = self._flow_us
        self._next_report = self._report_interval()
        self._ticks_l = 0
        self._ticks_r = 0
        self._flow_l = 0.0
        self._flow_r = 0.0

    def _report_interval(self) -> int:
        if self._jitter_us == 0:
            return self._report_us
        return int(self._schedule_rng.integers(
            self._report_us - self._jitter_us,
            self._report_us + self._jitter_us + 1))

    def set_command(self, wheels: WheelSpeeds) -> None:
        self._loop.set_command(wheels.right, wheels.left)

    @property
    def pose(self) -> Posture:
        loop = self._loop
        return Posture(loop.x, loop.y, loop.theta)

    def advance_to(self, target_us: int) -> list[SensorPacket]:
        """Run plant and sensors up to target time; returns reports sent."""
        sent: list[SensorPacket] = []
        loop = self._loop
        schedule = self.slip_schedule
        flow_dt = self._flow_us * 1e-6
        enc_dt = self._enc_us * 1e-6
        while self.t_us < target_us:
            t_next = min(target_us, self._next_enc, self._next_flow,
                         self._next_report)
            slip = active_slip(schedule, self.t_us / 1e3) if schedule else None
            loop.advance((t_next - self.t_us) * 1e-6, slip)
            self.t_us = t_next
            if self.t_us == self._next_flow:
                v = 0.5 * (loop.ground_right + loop.ground_left)
                w = (loop.ground_right - loop.ground_left) / self.geometry.wheel_base
                dl, dr = self.flow.sample_vw(v, w, flow_dt)
                self._flow_l += dl
                self._flow_r += dr
                self._next_flow += self._flow_us
            if self.t_us == self._next_enc:
                tr, tl = self.encoders.sample_speeds(loop.act_right,
                                                     loop.act_left, enc_dt)
                self._ticks_r += tr
                self._ticks_l += tl
                self._next_enc += self._enc_us
            if self.t_us == self._next_report:
                sent.append(self._assemble_report())
                self._next_report += self._report_interval()
        return sent

    @staticmethod
    def _wrap_i16(value: int) -> int:
        return ((value + 0x8000) & 0xFFFF) - 0x8000

    @classmethod
    def _wrap_flow(cls, mm: float) -> float:
        # Snap to the 0.1 mm wire grid before wrapping so the wrapped value
        # quantizes back to the same i16.
        return cls._wrap_i16(round(mm / 0.1)) * 0.1

    def _assemble_report(self) -> SensorPacket:
        """Snapshot the free-running odometry counters at send time."""
        pose = self.pose
        if self.world is not None:
            ir = tuple(sample_ir(self.world, pose, self.geometry, self.noise,
                                 self.ir_rng))
        else:
            ir = (None,) * 5
        packet = SensorPacket(
            robot_id=self.robot_id,
            t_sent=self.t_us // 1000,
            ticks_left=self._wrap_i16(self._ticks_l),
            ticks_right=self._wrap_i16(self._ticks_r),
            flow_dx_left=self._wrap_flow(self._flow_l),
            flow_dx_right=self._wrap_flow(self._flow_r),
            gyro_heading=sample_gyro(pose, self.noise, self.gyro_rng),
            ir=ir,
        )
        self.truth_at_send[packet.t_sent] = pose
        return packet


@dataclass
class SensorRun:
    """Everything one simulated run handed to the server side."""

    delivered: list[SensorPacket]
    truth_at_send: dict[int, Posture]
    final_truth: Posture
    noise_digest: str
    sent: int
    dropped: int
    undecodable: int
    undelivered: int


def simulate_reports(data: dict, seed: int) -> SensorRun:
    """Open-loop run under a constant wheel command, reports via the channel."""
    geometry = build_geometry(data)
    noise = build_noise(data)
    rates = build_rates(data)
    start = build_start(data)
    command = data["robot"]["command"]
    world = build_world(data) if "world" in data else None
    sim = RobotSim(geometry, noise, PiConfig(), start, seed,
                   slip_schedule=build_slip(data), rates=rates, world=world)
    sim.set_command(WheelSpeeds(right=command[0], left=command[1]))
    channel = StarChannel(build_channel(data), stream_rng(seed, 0, STREAM_CHANNEL))
    digest = hashlib.sha256()
    delivered: list[SensorPacket] = []
    undecodable = 0
    sent = 0
    duration_us = round(data["duration_s"] * 1e6)
    step_us = rates.report_period_us
    t_us = 0
    while t_us < duration_us:
        t_us = min(t_us + step_us, duration_us)
        for packet in sim.advance_to(t_us):
            frame = encode_frame(packet)
            digest.update(frame)
            channel.send(frame, float(packet.t_sent), packet.robot_id)
            sent += 1
        for delivery in channel.pop_due(t_us / 1e3):
            try:
                delivered.append(decode_frame(delivery.data))
            except FrameError:
                undecodable += 1
    return SensorRun(
        delivered=delivered,
        truth_at_send=sim.truth_at_send,
        final_truth=sim.pose,
        noise_digest=digest.hexdigest(),
        sent=sent,
        dropped=channel.dropped,
        undecodable=undecodable,
        undelivered=channel.pending,
    )


def position_errors(times_ms, means, truth_at: dict[int, Posture]) -> np.ndarray:
    errors = []
    for t, mean in zip(times_ms, means):
        truth = truth_at[int(t)]
        errors.append(math.hypot(mean[0] - truth.x, mean[1] - truth.y))
    return np.asarray(errors)


def _rmse(errors: np.ndarray) -> float:
    return float(math.sqrt(float(np.mean(np.square(errors))))) if errors.size else 0.0


# --- track -------------------------------------------------------------------------


TRACK_COLUMNS = ["t", "x_r", "y_r", "theta_r", "x_c", "y_c", "theta_c",
                 "x_e", "y_e", "theta_e", "v1", "v2", "V"]


def run_track(scenario: Scenario, out_dir: Path) -> RunSummary:
    t0 = time.perf_counter()
    data = scenario.data
    geometry = build_geometry(data)
    traj, gains, period_s, start = build_trajectory(data, geometry)
    feedback = data["control"].get("feedback", "truth")
    steps = int(round(data["duration_s"] / period_s))
    if feedback == "truth":
        rows = _track_truth_loop(traj, gains, period_s, start, steps, geometry)
    else:
        rows = _track_estimator_loop(scenario, traj, gains, period_s, start,
                                     steps, geometry)
    planar = [math.hypot(r[7], r[8]) for r in rows]
    summary = RunSummary(scenario.name, scenario.kind, scenario.seed,
                         scenario.digest)
    summary.metrics = {
        "steps": len(rows),
        "tracking_rmse_mm": _rmse(np.asarray(planar)),
        "terminal_error_mm": planar[-1],
        "terminal_heading_error_rad": abs(rows[-1][9]),
        "final_V": rows[-1][12],
    }
    summary.files.append(write_csv(out_dir / "track.csv", TRACK_COLUMNS, rows))
    summary.wall_clock_s = time.perf_counter() - t0
    return summary


def _track_truth_loop(traj, gains, period_s, start, steps, geometry):
    """Noiseless kinematic closed loop: the controller sees the true pose."""
    pose = start
    rows = []
    for i in range(steps):
        t = i * period_s
        ref, v_r, w_r = traj.reference_at(t)
        wheels = tracking_control(ref, pose, v_r, w_r, gains, geometry)
        err = error_posture(ref, pose)
        rows.append((t, ref.x, ref.y, ref.theta, pose.x, pose.y, pose.theta,
                     err.x, err.y, err.theta, wheels.right, wheels.left,
                     lyapunov_value(err)))
        pose = integrate_unicycle(pose, wheels_to_twist(wheels, geometry),
                                  period_s)
    return rows


def _track_estimator_loop(scenario, traj, gains, period_s, start, steps,
                          geometry):
    """Full plant with the filter in the loop; commands use the estimate."""
    data = scenario.data
    noise = build_noise(data)
    rates = build_rates(data)
    cfg, adaptive, fixed_dt = build_ekf_config(data, noise, geometry, rates)
    sim = RobotSim(geometry, noise, PiConfig(), start, scenario.seed,
                   slip_schedule=build_slip(data), rates=rates)
    channel = StarChannel(build_channel(data),
                          stream_rng(scenario.seed, 0, STREAM_CHANNEL))
    belief = initial_belief(start)
    detector = SlipDetector(cfg)
    prev = SensorPacket(robot_id=0, t_sent=0, ticks_left=0, ticks_right=0,
                        flow_dx_left=0.0, flow_dx_right=0.0,
                        gyro_heading=start.theta)
    period_us = round(period_s * 1e6)
    rows = []
    for i in range(steps):
        t_us = i * period_us
        for packet in sim.advance_to(t_us):
            channel.send(encode_frame(packet), float(packet.t_sent),
                         packet.robot_id)
        for delivery in channel.pop_due(t_us / 1e3):
            try:
                packet = decode_frame(delivery.data)
            except FrameError:
                continue
            try:
                meas = measurement_from_packets(prev, packet, geometry)
            except StaleData:
                continue
            prev = packet
            slip = detector.update(meas)
            belief = ekf_predict(belief, fixed_dt or meas.dt, cfg)
            belief = ekf_update(belief, meas, cfg, slip and adaptive)
        t = i * period_s
        ref, v_r, w_r = traj.reference_at(t)
        wheels = tracking_control(ref, belief.pose, v_r, w_r, gains, geometry)
        sim.set_command(wheels)
        truth = sim.pose
        err = error_posture(ref, truth)
        rows.append((t, ref.x, ref.y, ref.theta, truth.x, truth.y, truth.theta,
                     err.x, err.y, err.theta, wheels.right, wheels.left,
                     lyapunov_value(err)))
    return rows


# --- localize and compare ------------------------------------------------------------


ESTIMATE_COLUMNS = ["t", "x_t", "y_t", "theta_t", "x_h", "y_h", "theta_h",
                    "err_mm", "slip"]


def _run_variant(name: str, run: SensorRun, start: Posture,
                 geometry: RobotGeometry, cfg: EkfConfig,
                 report_period_s: float):
    if name == "adaptive":
        return run_estimator(run.delivered, start, geometry, cfg)
    if name == "nonadaptive":
        return run_estimator(run.delivered, start, geometry, cfg,
                             adaptive=False)
    if name == "fixed_dt":
        return run_estimator(run.delivered, start, geometry, cfg,
                             fixed_dt_s=report_period_s)
    if name == "wheels" or name == "flow":
        return dead_reckon(run.delivered, start, geometry, name)
    raise ScenarioError(f"unknown estimator variant {name!r}; "
                        f"choose from {', '.join(COMPARE_VARIANTS)}")


def run_localize(scenario: Scenario, out_dir: Path) -> RunSummary:
    t0 = time.perf_counter()
    data = scenario.data
    geometry = build_geometry(data)
    noise = build_noise(data)
    rates = build_rates(data)
    start = build_start(data)
    cfg, adaptive, fixed_dt = build_ekf_config(data, noise, geometry, rates)
    run = simulate_reports(data, scenario.seed)
    estimate = run_estimator(run.delivered, start, geometry, cfg,
                             adaptive=adaptive, fixed_dt_s=fixed_dt)
    rows = []
    for t, mean, slip in zip(estimate.times_ms, estimate.means,
                             estimate.slip_flags):
        truth = run.truth_at_send[int(t)]
        err = math.hypot(mean[0] - truth.x, mean[1] - truth.y)
        rows.append((t / 1e3, truth.x, truth.y, truth.theta,
                     mean[0], mean[1], wrap_angle(mean[2]), err, int(slip)))
    errors = position_errors(estimate.times_ms, estimate.means,
                             run.truth_at_send)
    summary = RunSummary(scenario.name, scenario.kind, scenario.seed,
                         scenario.digest)
    summary.metrics = {
        "reports_sent": run.sent,
        "reports_processed": len(rows),
        "frames_lost": run.dropped,
        "frames_undecodable": run.undecodable,
        "stale_skipped": estimate.stale_skipped,
        "slip_flagged_reports": int(sum(estimate.slip_flags)),
        "position_rmse_mm": _rmse(errors),
        "terminal_error_mm": float(errors[-1]) if errors.size else 0.0,
        "noise_digest": run.noise_digest[:12],
    }
    summary.files.append(write_csv(out_dir / "estimates.csv",
                                   ESTIMATE_COLUMNS, rows))
    summary.wall_clock_s = time.perf_counter() - t0
    return summary


def run_compare(scenario: Scenario, out_dir: Path,
                variants: tuple[str, ...] = ("adaptive", "nonadaptive",
                                             "fixed_dt", "wheels")) -> RunSummary:
    """One run per estimator variant on identical noise streams."""
    t0 = time.perf_counter()
    data = scenario.data
    geometry = build_geometry(data)
    noise = build_noise(data)
    rates = build_rates(data)
    start = build_start(data)
    cfg, _, _ = build_ekf_config(data, noise, geometry, rates)
    period_s = rates.report_period_ms / 1e3
    digests = {}
    rows = []
    for name in variants:
        run = simulate_reports(data, scenario.seed)
        digests[name] = run.noise_digest
        estimate = _run_variant(name, run, start, geometry, cfg, period_s)
        errors = position_errors(estimate.times_ms, estimate.means,
                                 run.truth_at_send)
        terminal = float(errors[-1]) if errors.size else 0.0
        rows.append((name, _rmse(errors), terminal, estimate.stale_skipped))
    if len(set(digests.values())) > 1:
        raise RuntimeFault(
            "common-random-number discipline violated: variant noise digests "
            f"differ: {digests}")
    summary = RunSummary(scenario.name, scenario.kind, scenario.seed,
                         scenario.digest)
    for name, rmse, terminal, stale in rows:
        summary.metrics[f"{name}_rmse_mm"] = rmse
        summary.metrics[f"{name}_terminal_mm"] = terminal
    summary.metrics["noise_digest"] = next(iter(digests.values()))[:12]
    summary.files.append(write_csv(
        out_dir / "compare.csv",
        ["variant", "rmse_mm", "terminal_mm", "stale_skipped"], rows))
    summary.wall_clock_s = time.perf_counter() - t0
    return summary


# --- consensus -----------------------------------------------------------------------


def run_consensus(scenario: Scenario, out_dir: Path) -> RunSummary:
    t0 = time.perf_counter()
    data = scenario.data
    section = dict(data["consensus"])
    headings = section.pop("headings")
    mode = section.pop("mode", "networked")
    cfg = ConsensusConfig(mode=mode, **section)
    if mode == "synchronous":
        result = run_synchronous_consensus(headings, cfg)
    else:
        result = run_networked_consensus(
            headings, cfg,
            channel_model=build_channel(data),
            geometry=build_geometry(data),
            gyro_sigma=build_noise(data).gyro_sigma,
            seed=scenario.seed,
        )
    n = len(headings)
    header = ["t", "round", "mean", "spread"] + [f"h{i}" for i in range(n)]
    rows = [(rec.t_s, i, rec.mean, rec.spread, *rec.headings)
            for i, rec in enumerate(result.trace)]
    summary = RunSummary(scenario.name, scenario.kind, scenario.seed,
                         scenario.digest)
    summary.metrics = {
        "robots": n,
        "converged": result.converged,
        "rounds": result.rounds,
        "time_s": result.time_s,
        "final_spread_rad": result.trace[-1].spread if result.trace else 0.0,
        "staleness_warnings": result.staleness_warnings,
    }
    summary.files.append(write_csv(out_dir / "consensus.csv", header, rows))
    summary.wall_clock_s = time.perf_counter() - t0
    return summary


# --- plan ----------------------------------------------------------------------------


def _point_segment_distance(px: float, py: float, seg: Segment) -> float:
    vx, vy = seg.bx - seg.ax, seg.by - seg.ay
    t = ((px - seg.ax) * vx + (py - seg.ay) * vy) / (vx * vx + vy * vy)
    t = max(0.0, min(1.0, t))
    return math.hypot(px - (seg.ax + t * vx), py - (seg.ay + t * vy))


def _point_rect_distance(px: float, py: float, rect: Rect) -> float:
    dx = max(rect.x0 - px, 0.0, px - rect.x1)
    dy = max(rect.y0 - py, 0.0, py - rect.y1)
    return math.hypot(dx, dy)


def world_clearance(px: float, py: float, world: World) -> float:
    """Distance to the nearest obstacle or arena wall."""
    values = [min(px - world.bounds.x0, world.bounds.x1 - px,
                  py - world.bounds.y0, world.bounds.y1 - py)]
    values += [_point_rect_distance(px, py, r) for r in world.rects]
    values += [_point_segment_distance(px, py, s) for s in world.segments]
    return min(values)


def survey_poses(plan: dict, world: World) -> list[Posture]:
    survey = plan["survey"]
    headings = survey.get("headings", 12)
    min_clear = survey.get("min_clearance_mm", 250.0)
    poses = []
    for x in survey["x_lines"]:
        for y in survey["y_lines"]:
            if world_clearance(x, y, world) < min_clear:
                continue
            for k in range(headings):
                poses.append(Posture(x, y, wrap_angle(2.0 * math.pi * k / headings)))
    return poses


def run_plan(scenario: Scenario, out_dir: Path) -> RunSummary:
    t0 = time.perf_counter()
    data = scenario.data
    geometry = build_geometry(data)
    noise = build_noise(data)
    world = build_world(data)
    plan = data["plan"]
    grid = OccupancyGrid(
        plan["resolution_mm"],
        tuple(plan.get("origin_mm", (0.0, 0.0))),
        plan["width_cells"],
        plan["height_cells"],
    )
    ir_rng = stream_rng(scenario.seed, 0, STREAM_IR)
    poses = survey_poses(plan, world)
    if not poses:
        raise RuntimeFault("survey produced no poses with the required clearance")
    for pose in poses:
        readings = sample_ir(world, pose, geometry, noise, ir_rng)
        ingest_ir_scan(grid, pose, readings, geometry)
    filtered = median_filter(grid, plan.get("median_window", 3))
    margin = plan.get("margin_mm", geometry.body_radius + 20.0)
    planner_grid = inflate(filtered, margin)
    start = planner_grid.cell_of(*plan["start"])
    goal = planner_grid.cell_of(*plan["goal"])
    if start is None or goal is None:
        raise InvalidEndpoint("start or goal lies outside the grid")
    path = astar(planner_grid, start, goal)
    clear = min(world_clearance(*planner_grid.cell_center(c), world)
                for c in path.cells)
    summary = RunSummary(scenario.name, scenario.kind, scenario.seed,
                         scenario.digest)
    summary.metrics = {
        "scans": len(poses),
        "skipped_readings": grid.skipped_readings,
        "occupied_cells": int(np.count_nonzero(filtered.occupancy())),
        "unknown_cells": int(np.count_nonzero(~filtered.observed)),
        "inflation_margin_mm": margin,
        "path_cells": len(path.cells),
        "path_cost": path.cost,
        "path_length_mm": path.cost * planner_grid.resolution,
        "cells_expanded": len(path.expanded),
        "min_true_clearance_mm": clear,
    }
    pgm, txt = save_grid(filtered, out_dir / "map")
    rows = [(ix, iy, *planner_grid.cell_center((ix, iy)))
            for ix, iy in path.cells]
    summary.files += [
        pgm, txt,
        write_csv(out_dir / "path.csv", ["ix", "iy", "x_mm", "y_mm"], rows),
    ]
    summary.wall_clock_s = time.perf_counter() - t0
    return summary


RUNNERS = {
    "track": run_track,
    "localize": run_localize,
    "consensus": run_consensus,
    "plan": run_plan,
}


def run_scenario(scenario: Scenario, out_dir: Path) -> RunSummary:
    """Dispatch a scenario to the runner its kind names."""
    return RUNNERS[scenario.kind](scenario, out_dir)
