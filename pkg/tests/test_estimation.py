from __future__ import annotations

import math

import numpy as np
import pytest

from swarmsim.comms import SensorPacket
from swarmsim.core import Posture, RobotGeometry, wrap_angle
from swarmsim.estimation import (
    EkfBelief,
    EkfConfig,
    EstimationFault,
    SlipDetector,
    StaleData,
    VelocityMeasurement,
    dead_reckon,
    ekf_predict,
    ekf_update,
    initial_belief,
    measurement_from_packets,
    run_estimator,
    transition_jacobian,
)
from swarmsim.sim import SensorNoise

GEOM = RobotGeometry()
CFG = EkfConfig()


def packet(t_sent, ticks=(0, 0), flow=(0.0, 0.0), heading=0.0, robot_id=0):
    return SensorPacket(
        robot_id=robot_id, t_sent=t_sent,
        ticks_left=ticks[0], ticks_right=ticks[1],
        flow_dx_left=flow[0], flow_dx_right=flow[1],
        gyro_heading=heading,
    )


def meas(dt=0.07, v_wheel=0.0, w_wheel=0.0, v_flow=0.0, w_flow=0.0,
         heading=0.0, t_ms=70.0):
    return VelocityMeasurement(dt, v_wheel, w_wheel, v_flow, w_flow, heading, t_ms)


# --- measurement conversion ---------------------------------------------------


def test_conversion_example():
    m = measurement_from_packets(
        packet(0), packet(70, ticks=(28, 28), flow=(0.7, 0.7), heading=0.01), GEOM
    )
    assert m.dt == pytest.approx(0.07)
    assert m.v_wheel == pytest.approx(200.0)     # 14 mm per wheel over 70 ms
    assert m.w_wheel == 0.0
    assert m.v_flow == pytest.approx(10.0)
    assert m.w_flow == pytest.approx(0.0, abs=1e-9)
    assert m.heading == pytest.approx(0.01)


def test_conversion_turn():
    # Right wheel faster: counterclockwise.
    m = measurement_from_packets(packet(0), packet(70, ticks=(10, 20)), GEOM)
    assert m.v_wheel == pytest.approx(15 * 0.5 / 0.07)
    assert m.w_wheel == pytest.approx((20 - 10) * 0.5 / (100.0 * 0.07))
    assert m.w_wheel > 0


def test_stale_report_rejected():
    with pytest.raises(StaleData):
        measurement_from_packets(packet(140), packet(140), GEOM)
    with pytest.raises(StaleData):
        measurement_from_packets(packet(140), packet(70), GEOM)


def _jittered_straight_packets(n=200, speed=150.0, seed=5):
    # Noiseless straight run reported at irregular 50-100 ms intervals.
    rng = np.random.default_rng(seed)
    out, truth = [], {}
    t_ms = 0
    for _ in range(n):
        t_ms += int(rng.integers(50, 101))
        mm = speed * t_ms / 1e3
        out.append(packet(t_ms, ticks=(round(mm / GEOM.mm_per_tick),) * 2,
                          flow=(round(mm / 0.1) * 0.1,) * 2))
        truth[t_ms] = mm
    return out, truth


def test_fixed_filter_step_depreciates_on_jittered_stream():
    # A filter that always predicts 70 ms ahead accrues position error
    # proportional to the timing jitter; the timestamp-driven filter does not.
    pkts, truth = _jittered_straight_packets()
    start = Posture(0, 0, 0)
    ts = run_estimator(pkts, start, GEOM, CFG)
    fx = run_estimator(pkts, start, GEOM, CFG, fixed_dt_s=0.07)

    def rmse(run):
        errs = [math.hypot(m[0] - truth[int(t)], m[1])
                for t, m in zip(run.times_ms, run.means)]
        return math.sqrt(sum(e * e for e in errs) / len(errs))

    assert rmse(fx) >= 2.0 * rmse(ts)


def test_conversion_spans_a_lost_report():
    # Counters are free-running: differencing across a 140 ms gap (one lost
    # frame) recovers the average velocity over the whole gap.
    m = measurement_from_packets(
        packet(70, ticks=(28, 28), flow=(14.0, 14.0)),
        packet(210, ticks=(84, 84), flow=(42.0, 42.0)), GEOM)
    assert m.dt == pytest.approx(0.14)
    assert m.v_wheel == pytest.approx(200.0)
    assert m.v_flow == pytest.approx(200.0)


def test_conversion_handles_counter_wrap():
    # 16 ticks and 0.1 mm of flow of true motion across the i16 wrap point.
    m = measurement_from_packets(
        packet(0, ticks=(32760, 32760), flow=(3276.7, 3276.7)),
        packet(70, ticks=(-32760, -32760), flow=(-3276.8, -3276.8)), GEOM)
    assert m.v_wheel == pytest.approx(16 * 0.5 / 0.07)
    assert m.v_flow == pytest.approx(0.1 / 0.07)


# --- prediction ----------------------------------------------------------------


def test_predict_stationary_grows_by_process_noise():
    belief = EkfBelief(np.zeros(5), np.zeros((5, 5)), 0.0)
    out = ekf_predict(belief, 0.1, CFG)
    assert np.allclose(out.mean, 0.0)
    assert np.allclose(out.cov, np.diag(CFG.q_diag) * 0.1)
    assert out.t_ms == pytest.approx(100.0)


def test_predict_straight_motion():
    mean = np.array([0.0, 0.0, 0.0, 100.0, 0.0])
    belief = EkfBelief(mean, np.eye(5), 0.0)
    out = ekf_predict(belief, 0.07, CFG)
    assert out.mean[0] == pytest.approx(7.0)
    assert out.mean[1] == pytest.approx(0.0)


def test_predict_wraps_heading():
    mean = np.array([0.0, 0.0, 3.1, 0.0, 1.0])
    out = ekf_predict(EkfBelief(mean, np.eye(5), 0.0), 0.1, CFG)
    assert out.mean[2] == pytest.approx(wrap_angle(3.2))
    assert out.mean[2] <= math.pi


def test_predict_requires_positive_dt():
    with pytest.raises(ValueError):
        ekf_predict(initial_belief(Posture(0, 0, 0)), 0.0, CFG)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-4

    def propagate(mean, dt):
        x, y, theta, v, w = mean
        return np.array([
            x + v * dt * math.cos(theta),
            y + v * dt * math.sin(theta),
            theta + w * dt,          # unwrapped on purpose for differencing
            v,
            w,
        ])

    for _ in range(100):
        mean = np.array([
            rng.uniform(-1000, 1000), rng.uniform(-1000, 1000),
            rng.uniform(-3, 3), rng.uniform(-180, 180), rng.uniform(-3, 3),
        ])
        dt = rng.uniform(0.01, 0.2)
        analytic = transition_jacobian(mean, dt)
        numeric = np.zeros((5, 5))
        for j in range(5):
            dv = np.zeros(5)
            dv[j] = h
            numeric[:, j] = (propagate(mean + dv, dt) - propagate(mean - dv, dt)) / (2 * h)
        assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-6)


# --- update ----------------------------------------------------------------------


def test_update_zero_innovation_keeps_mean():
    mean = np.array([5.0, -3.0, 0.5, 120.0, 0.4])
    belief = EkfBelief(mean, np.eye(5) * 10.0, 0.0)
    z = meas(v_wheel=120.0, w_wheel=0.4, v_flow=120.0, w_flow=0.4, heading=0.5)
    out = ekf_update(belief, z, CFG, slip=False)
    assert np.allclose(out.mean, mean, atol=1e-9)
    assert np.trace(out.cov) < np.trace(belief.cov)


def test_update_wrapped_heading_innovation():
    # Belief just below +pi, measurement just above -pi: the short way round
    # crosses the branch cut.
    mean = np.array([0.0, 0.0, 3.1, 0.0, 0.0])
    belief = EkfBelief(mean, np.diag([1, 1, 0.1, 1, 1]).astype(float), 0.0)
    out = ekf_update(belief, meas(heading=-3.1), CFG, slip=False)
    assert abs(out.mean[2]) > 3.1   # moved toward pi, not through zero


def test_update_slip_posterior_tracks_flow():
    # Wheels claim 200 mm/s, flow says standing still, slip confirmed:
    # the fused speed must land within 1% of the disagreement from flow.
    prior_var = 25.0
    belief = EkfBelief(np.zeros(5), np.diag([1, 1, 1e-4, prior_var, 0.01]), 0.0)
    z = meas(v_wheel=200.0, v_flow=0.0)
    out = ekf_update(belief, z, CFG, slip=True)

    # Independent scalar fusion of the v channel (diagonal prior, so the
    # Kalman update reduces to precision-weighted averaging).
    r_wheel = CFG.r_base[0] * CFG.slip_inflation
    r_flow = CFG.r_base[2]
    precision = 1 / prior_var + 1 / r_wheel + 1 / r_flow
    expected_v = (200.0 / r_wheel + 0.0 / r_flow + 0.0 / prior_var) / precision
    assert out.mean[3] == pytest.approx(expected_v, abs=1e-9)
    assert abs(out.mean[3]) < 2.0


def test_update_without_slip_splits_disagreement():
    belief = EkfBelief(np.zeros(5), np.diag([1, 1, 1e-4, 1e6, 0.01]), 0.0)
    z = meas(v_wheel=200.0, v_flow=0.0)
    out = ekf_update(belief, z, CFG, slip=False)
    # Default trust is balanced, so the fused speed sits near the middle.
    assert 60.0 < out.mean[3] < 140.0


def test_update_singular_innovation_faults():
    cfg = EkfConfig(r_base=(0.0,) * 5)
    belief = EkfBelief(np.zeros(5), np.zeros((5, 5)), 0.0)
    with pytest.raises(EstimationFault):
        ekf_update(belief, meas(), cfg, slip=False)


def test_covariance_stays_symmetric_psd():
    rng = np.random.default_rng(1)
    belief = initial_belief(Posture(0, 0, 0))
    for i in range(10_000):
        dt = rng.uniform(0.01, 0.2)
        belief = ekf_predict(belief, dt, CFG)
        z = meas(
            dt=dt,
            v_wheel=rng.uniform(-180, 180), w_wheel=rng.uniform(-3, 3),
            v_flow=rng.uniform(-180, 180), w_flow=rng.uniform(-3, 3),
            heading=rng.uniform(-3.1, 3.1), t_ms=belief.t_ms,
        )
        belief = ekf_update(belief, z, CFG, slip=bool(rng.integers(2)))
        assert np.allclose(belief.cov, belief.cov.T, atol=1e-9)
        min_eig = np.linalg.eigvalsh(belief.cov).min()
        assert min_eig > -1e-9


# --- slip detector ---------------------------------------------------------------


def test_detector_needs_majority():
    det = SlipDetector(CFG)
    slipping = meas(v_wheel=200.0, v_flow=0.0)
    clean = meas(v_wheel=100.0, v_flow=100.0)
    assert not det.update(slipping)          # 1 of window
    assert not det.update(slipping)          # 2 of window
    assert det.update(slipping)              # 3: majority reached
    assert det.update(clean)                 # still 3 of last 5
    assert det.update(clean)                 # 3 of [T T T F F]
    assert not det.update(clean)             # 2 of [T T F F F]: majority lost
    # Recovery is symmetric: three fresh slip readings re-arm it.
    assert not det.update(slipping)
    assert not det.update(slipping)
    assert det.update(slipping)


def test_detector_threshold_boundary():
    det = SlipDetector(CFG)
    at = meas(v_wheel=120.0, v_flow=100.0)     # exactly 20: not beyond
    above = meas(v_wheel=120.1, v_flow=100.0)
    for _ in range(5):
        assert not det.update(at)
    for _ in range(5):
        det.update(above)
    assert det.update(above)


# --- dead reckoning ---------------------------------------------------------------


def _straight_packets(n=10, period_ms=70, speed=100.0):
    # Free-running wheel and flow counters consistent with a straight run.
    out = []
    per_wheel_mm = speed * period_ms / 1e3
    ticks = round(per_wheel_mm / GEOM.mm_per_tick)
    for k in range(1, n + 1):
        out.append(packet(k * period_ms, ticks=(k * ticks, k * ticks),
                          flow=(k * per_wheel_mm, k * per_wheel_mm)))
    return out


def test_dead_reckon_wheels_straight():
    run = dead_reckon(_straight_packets(), Posture(0, 0, 0), GEOM, "wheels")
    assert run.final_pose().x == pytest.approx(70.0, abs=1e-6)
    assert run.final_pose().y == pytest.approx(0.0, abs=1e-9)


def test_dead_reckon_flow_ignores_spinning_wheels():
    # Stuck robot: the wheel counters keep counting, the flow counters freeze.
    pkts = [packet(k * 70, ticks=(k * 28, k * 28), flow=(0.0, 0.0))
            for k in range(1, 11)]
    run = dead_reckon(pkts, Posture(0, 0, 0), GEOM, "flow")
    assert run.final_pose().x == pytest.approx(0.0, abs=1e-9)
    wheels = dead_reckon(pkts, Posture(0, 0, 0), GEOM, "wheels")
    assert wheels.final_pose().x == pytest.approx(140.0, abs=1e-6)


def test_dead_reckon_rejects_unknown_source():
    with pytest.raises(ValueError):
        dead_reckon([], Posture(0, 0, 0), GEOM, "lidar")


def test_run_estimator_skips_stale_reports():
    pkts = _straight_packets(6)
    shuffled = [pkts[0], pkts[2], pkts[1], pkts[3], pkts[4], pkts[5]]
    run = run_estimator(shuffled, Posture(0, 0, 0), GEOM, CFG)
    assert run.stale_skipped == 1
    assert len(run.times_ms) == 5
    assert run.times_ms == sorted(run.times_ms)


def test_run_estimator_converges_on_straight_run():
    run = run_estimator(_straight_packets(50), Posture(0, 0, 0), GEOM, CFG)
    # Speed estimate settles at the true 100 mm/s and position tracks x = v t.
    assert run.means[-1][3] == pytest.approx(100.0, abs=2.0)
    assert run.final_pose().x == pytest.approx(350.0, abs=5.0)
    assert not run.slip_flags[-1]


def test_config_from_noise_balances_channels():
    cfg = EkfConfig.from_noise(SensorNoise(), GEOM)
    r = cfg.r_base
    # Wheel and flow speed variances are the same order of magnitude, so
    # neither channel dominates until slip inflation kicks in.
    assert 0.2 < r[0] / r[2] < 5.0
    assert r[4] == pytest.approx(1e-4, rel=0.01)


def test_config_validation():
    with pytest.raises(ValueError):
        EkfConfig(q_diag=(1.0, 1.0))
    with pytest.raises(ValueError):
        EkfConfig(slip_inflation=0.5)
    with pytest.raises(ValueError):
        EkfConfig(slip_threshold=0.0)
