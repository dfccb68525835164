"""End-to-end sensor-log fusion.

Builds one keyframe per period: preintegrates the IMU segment since the last
keyframe, attaches whatever relative-pose / heading / velocity / height
measurements fall within half a period of the keyframe time, optimizes the
sliding window, and marginalizes past its tail. Heading measurements pass an
innovation gate against the IMU-predicted state before entering the graph.

The initial heading comes from the magnetometer: the first sample of the
bootstrap window that agrees with the window's circular median (so a faulty
first sample cannot poison the start), mirroring the magnetometer's role of
supplying the initial heading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .factors import (
    FlowVelocityFactor,
    HeightFactor,
    ImuFactor,
    MagHeadingFactor,
    PoseAnchorFactor,
    PriorFactor,
    RelPoseFactor,
)
from .geom import NavState, Pose3, Rotation3, wrap_angle, yaw_of
from .graph import Graph, SolverSettings
from .preintegration import integrate_arrays, predict
from .scenario import Scenario
from .sensors import RelPoseRow, SensorLog


@dataclass
class FusionConfig:
    """Resolved estimator settings (all fields concrete)."""

    window: int = 25
    keyframe_rate: float = 2.0
    gravity: float = 9.81
    max_iterations: int = 25
    lambda_init: float = 1e-6
    cost_tolerance: float = 1e-6
    gate: float = 0.25
    heading_bootstrap: float = 3.0
    level_window: float = 1.0
    huber: dict = field(default_factory=dict)
    gyro_noise: float = 1e-3
    accel_noise: float = 1e-2
    gyro_bias_rw: float = 1e-5
    accel_bias_rw: float = 1e-4
    mag_sigma: float = 0.02
    flow_sigma: float = 0.05
    height_sigma: float = 0.05
    lidar_rot_sigma: float = 0.002
    lidar_trans_sigma: float = 0.02
    vio_rot_sigma: float = 0.004
    vio_trans_sigma: float = 0.04
    loop_rot_sigma: float = 0.001
    loop_trans_sigma: float = 0.01
    prior_tilt_sigma: float = 3e-3
    prior_rot_sigma: float = 0.02
    prior_pos_sigma: float = 0.01
    prior_vel_sigma: float = 0.1
    prior_ba_sigma: float = 0.05
    prior_bg_sigma: float = 0.02
    use_mag: bool = True
    use_flow: bool = True
    use_height: bool = True
    use_lidar: bool = True
    use_vio: bool = True
    use_loops: bool = True

    def validate(self) -> None:
        if not (self.use_lidar or self.use_vio):
            raise InputError(
                "run rejected as unobservable: enable at least one "
                "odometry source (lidar or vio)")
        for name in ("gyro_noise", "accel_noise", "gyro_bias_rw",
                     "accel_bias_rw", "mag_sigma", "flow_sigma",
                     "height_sigma", "lidar_rot_sigma", "lidar_trans_sigma",
                     "vio_rot_sigma", "vio_trans_sigma", "loop_rot_sigma",
                     "loop_trans_sigma"):
            if getattr(self, name) <= 0:
                raise InputError(f"estimator {name} must be positive")
        if self.window < 2:
            raise InputError("estimator window must be >= 2")


def resolve_fusion_config(scenario: Scenario) -> FusionConfig:
    """Estimator settings from a scenario file.

    Whitening sigmas inherit the scenario's simulated sensor noise when that
    noise is positive; zero-noise scenarios keep the defaults so information
    matrices stay positive definite.
    """
    e = scenario.estimator
    cfg = FusionConfig(
        window=e.window,
        keyframe_rate=e.keyframe_rate or scenario.keyframe_rate,
        gravity=scenario.gravity,
        max_iterations=e.max_iterations,
        lambda_init=e.lambda_init,
        cost_tolerance=e.cost_tolerance,
        gate=e.gate,
        heading_bootstrap=e.heading_bootstrap,
        level_window=e.level_window,
        huber=dict(e.huber),
        prior_tilt_sigma=e.prior_tilt_sigma,
        prior_rot_sigma=e.prior_rot_sigma,
        prior_pos_sigma=e.prior_pos_sigma,
        prior_vel_sigma=e.prior_vel_sigma,
        prior_ba_sigma=e.prior_ba_sigma,
        prior_bg_sigma=e.prior_bg_sigma,
    )

    def pick(explicit, simulated, default):
        if explicit is not None:
            return explicit
        if simulated > 0:
            return simulated
        return default

    cfg.gyro_noise = pick(e.gyro_noise, scenario.imu.gyro_noise, cfg.gyro_noise)
    cfg.accel_noise = pick(e.accel_noise, scenario.imu.accel_noise, cfg.accel_noise)
    cfg.gyro_bias_rw = pick(e.gyro_bias_rw, scenario.imu.gyro_bias_rw, cfg.gyro_bias_rw)
    cfg.accel_bias_rw = pick(e.accel_bias_rw, scenario.imu.accel_bias_rw, cfg.accel_bias_rw)
    cfg.mag_sigma = pick(e.mag_sigma, scenario.mag.sigma, cfg.mag_sigma)
    cfg.flow_sigma = pick(e.flow_sigma, scenario.flow.vel_sigma, cfg.flow_sigma)
    cfg.height_sigma = pick(e.height_sigma, scenario.flow.height_sigma, cfg.height_sigma)
    cfg.lidar_rot_sigma = pick(e.lidar_rot_sigma, scenario.lidar.rot_sigma, cfg.lidar_rot_sigma)
    cfg.lidar_trans_sigma = pick(e.lidar_trans_sigma, scenario.lidar.trans_sigma, cfg.lidar_trans_sigma)
    cfg.vio_rot_sigma = pick(e.vio_rot_sigma, scenario.vio.rot_sigma, cfg.vio_rot_sigma)
    cfg.vio_trans_sigma = pick(e.vio_trans_sigma, scenario.vio.trans_sigma, cfg.vio_trans_sigma)
    cfg.loop_rot_sigma = pick(e.loop_rot_sigma, scenario.loops.rot_sigma, cfg.loop_rot_sigma)
    cfg.loop_trans_sigma = pick(e.loop_trans_sigma, scenario.loops.trans_sigma, cfg.loop_trans_sigma)
    return cfg


@dataclass
class GateRecord:
    t: float
    innovation: float
    accepted: bool


@dataclass
class EstimatorResult:
    t: np.ndarray  # (K,) keyframe times
    states: list  # list[NavState], one per keyframe
    gating: list  # list[GateRecord]
    stats: dict

    def positions(self) -> np.ndarray:
        return np.stack([s.pose.translation for s in self.states])

    def quaternions(self) -> np.ndarray:
        return np.stack([s.pose.rotation.q for s in self.states])


def _circular_median(angles: np.ndarray) -> float:
    """Angle minimizing the summed wrapped distance to the samples."""
    best, best_cost = float(angles[0]), math.inf
    for a in angles:
        cost = float(sum(abs(wrap_angle(b - a)) for b in angles))
        if cost < best_cost:
            best, best_cost = float(a), cost
    return best


def _yaw_pitch_roll(yaw: float, pitch: float, roll: float) -> Rotation3:
    """Z-Y-X Euler angles to a rotation."""
    def axis_quat(half, i):
        q = np.zeros(4)
        q[0] = math.cos(half)
        q[i] = math.sin(half)
        return q
    from .geom import quat_mul
    q = quat_mul(axis_quat(yaw / 2, 3),
                 quat_mul(axis_quat(pitch / 2, 2), axis_quat(roll / 2, 1)))
    return Rotation3(q)


def _level_attitude(imu_t, accel, t0: float, window: float):
    """Roll/pitch from averaged specific force over the initial rest dwell."""
    sel = imu_t <= t0 + window + 1e-9
    if not np.any(sel):
        return 0.0, 0.0
    f = accel[sel].mean(axis=0)
    norm = float(np.linalg.norm(f))
    if norm < 1.0:  # not enough gravity signal to level against
        return 0.0, 0.0
    pitch = math.asin(max(-1.0, min(1.0, -f[0] / norm)))
    roll = math.atan2(f[1], f[2])
    return roll, pitch


def _bootstrap_heading(mag_t, mag_psi, t0: float, window: float, gate: float):
    """Initial heading: first bootstrap sample accepted against the window's
    circular median; the median itself if none passes."""
    sel = (mag_t >= t0 - 1e-9) & (mag_t <= t0 + window + 1e-9)
    if not np.any(sel):
        return 0.0
    psi = mag_psi[sel]
    med = _circular_median(psi)
    for value in psi:
        if abs(wrap_angle(value - med)) <= gate:
            return float(value)
    return med


def _window_slices(stream_t: np.ndarray, kf_times: np.ndarray, period: float):
    """Per-keyframe index ranges of samples within +/- half a period."""
    lo = np.searchsorted(stream_t, kf_times - 0.5 * period, side="right")
    hi = np.searchsorted(stream_t, kf_times + 0.5 * period, side="right")
    return lo, hi


def _match_rows(rows, kf_times: np.ndarray, period: float):
    """Map relative-pose rows onto keyframe index pairs; unmatched dropped."""
    out = {}
    unmatched = 0
    for row in rows:
        i = int(round((row.t0 - kf_times[0]) * (1.0 / period)))
        j = int(round((row.t1 - kf_times[0]) * (1.0 / period)))
        if (0 <= i < len(kf_times) and 0 <= j < len(kf_times)
                and abs(kf_times[i] - row.t0) <= 0.5 * period
                and abs(kf_times[j] - row.t1) <= 0.5 * period and i < j):
            out.setdefault(j, []).append((i, row))
        else:
            unmatched += 1
    return out, unmatched


def run_estimator(log: SensorLog, config: FusionConfig) -> EstimatorResult:
    """Fuse one sensor log into a keyframe trajectory."""
    config.validate()
    if log.imu_t.size < 2:
        raise InputError("empty sensor log: need at least two IMU samples")
    imu_t = log.imu_t
    if np.any(np.diff(imu_t) <= 0):
        raise InputError("IMU stream is not time-sorted")

    period = 1.0 / config.keyframe_rate
    t0 = float(imu_t[0])
    n_kf = int(math.floor((imu_t[-1] - t0) / period + 1e-9)) + 1
    if n_kf < 2:
        raise InputError("log shorter than one keyframe period")
    kf_times = t0 + period * np.arange(n_kf)
    kf_imu = np.searchsorted(imu_t, kf_times - 1e-9)
    kf_imu[-1] = min(kf_imu[-1], len(imu_t) - 1)

    gravity = np.array([0.0, 0.0, -abs(config.gravity)])
    gate_log: list[GateRecord] = []

    yaw0 = 0.0
    if config.use_mag and log.mag_t.size:
        yaw0 = _bootstrap_heading(log.mag_t, log.mag_psi, t0,
                                  config.heading_bootstrap, config.gate)
    z0 = 0.0
    if config.use_height and log.flow_t.size:
        z0 = float(log.flow_h[0])
    roll0, pitch0 = _level_attitude(imu_t, log.imu_accel, t0,
                                    config.level_window)

    init = NavState(pose=Pose3(_yaw_pitch_roll(yaw0, pitch0, roll0),
                               np.array([0.0, 0.0, z0])))

    graph = Graph(window=config.window)
    graph.add_state(0, init)
    graph.add_factor(PriorFactor.from_sigmas(
        0, init,
        (config.prior_tilt_sigma, config.prior_tilt_sigma, config.prior_rot_sigma),
        config.prior_pos_sigma, config.prior_vel_sigma,
        config.prior_ba_sigma, config.prior_bg_sigma))

    mag_lo, mag_hi = _window_slices(log.mag_t, kf_times, period)
    flow_lo, flow_hi = _window_slices(log.flow_t, kf_times, period)
    lidar_rows, lidar_unmatched = _match_rows(log.lidar, kf_times, period)
    vio_rows, vio_unmatched = _match_rows(log.vio, kf_times, period)
    loop_rows, loop_unmatched = _match_rows(log.loops, kf_times, period)

    def attach_unary(key: int, state_for_gate: NavState):
        if config.use_mag:
            for s in range(mag_lo[key], mag_hi[key]):
                factor = MagHeadingFactor(key, float(log.mag_psi[s]),
                                          1.0 / config.mag_sigma, config.gate)
                innov = factor.innovation(state_for_gate)
                ok = abs(innov) <= config.gate
                gate_log.append(GateRecord(float(log.mag_t[s]), innov, ok))
                if ok:
                    graph.add_factor(factor)
        for s in range(flow_lo[key], flow_hi[key]):
            if config.use_flow:
                graph.add_factor(FlowVelocityFactor(
                    key, log.flow_vxy[s],
                    np.eye(2) / config.flow_sigma))
            if config.use_height:
                graph.add_factor(HeightFactor(
                    key, float(log.flow_h[s]), 1.0 / config.height_sigma))

    def row_pose(row: RelPoseRow) -> Pose3:
        return Pose3(Rotation3(row.q), row.t)

    attach_unary(0, init)
    finalized: dict[int, NavState] = {}
    anchored_loops = 0
    kf_stats = []
    settings = SolverSettings(max_iterations=config.max_iterations,
                              lambda_init=config.lambda_init,
                              cost_tolerance=config.cost_tolerance,
                              huber=config.huber)

    for k in range(1, n_kf):
        seg = slice(kf_imu[k - 1], kf_imu[k] + 1)
        if kf_imu[k] - kf_imu[k - 1] < 1:
            raise InputError(f"no IMU samples span keyframes {k - 1} -> {k}")
        prev = graph.states[k - 1]
        delta = integrate_arrays(imu_t[seg], log.imu_gyro[seg],
                                 log.imu_accel[seg], prev.accel_bias,
                                 prev.gyro_bias, config.gyro_noise,
                                 config.accel_noise)
        state_k = predict(prev, delta, gravity)
        graph.add_state(k, state_k)
        graph.add_factor(ImuFactor.create(k - 1, k, delta, gravity,
                                          config.accel_bias_rw,
                                          config.gyro_bias_rw))

        if config.use_lidar:
            for i, row in lidar_rows.get(k, []):
                if i in graph.states:
                    graph.add_factor(RelPoseFactor.from_sigmas(
                        i, k, row_pose(row), config.lidar_rot_sigma,
                        config.lidar_trans_sigma, source="lidar"))
        if config.use_vio:
            for i, row in vio_rows.get(k, []):
                if i in graph.states:
                    graph.add_factor(RelPoseFactor.from_sigmas(
                        i, k, row_pose(row), config.vio_rot_sigma,
                        config.vio_trans_sigma, source="vio"))
        if config.use_loops:
            for i, row in loop_rows.get(k, []):
                if i in graph.states:
                    graph.add_factor(RelPoseFactor.from_sigmas(
                        i, k, row_pose(row), config.loop_rot_sigma,
                        config.loop_trans_sigma, source="loop"))
                elif i in finalized:
                    target = finalized[i].pose @ row_pose(row)
                    w = np.diag([1.0 / config.loop_rot_sigma] * 3
                                + [1.0 / config.loop_trans_sigma] * 3)
                    graph.add_factor(PoseAnchorFactor(k, target, w))
                    anchored_loops += 1

        attach_unary(k, state_k)
        st = graph.optimize(settings)
        kf_stats.append({"t": float(kf_times[k]), "iterations": st.iterations,
                         "cost": st.final_cost, "converged": bool(st.converged)})
        for key, state in graph.slide():
            finalized[key] = state

    for key in graph.sorted_keys():
        finalized[key] = graph.states[key]
    states = [finalized[k] for k in range(n_kf)]

    stats = {
        "keyframes": n_kf,
        "gate_accepted": sum(1 for g in gate_log if g.accepted),
        "gate_rejected": sum(1 for g in gate_log if not g.accepted),
        "anchored_loops": anchored_loops,
        "unmatched_rows": {"lidar": lidar_unmatched, "vio": vio_unmatched,
                           "loop": loop_unmatched},
        "lm_iterations": sum(s["iterations"] for s in kf_stats),
        "keyframe_stats": kf_stats,
    }
    return EstimatorResult(t=kf_times, states=states, gating=gate_log,
                           stats=stats)


def heading_series(result: EstimatorResult) -> np.ndarray:
    """Yaw per keyframe, for heading-error reporting."""
    return np.array([yaw_of(s.pose.rotation) for s in result.states])
