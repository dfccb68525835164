"""Synthetic sensor streams and their on-disk CSV layout.

All randomness comes from counter-based Philox generators keyed by
(seed, stream id), so each stream is reproducible on its own and the whole
log is bit-identical for a given scenario.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geom import (
    quat_conj,
    quat_from_rotvec,
    quat_from_rotvec_batch,
    quat_mul,
    quat_mul_batch,
    quat_rotate,
    quat_to_matrix_batch,
    wrap_angle,
)
from .polarimetry import DEFAULT_LAYOUT, PolarMosaic, _POSITIONS, _check_layout, round_half_away
from .scenario import Scenario
from .trajectory import TruthStream, generate_truth

_STREAM_IDS = {"imu": 1, "mag": 2, "flow": 3, "lidar": 4, "vio": 5, "loop": 6}

LOG_FILES = ("imu.csv", "mag.csv", "flow.csv", "lidar_odom.csv",
             "vio_odom.csv", "loops.csv", "truth.tum")


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    """Philox generator keyed by (seed, stream id)."""
    return np.random.Generator(np.random.Philox(
        key=np.array([seed & 0xFFFFFFFFFFFFFFFF, _STREAM_IDS[stream]],
                     dtype=np.uint64)))


@dataclass
class RelPoseRow:
    """One relative-pose odometry measurement between two timestamps."""

    t0: float
    t1: float
    q: np.ndarray  # (4,) w,x,y,z
    t: np.ndarray  # (3,)


@dataclass
class SensorLog:
    """All measurement streams plus ground truth for one scenario run."""

    imu_t: np.ndarray
    imu_gyro: np.ndarray
    imu_accel: np.ndarray
    mag_t: np.ndarray
    mag_psi: np.ndarray
    flow_t: np.ndarray
    flow_vxy: np.ndarray  # (N, 2)
    flow_h: np.ndarray
    lidar: list = field(default_factory=list)  # list[RelPoseRow]
    vio: list = field(default_factory=list)
    loops: list = field(default_factory=list)
    truth: TruthStream | None = None


def _in_windows(t: float, windows) -> bool:
    return any(a <= t <= b for a, b in windows)


def _perturb_pose(q, tvec, rot_sigma, trans_sigma, noise6):
    """Compose a pose with Gaussian noise taken from 6 unit draws."""
    if rot_sigma > 0:
        q = quat_mul(q, quat_from_rotvec(noise6[0:3] * rot_sigma))
    if trans_sigma > 0:
        tvec = tvec + noise6[3:6] * trans_sigma
    return q, tvec


def _relative_pose(truth: TruthStream, i: int, j: int):
    """Pose of frame j expressed in frame i, from ground truth."""
    qi_c = quat_conj(truth.q[i])
    q = quat_mul(qi_c, truth.q[j])
    t = quat_rotate(qi_c, truth.p[j] - truth.p[i])
    return q, t


def _odometry_rows(truth, kf_idx, spec, source, seed):
    rng = stream_rng(seed, source)
    rows = []
    for a, b in zip(kf_idx[:-1], kf_idx[1:]):
        # One fixed-size draw per interval keeps the other rows identical
        # regardless of where degradation windows fall.
        noise = rng.normal(0.0, 1.0, 6)
        q, t = _relative_pose(truth, a, b)
        dist = float(np.linalg.norm(t))
        if source == "lidar" and spec.z_drift != 0.0:
            t = t + np.array([0.0, 0.0, spec.z_drift * dist])
        mid = 0.5 * (truth.t[a] + truth.t[b])
        degraded = _in_windows(mid, spec.dropout)
        if degraded and spec.dropout_mode == "drop":
            continue
        scale = spec.corrupt_scale if degraded else 1.0
        q, t = _perturb_pose(q, t, spec.rot_sigma * scale,
                             spec.trans_sigma * scale, noise)
        rows.append(RelPoseRow(t0=float(truth.t[a]), t1=float(truth.t[b]),
                               q=q, t=t))
    return rows


def _loop_rows(truth, kf_idx, spec, seed):
    rng = stream_rng(seed, "loop")
    rows = []
    pos = truth.p[kf_idx]
    times = truth.t[kf_idx]
    last_emit = -math.inf
    for j in range(len(kf_idx)):
        if times[j] - last_emit < spec.min_gap:
            continue
        old = np.nonzero(times <= times[j] - spec.min_dt)[0]
        if old.size == 0:
            continue
        d = np.linalg.norm(pos[old] - pos[j], axis=1)
        best = int(np.argmin(d))
        if d[best] > spec.radius:
            continue
        i = old[best]
        q, t = _relative_pose(truth, kf_idx[i], kf_idx[j])
        q, t = _perturb_pose(q, t, spec.rot_sigma, spec.trans_sigma,
                             rng.normal(0.0, 1.0, 6))
        rows.append(RelPoseRow(t0=float(times[i]), t1=float(times[j]), q=q, t=t))
        last_emit = times[j]
    return rows


def synthesize_sensors(truth: TruthStream, scenario: Scenario) -> SensorLog:
    """Generate every measurement stream from ground truth."""
    seed = scenario.seed
    n = len(truth.t)
    dts = np.diff(truth.t)

    # IMU: truth signal + bias random walk + white noise.
    rng = stream_rng(seed, "imu")
    spec = scenario.imu
    bg = np.zeros((n, 3))
    ba = np.zeros((n, 3))
    bg[0] = spec.init_gyro_bias
    ba[0] = spec.init_accel_bias
    if spec.gyro_bias_rw > 0:
        bg[1:] = bg[0] + np.cumsum(
            rng.normal(0.0, 1.0, (n - 1, 3)) * (spec.gyro_bias_rw
                                                * np.sqrt(dts))[:, None], axis=0)
    else:
        bg[1:] = bg[0]
        rng.normal(0.0, 1.0, (n - 1, 3))
    if spec.accel_bias_rw > 0:
        ba[1:] = ba[0] + np.cumsum(
            rng.normal(0.0, 1.0, (n - 1, 3)) * (spec.accel_bias_rw
                                                * np.sqrt(dts))[:, None], axis=0)
    else:
        ba[1:] = ba[0]
        rng.normal(0.0, 1.0, (n - 1, 3))
    sqrt_rate = math.sqrt(scenario.imu.rate)
    gyro = truth.gyro + bg
    accel = truth.sforce + ba
    if spec.gyro_noise > 0:
        gyro = gyro + rng.normal(0.0, spec.gyro_noise * sqrt_rate, (n, 3))
    else:
        rng.normal(0.0, 1.0, (n, 3))
    if spec.accel_noise > 0:
        accel = accel + rng.normal(0.0, spec.accel_noise * sqrt_rate, (n, 3))
    else:
        rng.normal(0.0, 1.0, (n, 3))

    # Magnetometer heading.
    rng = stream_rng(seed, "mag")
    step = int(round(scenario.imu.rate / scenario.mag.rate))
    mag_idx = np.arange(0, n, step)
    rot = quat_to_matrix_batch(truth.q[mag_idx])
    yaw = np.arctan2(rot[:, 1, 0], rot[:, 0, 0])
    noise = rng.normal(0.0, 1.0, len(mag_idx)) * scenario.mag.sigma
    psi = yaw + noise
    if scenario.mag.outlier_prob > 0:
        hit = rng.uniform(0.0, 1.0, len(mag_idx)) < scenario.mag.outlier_prob
        sign = np.where(rng.uniform(0.0, 1.0, len(mag_idx)) < 0.5, -1.0, 1.0)
        mag_span = max(math.pi - scenario.mag.outlier_min, 0.0)
        off = scenario.mag.outlier_min + rng.uniform(0.0, 1.0, len(mag_idx)) * mag_span
        psi = np.where(hit, yaw + sign * off, psi)
    psi = np.array([wrap_angle(a) for a in psi])

    # Optical-flow velocity + height.
    rng = stream_rng(seed, "flow")
    step = int(round(scenario.imu.rate / scenario.flow.rate))
    flow_idx = np.arange(0, n, step)
    rot = quat_to_matrix_batch(truth.q[flow_idx])
    v_body = np.einsum("nji,nj->ni", rot, truth.v[flow_idx])
    vxy = v_body[:, 0:2] + rng.normal(0.0, 1.0, (len(flow_idx), 2)) * scenario.flow.vel_sigma
    h = truth.p[flow_idx, 2] + rng.normal(0.0, 1.0, len(flow_idx)) * scenario.flow.height_sigma

    # Keyframe-interval odometry and loop closures.
    kf_step = int(round(scenario.imu.rate / scenario.keyframe_rate))
    kf_idx = np.arange(0, n, kf_step)
    for nm, odom in (("lidar", scenario.lidar), ("vio", scenario.vio)):
        for a, b in odom.dropout:
            if a < 0 or b > truth.t[-1] + 1e-9:
                raise InputError(
                    f"{nm} dropout window [{a}, {b}] outside [0, {truth.t[-1]:.3f}]")
    lidar = (_odometry_rows(truth, kf_idx, scenario.lidar, "lidar", seed)
             if scenario.lidar.enabled else [])
    vio = (_odometry_rows(truth, kf_idx, scenario.vio, "vio", seed)
           if scenario.vio.enabled else [])
    loops = (_loop_rows(truth, kf_idx, scenario.loops, seed)
             if scenario.loops.enabled else [])

    return SensorLog(
        imu_t=truth.t.copy(), imu_gyro=gyro, imu_accel=accel,
        mag_t=truth.t[mag_idx].copy(), mag_psi=psi,
        flow_t=truth.t[flow_idx].copy(), flow_vxy=vxy, flow_h=h,
        lidar=lidar, vio=vio, loops=loops, truth=truth)


def simulate(scenario: Scenario) -> SensorLog:
    """generate_truth + synthesize_sensors in one call."""
    return synthesize_sensors(generate_truth(scenario), scenario)


# -- polarized test-scene synthesis ----------------------------------------

def synthesize_polar_scene(intensity, dop, aop, layout=DEFAULT_LAYOUT) -> PolarMosaic:
    """Forward Malus-law model onto a mosaic.

    intensity/dop/aop are per-superpixel maps (arrays or scalars broadcast to
    the same shape): each filtered sample is
    I_phi = (s / 4) * (1 + d * cos(2 theta - 2 phi)) quantized to 8 bits and
    arranged per the mosaic layout. Output dimensions are twice the map's.
    """
    layout = _check_layout(layout)
    s = np.atleast_2d(np.asarray(intensity, dtype=float))
    d = np.broadcast_to(np.asarray(dop, dtype=float), s.shape)
    th = np.broadcast_to(np.asarray(aop, dtype=float), s.shape)
    if np.any(d < 0.0) or np.any(d > 1.0):
        raise InputError("region DOP must lie in [0, 1]")
    if np.any(th <= -math.pi / 2) or np.any(th > math.pi / 2):
        raise InputError("region AOP must lie in (-pi/2, pi/2]")
    h, w = s.shape
    mosaic = np.zeros((2 * h, 2 * w), dtype=np.uint8)
    for angle_deg, (r, c) in zip(layout, _POSITIONS):
        phi = math.radians(angle_deg)
        plane = (s / 4.0) * (1.0 + d * np.cos(2.0 * th - 2.0 * phi))
        mosaic[r::2, c::2] = np.clip(round_half_away(plane), 0, 255).astype(np.uint8)
    return PolarMosaic(mosaic, layout=layout)


# -- CSV / TUM persistence --------------------------------------------------

def _fmt(values) -> str:
    return ",".join(f"{v:.17g}" for v in values)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(_fmt(row) + "\n")


def _write_relpose_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("t0,t1,x,y,z,qx,qy,qz,qw\n")
        for r in rows:
            vals = [r.t0, r.t1, r.t[0], r.t[1], r.t[2],
                    r.q[1], r.q[2], r.q[3], r.q[0]]
            fh.write(_fmt(vals) + "\n")


def write_tum(path, t, pos, quat, precision: int = 17) -> None:
    """TUM trajectory text: `t x y z qx qy qz qw` per line."""
    with open(path, "w") as fh:
        for k in range(len(t)):
            vals = [t[k], pos[k][0], pos[k][1], pos[k][2],
                    quat[k][1], quat[k][2], quat[k][3], quat[k][0]]
            fh.write(" ".join(f"{v:.{precision}g}" for v in vals) + "\n")


def save_log(log: SensorLog, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "imu.csv"), "t,gx,gy,gz,ax,ay,az",
               np.column_stack([log.imu_t, log.imu_gyro, log.imu_accel]))
    _write_csv(os.path.join(out_dir, "mag.csv"), "t,psi",
               np.column_stack([log.mag_t, log.mag_psi]))
    _write_csv(os.path.join(out_dir, "flow.csv"), "t,vx,vy,h",
               np.column_stack([log.flow_t, log.flow_vxy, log.flow_h]))
    _write_relpose_csv(os.path.join(out_dir, "lidar_odom.csv"), log.lidar)
    _write_relpose_csv(os.path.join(out_dir, "vio_odom.csv"), log.vio)
    _write_relpose_csv(os.path.join(out_dir, "loops.csv"), log.loops)
    if log.truth is not None:
        write_tum(os.path.join(out_dir, "truth.tum"), log.truth.t,
                  log.truth.p, log.truth.q)


def _read_csv(path, columns: int) -> np.ndarray:
    if not os.path.exists(path):
        raise InputError(f"missing stream file {path}")
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if len(lines) <= 1:
        return np.empty((0, columns))
    try:
        data = np.array([[float(x) for x in ln.split(",")]
                         for ln in lines[1:] if ln], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: parse error: {exc}")
    if data.ndim != 2 or data.shape[1] != columns:
        raise InputError(f"{path}: expected {columns} columns")
    return np.ascontiguousarray(data)


def _read_relpose_csv(path) -> list:
    data = _read_csv(path, 9)
    rows = []
    for r in data:
        q = np.array([r[8], r[5], r[6], r[7]])
        rows.append(RelPoseRow(t0=float(r[0]), t1=float(r[1]),
                               q=q / np.linalg.norm(q), t=r[2:5].copy()))
    return rows


def load_log(log_dir: str, need=("imu", "mag", "flow", "lidar", "vio", "loop")) -> SensorLog:
    """Load a log directory; only streams in `need` must exist (imu always)."""
    imu = _read_csv(os.path.join(log_dir, "imu.csv"), 7)
    if imu.shape[0] < 2:
        raise InputError(f"{log_dir}: IMU stream is empty")

    def opt(name, loader, *args):
        if name in need:
            return loader(*args)
        return None

    mag = opt("mag", _read_csv, os.path.join(log_dir, "mag.csv"), 2)
    flow = opt("flow", _read_csv, os.path.join(log_dir, "flow.csv"), 4)
    lidar = opt("lidar", _read_relpose_csv, os.path.join(log_dir, "lidar_odom.csv"))
    vio = opt("vio", _read_relpose_csv, os.path.join(log_dir, "vio_odom.csv"))
    loops = opt("loop", _read_relpose_csv, os.path.join(log_dir, "loops.csv"))
    return SensorLog(
        imu_t=np.ascontiguousarray(imu[:, 0]),
        imu_gyro=np.ascontiguousarray(imu[:, 1:4]),
        imu_accel=np.ascontiguousarray(imu[:, 4:7]),
        mag_t=mag[:, 0] if mag is not None else np.empty(0),
        mag_psi=mag[:, 1] if mag is not None else np.empty(0),
        flow_t=flow[:, 0] if flow is not None else np.empty(0),
        flow_vxy=flow[:, 1:3] if flow is not None else np.empty((0, 2)),
        flow_h=flow[:, 3] if flow is not None else np.empty(0),
        lidar=lidar or [], vio=vio or [], loops=loops or [], truth=None)
