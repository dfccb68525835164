"""Scenario configuration: YAML schema, validation, and defaults.

One file describes both the simulation (path, rates, sensor noise,
degradation windows) and the estimator settings used by the fuse command.
The seed fully determines every generated stream.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import InputError


@dataclass
class PathSpec:
    kind: str = "zigzag"  # zigzag | waypoints | loop | figure_eight | stationary
    speed: float = 2.0
    ramp: float = 3.0  # rest-to-cruise ramp duration, s
    dwell: float = 2.0  # stationary hold before moving, s (leveling window)
    legs: int = 6
    leg_length: float = 20.0
    turn_deg: float = 60.0
    radius: float = 25.0  # loop
    half_width: float = 30.0  # figure_eight lobe half width
    points: list = field(default_factory=list)  # waypoints kind
    duration: float = 10.0  # stationary kind
    yaw: float = 0.0  # stationary heading


@dataclass
class ImuSpec:
    rate: float = 200.0
    gyro_noise: float = 1e-3  # rad/s/sqrt(Hz)
    accel_noise: float = 1e-2  # m/s^2/sqrt(Hz)
    gyro_bias_rw: float = 1e-5
    accel_bias_rw: float = 1e-4
    init_gyro_bias: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    init_accel_bias: list = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class MagSpec:
    rate: float = 2.0
    sigma: float = 0.02  # rad
    outlier_prob: float = 0.0
    outlier_min: float = 1.0  # outliers are >= this far from truth, rad


@dataclass
class FlowSpec:
    rate: float = 2.0
    vel_sigma: float = 0.05  # m/s
    height_sigma: float = 0.05  # m


@dataclass
class OdomSpec:
    enabled: bool = True
    rot_sigma: float = 0.002  # rad per keyframe step
    trans_sigma: float = 0.02  # m per keyframe step
    z_drift: float = 0.0  # m per m traveled (lidar only)
    dropout: list = field(default_factory=list)  # [(t_start, t_end), ...]
    dropout_mode: str = "drop"  # drop | corrupt
    corrupt_scale: float = 50.0


@dataclass
class LoopSpec:
    enabled: bool = True
    radius: float = 2.0  # revisit distance, m
    min_dt: float = 30.0  # minimum age of the revisited pose, s
    min_gap: float = 5.0  # throttle between emitted loops, s
    rot_sigma: float = 0.001
    trans_sigma: float = 0.01


@dataclass
class EstimatorSpec:
    window: int = 25
    max_iterations: int = 25
    lambda_init: float = 1e-6
    # Relative cost decrease that stops the per-keyframe solve. Windowed
    # re-optimization is warm-started, so it can stop far earlier than a
    # batch solve without measurable accuracy loss.
    cost_tolerance: float = 1e-6
    gate: float = 0.25  # heading innovation gate, rad
    heading_bootstrap: float = 3.0  # s of mag samples for the initial heading
    level_window: float = 1.0  # s of accel samples for initial roll/pitch
    keyframe_rate: float | None = None  # defaults to scenario keyframe_rate
    huber: dict = field(default_factory=dict)
    # Whitening sigmas; None inherits the scenario sensor value when that is
    # positive, otherwise the class default of the matching sim spec.
    gyro_noise: float | None = None
    accel_noise: float | None = None
    gyro_bias_rw: float | None = None
    accel_bias_rw: float | None = None
    mag_sigma: float | None = None
    flow_sigma: float | None = None
    height_sigma: float | None = None
    lidar_rot_sigma: float | None = None
    lidar_trans_sigma: float | None = None
    vio_rot_sigma: float | None = None
    vio_trans_sigma: float | None = None
    loop_rot_sigma: float | None = None
    loop_trans_sigma: float | None = None
    prior_tilt_sigma: float = 3e-3  # roll/pitch after leveling
    prior_rot_sigma: float = 0.02  # yaw after the magnetometer bootstrap
    prior_pos_sigma: float = 0.01
    prior_vel_sigma: float = 0.1
    prior_ba_sigma: float = 0.05
    prior_bg_sigma: float = 0.02


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    keyframe_rate: float = 2.0
    gravity: float = 9.81
    path: PathSpec = field(default_factory=PathSpec)
    imu: ImuSpec = field(default_factory=ImuSpec)
    mag: MagSpec = field(default_factory=MagSpec)
    flow: FlowSpec = field(default_factory=FlowSpec)
    lidar: OdomSpec = field(default_factory=OdomSpec)
    vio: OdomSpec = field(default_factory=lambda: OdomSpec(rot_sigma=0.004,
                                                           trans_sigma=0.04))
    loops: LoopSpec = field(default_factory=LoopSpec)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)

    def zeroed(self) -> "Scenario":
        """Copy with all noise, biases, outliers, drift, and dropout removed.

        Estimator whitening keeps its defaults (it must stay positive).
        """
        s = copy_scenario(self)
        s.imu.gyro_noise = 0.0
        s.imu.accel_noise = 0.0
        s.imu.gyro_bias_rw = 0.0
        s.imu.accel_bias_rw = 0.0
        s.imu.init_gyro_bias = [0.0, 0.0, 0.0]
        s.imu.init_accel_bias = [0.0, 0.0, 0.0]
        s.mag.sigma = 0.0
        s.mag.outlier_prob = 0.0
        s.flow.vel_sigma = 0.0
        s.flow.height_sigma = 0.0
        for odom in (s.lidar, s.vio):
            odom.rot_sigma = 0.0
            odom.trans_sigma = 0.0
            odom.z_drift = 0.0
            odom.dropout = []
        s.loops.rot_sigma = 0.0
        s.loops.trans_sigma = 0.0
        return s


def copy_scenario(s: Scenario) -> Scenario:
    def dup(obj):
        if dataclasses.is_dataclass(obj):
            return type(obj)(**{f.name: dup(getattr(obj, f.name))
                                for f in dataclasses.fields(obj)})
        if isinstance(obj, list):
            return [dup(x) for x in obj]
        if isinstance(obj, dict):
            return {k: dup(v) for k, v in obj.items()}
        return obj
    return dup(s)


_SECTIONS = {
    "path": PathSpec,
    "imu": ImuSpec,
    "mag": MagSpec,
    "flow": FlowSpec,
    "lidar": OdomSpec,
    "vio": OdomSpec,
    "loops": LoopSpec,
    "estimator": EstimatorSpec,
}


def _fill(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise InputError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise InputError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**data)


def scenario_from_dict(raw: dict, where: str = "scenario") -> Scenario:
    if not isinstance(raw, dict):
        raise InputError(f"{where}: top level must be a mapping")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kwargs[key] = _fill(_SECTIONS[key], value, f"{where}.{key}")
        elif key in ("name", "seed", "keyframe_rate", "gravity"):
            kwargs[key] = value
        else:
            raise InputError(f"{where}: unknown key {key!r}")
    scenario = Scenario(**kwargs)
    validate_scenario(scenario, where)
    return scenario


def validate_scenario(s: Scenario, where: str = "scenario") -> None:
    p = s.path
    if p.kind not in ("zigzag", "waypoints", "loop", "figure_eight", "stationary"):
        raise InputError(f"{where}.path.kind: unknown kind {p.kind!r}")
    if p.kind == "stationary":
        if p.duration <= 0:
            raise InputError(f"{where}.path.duration must be > 0")
    else:
        if p.speed <= 0:
            raise InputError(f"{where}.path.speed must be > 0")
        if p.ramp <= 0:
            raise InputError(f"{where}.path.ramp must be > 0")
    if p.kind == "zigzag" and (p.legs < 1 or p.leg_length <= 0):
        raise InputError(f"{where}.path: zigzag needs legs >= 1 and leg_length > 0")
    if p.kind == "waypoints":
        pts = np.asarray(p.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 3:
            raise InputError(f"{where}.path.points: need at least two 3-D waypoints")
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) < 1e-9):
            raise InputError(f"{where}.path.points: coincident consecutive waypoints")
    if s.imu.rate <= 0:
        raise InputError(f"{where}.imu.rate must be > 0")
    if s.keyframe_rate <= 0:
        raise InputError(f"{where}.keyframe_rate must be > 0")
    ratio = s.imu.rate / s.keyframe_rate
    if abs(ratio - round(ratio)) > 1e-9:
        raise InputError(f"{where}: imu.rate must be an integer multiple of keyframe_rate")
    for nm, rate in (("mag", s.mag.rate), ("flow", s.flow.rate)):
        if rate <= 0:
            raise InputError(f"{where}.{nm}.rate must be > 0")
        ratio = s.imu.rate / rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise InputError(f"{where}: imu.rate must be an integer multiple of {nm}.rate")
    for nm, odom in (("lidar", s.lidar), ("vio", s.vio)):
        if odom.dropout_mode not in ("drop", "corrupt"):
            raise InputError(f"{where}.{nm}.dropout_mode must be drop or corrupt")
        for win in odom.dropout:
            if len(win) != 2 or win[0] >= win[1] or win[0] < 0:
                raise InputError(f"{where}.{nm}.dropout: windows must be [t0, t1] with 0 <= t0 < t1")
    if not (0.0 <= s.mag.outlier_prob <= 1.0):
        raise InputError(f"{where}.mag.outlier_prob must be in [0, 1]")
    if s.estimator.window < 2:
        raise InputError(f"{where}.estimator.window must be >= 2")


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: YAML parse error: {exc}")
    except OSError as exc:
        raise InputError(f"{path}: {exc}")
    return scenario_from_dict(raw if raw is not None else {}, where=path)
