"""Ground-truth trajectory generation.

Paths are waypoint polylines smoothed by a natural cubic spline and traversed
with a rest-to-rest speed profile (quintic-smoothstep ramps). Heading follows
the velocity direction; its rate comes from the analytic curvature of the
spline, so corner rounding bounds the turn rate.

The stored truth is produced by integrating the analytic body-rate /
specific-force signal with the same midpoint scheme the estimator uses for
preintegration, which makes zero-noise sensor logs exactly consistent with
the estimator's motion model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InputError
from .geom import quat_from_rotvec_batch, quat_mul_batch, quat_to_matrix_batch
from .scenario import PathSpec, Scenario

_MIN_SPEED = 1e-6


@dataclass
class TruthStream:
    """Ground truth sampled at IMU rate, plus the clean body-frame signals."""

    t: np.ndarray  # (N,)
    q: np.ndarray  # (N, 4) world-from-body quaternions
    p: np.ndarray  # (N, 3) m
    v: np.ndarray  # (N, 3) m/s
    gyro: np.ndarray  # (N, 3) rad/s, body frame
    sforce: np.ndarray  # (N, 3) m/s^2 specific force, body frame
    gravity: np.ndarray  # (3,)

    @property
    def length(self) -> float:
        """Polyline length of the position track, meters."""
        return float(np.linalg.norm(np.diff(self.p, axis=0), axis=1).sum())


def path_waypoints(spec: PathSpec) -> np.ndarray:
    """Waypoint polyline for a path spec (not used for stationary)."""
    if spec.kind == "zigzag":
        pts = [np.zeros(3)]
        half = math.radians(spec.turn_deg) / 2.0
        for leg in range(spec.legs):
            heading = half if leg % 2 == 0 else -half
            d = np.array([math.cos(heading), math.sin(heading), 0.0])
            pts.append(pts[-1] + d * spec.leg_length)
        base = np.array(pts)
    elif spec.kind == "loop":
        ang = np.linspace(0.0, 2.0 * math.pi, 49)
        base = np.column_stack([spec.radius * np.sin(ang),
                                spec.radius * (1.0 - np.cos(ang)),
                                np.zeros_like(ang)])
    elif spec.kind == "figure_eight":
        tt = np.linspace(0.0, 2.0 * math.pi, 65)
        base = np.column_stack([spec.half_width * np.sin(tt),
                                spec.half_width * 0.5 * np.sin(2.0 * tt),
                                np.zeros_like(tt)])
    elif spec.kind == "waypoints":
        base = np.asarray(spec.points, dtype=float)
    else:
        raise InputError(f"no waypoints for path kind {spec.kind!r}")
    if np.any(np.linalg.norm(np.diff(base, axis=0), axis=1) < 1e-9):
        raise InputError("path has coincident consecutive waypoints")
    # Interior subdivision stiffens the spline toward the polyline so
    # corner rounding stays local.
    out = [base[0]]
    for a, b in zip(base[:-1], base[1:]):
        for f in (0.25, 0.5, 0.75, 1.0):
            out.append(a + f * (b - a))
    return np.array(out)


class _SpeedProfile:
    """Rest-to-rest speed along a path of length `length`.

    Holds still for `dwell` seconds before ramping so the estimator can
    level and bootstrap its heading on static data.
    """

    def __init__(self, length: float, cruise: float, ramp: float,
                 dwell: float = 0.0):
        if length <= 0:
            raise InputError("path length must be positive")
        self.ramp = float(ramp)
        self.dwell = float(dwell)
        if length > cruise * ramp:
            self.peak = float(cruise)
            self.duration = dwell + length / cruise + ramp
        else:
            # Too short for a cruise phase: triangular profile.
            self.peak = length / ramp
            self.duration = dwell + 2.0 * ramp
        self.length = float(length)

    @staticmethod
    def _s(x):
        return x * x * x * (10.0 + x * (-15.0 + 6.0 * x))

    @staticmethod
    def _s_int(x):
        return x ** 4 * (2.5 + x * (-3.0 + x))

    @staticmethod
    def _s_d(x):
        return 30.0 * x * x * (x - 1.0) * (x - 1.0)

    def sample(self, t: np.ndarray):
        """Returns (arc position, speed, tangential acceleration) at t."""
        t = np.asarray(t, dtype=float) - self.dwell
        t = np.maximum(t, 0.0)
        r, vp, tt = self.ramp, self.peak, self.duration - self.dwell
        x_up = np.clip(t / r, 0.0, 1.0)
        x_dn = np.clip((tt - t) / r, 0.0, 1.0)
        up = t < r
        dn = t > tt - r
        v = np.where(up, vp * self._s(x_up), np.where(dn, vp * self._s(x_dn), vp))
        a = np.where(up, vp * self._s_d(x_up) / r,
                     np.where(dn, -vp * self._s_d(x_dn) / r, 0.0))
        s = np.where(up, vp * r * self._s_int(x_up),
                     np.where(dn, self.length - vp * r * self._s_int(x_dn),
                              vp * r * 0.5 + vp * (t - r)))
        return s, v, a


def _analytic_kinematics(spec: PathSpec, imu_rate: float):
    """Positions/velocities/accelerations plus yaw and yaw rate at IMU rate."""
    way = path_waypoints(spec)
    chord = np.linalg.norm(np.diff(way, axis=0), axis=1)
    u_knots = np.concatenate([[0.0], np.cumsum(chord)])
    spline = CubicSpline(u_knots, way, axis=0, bc_type="natural")

    # Arc length along the spline on a dense grid.
    u_fine = np.linspace(0.0, u_knots[-1], max(4000, 100 * len(way)))
    d1_fine = spline(u_fine, 1)
    sp_fine = np.linalg.norm(d1_fine, axis=1)
    s_fine = np.concatenate([[0.0], np.cumsum(
        0.5 * (sp_fine[1:] + sp_fine[:-1]) * np.diff(u_fine))])
    length = float(s_fine[-1])

    profile = _SpeedProfile(length, spec.speed, spec.ramp, spec.dwell)
    n = int(round(profile.duration * imu_rate)) + 1
    t = np.arange(n) / imu_rate
    s_t, v_t, a_t = profile.sample(t)
    u_t = np.interp(np.clip(s_t, 0.0, length), s_fine, u_fine)

    d1 = spline(u_t, 1)
    d2 = spline(u_t, 2)
    n1 = np.linalg.norm(d1, axis=1)
    du = v_t / n1
    ddu = a_t / n1 - v_t * np.einsum("ni,ni->n", d1, d2) * du / (n1 ** 3)
    pos = spline(u_t)
    vel = d1 * du[:, None]
    acc = d2 * (du ** 2)[:, None] + d1 * ddu[:, None]

    vx, vy = vel[:, 0], vel[:, 1]
    speed_h = np.hypot(vx, vy)
    ok = speed_h >= _MIN_SPEED
    if not np.any(ok):
        raise InputError("path never reaches the minimum speed")
    yaw = np.arctan2(vy, vx)
    # Hold the nearest defined heading through the rest phases.
    idx = np.where(ok, np.arange(n), -1)
    np.maximum.accumulate(idx, out=idx)
    first = int(np.argmax(ok))
    idx[idx < 0] = first
    yaw = yaw[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        yaw_rate = np.where(ok, (vx * acc[:, 1] - vy * acc[:, 0])
                            / np.where(ok, speed_h ** 2, 1.0), 0.0)
    return t, pos, vel, acc, yaw, yaw_rate


def generate_truth(scenario: Scenario) -> TruthStream:
    """Deterministic ground truth for a scenario, sampled at IMU rate."""
    gravity = np.array([0.0, 0.0, -abs(scenario.gravity)])
    rate = scenario.imu.rate

    if scenario.path.kind == "stationary":
        n = int(round(scenario.path.duration * rate)) + 1
        t = np.arange(n) / rate
        yaw0 = float(scenario.path.yaw)
        q0 = np.array([math.cos(yaw0 / 2), 0.0, 0.0, math.sin(yaw0 / 2)])
        q = np.tile(q0, (n, 1))
        rot0 = quat_to_matrix_batch(q0[None])[0]
        sf = np.tile(rot0.T @ (-gravity), (n, 1))
        zeros = np.zeros((n, 3))
        return TruthStream(t=t, q=q, p=zeros.copy(), v=zeros.copy(),
                           gyro=zeros.copy(), sforce=sf, gravity=gravity)

    t, pos_s, vel_s, acc_s, yaw, yaw_rate = _analytic_kinematics(
        scenario.path, rate)
    n = len(t)
    dts = np.diff(t)
    gyro = np.zeros((n, 3))
    gyro[:, 2] = yaw_rate

    q = np.empty((n, 4))
    q[0] = (math.cos(yaw[0] / 2), 0.0, 0.0, math.sin(yaw[0] / 2))
    w_mid = 0.5 * (gyro[:-1] + gyro[1:]) * dts[:, None]
    step_q = quat_from_rotvec_batch(w_mid)
    for k in range(n - 1):
        qk = quat_mul_batch(q[k], step_q[k])
        q[k + 1] = qk / np.sqrt(qk @ qk)

    rot = quat_to_matrix_batch(q)
    f_world = acc_s - gravity
    sforce = np.einsum("nji,nj->ni", rot, f_world)

    # Midpoint integration of the sampled signal keeps the stored truth
    # exactly consistent with the estimator's preintegration scheme.
    f_back = np.einsum("nij,nj->ni", rot, sforce)
    a_used = 0.5 * (f_back[:-1] + f_back[1:]) + gravity
    v = np.empty((n, 3))
    p = np.empty((n, 3))
    v[0] = vel_s[0]
    p[0] = pos_s[0]
    v[1:] = v[0] + np.cumsum(a_used * dts[:, None], axis=0)
    steps = v[:-1] * dts[:, None] + 0.5 * a_used * (dts ** 2)[:, None]
    p[1:] = p[0] + np.cumsum(steps, axis=0)

    return TruthStream(t=t, q=q, p=p, v=v, gyro=gyro, sforce=sforce,
                       gravity=gravity)
