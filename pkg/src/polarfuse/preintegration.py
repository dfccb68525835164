"""IMU preintegration between keyframes.

Accumulates the relative rotation/velocity/position of a segment of IMU
samples with midpoint (trapezoidal) integration, propagates the 9x9
(rot, vel, pos) error covariance, and tracks first-order bias Jacobians so
the resulting measurement can be re-linearized at a new bias estimate
without re-integrating.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import InputError
from .geom import NavState, Pose3, Rotation3, quat_from_rotvec, quat_mul

MAX_SAMPLE_DT = 0.1


@dataclass(frozen=True)
class ImuSample:
    """One IMU reading: body-frame angular rate and specific force."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float).reshape(3))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(3))


@dataclass(frozen=True)
class PreintegratedDelta:
    """Relative motion accumulated from one IMU segment.

    covariance is over (rot, vel, pos) errors; the bias Jacobians give the
    first-order sensitivity of the deltas to the bias linearization point
    (accel_bias0, gyro_bias0).
    """

    dt: float
    d_rot: Rotation3
    d_vel: np.ndarray
    d_pos: np.ndarray
    covariance: np.ndarray
    accel_bias0: np.ndarray
    gyro_bias0: np.ndarray
    j_rot_bg: np.ndarray
    j_vel_ba: np.ndarray
    j_vel_bg: np.ndarray
    j_pos_ba: np.ndarray
    j_pos_bg: np.ndarray


def integrate_arrays(t, gyro, accel, accel_bias, gyro_bias,
                     gyro_sigma: float, accel_sigma: float) -> PreintegratedDelta:
    """Preintegrate raw arrays: t (N,), gyro (N,3), accel (N,3).

    Noise densities are continuous-time (per sqrt(s)). Requires at least two
    samples with strictly increasing timestamps and per-step dt <= 0.1 s.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.shape[0] < 2:
        raise InputError("preintegration needs at least two IMU samples")
    dts = np.diff(t)
    if np.any(dts <= 0.0):
        raise InputError("IMU timestamps must be strictly increasing")
    if np.any(dts > MAX_SAMPLE_DT + 1e-9):
        raise InputError(f"IMU sample gap exceeds {MAX_SAMPLE_DT} s")
    ba = np.ascontiguousarray(accel_bias, dtype=float).reshape(3)
    bg = np.ascontiguousarray(gyro_bias, dtype=float).reshape(3)
    (dt, dq, dv, dp, cov, j_rbg, j_vba, j_vbg, j_pba, j_pbg) = \
        backend.preintegrate(np.ascontiguousarray(t, dtype=float),
                             np.ascontiguousarray(gyro, dtype=float),
                             np.ascontiguousarray(accel, dtype=float), ba, bg,
                             float(gyro_sigma), float(accel_sigma))
    return PreintegratedDelta(
        dt=dt, d_rot=Rotation3(dq), d_vel=np.asarray(dv), d_pos=np.asarray(dp),
        covariance=np.asarray(cov), accel_bias0=ba, gyro_bias0=bg,
        j_rot_bg=np.asarray(j_rbg), j_vel_ba=np.asarray(j_vba),
        j_vel_bg=np.asarray(j_vbg), j_pos_ba=np.asarray(j_pba),
        j_pos_bg=np.asarray(j_pbg))


def integrate(samples, bias, noise) -> PreintegratedDelta:
    """Preintegrate a list of ImuSample.

    bias is (accel_bias, gyro_bias); noise is (gyro_sigma, accel_sigma)
    continuous-time densities.
    """
    if len(samples) < 2:
        raise InputError("preintegration needs at least two IMU samples")
    t = np.array([s.t for s in samples])
    gyro = np.stack([s.gyro for s in samples])
    accel = np.stack([s.accel for s in samples])
    return integrate_arrays(t, gyro, accel, bias[0], bias[1], noise[0], noise[1])


def bias_correct(delta: PreintegratedDelta, new_bias):
    """First-order re-linearization of the deltas at a new bias.

    Returns (d_rot, d_vel, d_pos). Warns when the bias change exceeds the
    first-order validity guard of 0.5.
    """
    ba = np.asarray(new_bias[0], dtype=float).reshape(3)
    bg = np.asarray(new_bias[1], dtype=float).reshape(3)
    dba = ba - delta.accel_bias0
    dbg = bg - delta.gyro_bias0
    step = np.sqrt(float(dba @ dba + dbg @ dbg))
    if step > 0.5:
        warnings.warn(f"bias change {step:.3f} exceeds first-order guard 0.5",
                      RuntimeWarning, stacklevel=2)
    d_rot = Rotation3(quat_mul(delta.d_rot.q, quat_from_rotvec(delta.j_rot_bg @ dbg)))
    d_vel = delta.d_vel + delta.j_vel_ba @ dba + delta.j_vel_bg @ dbg
    d_pos = delta.d_pos + delta.j_pos_ba @ dba + delta.j_pos_bg @ dbg
    return d_rot, d_vel, d_pos


def predict(state: NavState, delta: PreintegratedDelta, gravity) -> NavState:
    """Propagate a state through a preintegrated delta.

    The delta is assumed linearized at the state's bias; call bias_correct
    first otherwise. Biases are carried forward unchanged.
    """
    g = np.asarray(gravity, dtype=float).reshape(3)
    d_rot, d_vel, d_pos = bias_correct(delta, (state.accel_bias, state.gyro_bias))
    r_i = state.pose.rotation
    dt = delta.dt
    rot_j = r_i @ d_rot
    vel_j = state.velocity + g * dt + r_i.rotate(d_vel)
    pos_j = (state.pose.translation + state.velocity * dt + 0.5 * g * dt * dt
             + r_i.rotate(d_pos))
    return NavState(pose=Pose3(rot_j, pos_j), velocity=vel_j,
                    accel_bias=state.accel_bias, gyro_bias=state.gyro_bias)
