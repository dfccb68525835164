"""Factor types for the sliding-window graph.

Each factor owns its measurement and a square-root information matrix and
produces whitened residuals plus Jacobians with respect to the 15-dim state
tangents (rot, trans, vel, accel bias, gyro bias). Residual sign convention
is state-minus-measurement throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import backend
from .errors import InputError
from .geom import (
    NavState,
    Pose3,
    STATE_DIM,
    jr_inv,
    local,
    quat_conj,
    quat_mul,
    rotvec_from_quat,
    wrap_angle,
    yaw_jacobian,
    yaw_of,
)
from .preintegration import PreintegratedDelta


def sqrt_information(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular whitener W with W.T @ W = inv(cov)."""
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise InputError("factor covariance is not positive definite")
    return scipy.linalg.solve_triangular(chol, np.eye(cov.shape[0]), lower=True)


def info_sqrt_from_information(info: np.ndarray) -> np.ndarray:
    """Matrix A with A.T @ A = info (upper Cholesky factor)."""
    info = np.asarray(info, dtype=float)
    try:
        return np.linalg.cholesky(info).T
    except np.linalg.LinAlgError:
        raise InputError("information matrix is not positive definite")


@dataclass(eq=False)
class PriorFactor:
    """Pins a full state to a mean with a 15x15 information matrix."""

    key: int
    mean: NavState
    sqrt_info: np.ndarray  # (15, 15), whitener

    @staticmethod
    def from_sigmas(key: int, mean: NavState, rot, trans, vel, ba, bg) -> "PriorFactor":
        sig = np.concatenate([np.broadcast_to(np.asarray(s, dtype=float), (3,))
                              for s in (rot, trans, vel, ba, bg)])
        if np.any(sig <= 0):
            raise InputError("prior sigmas must be positive")
        return PriorFactor(key, mean, np.diag(1.0 / sig))

    @property
    def keys(self):
        return (self.key,)

    @property
    def dim(self) -> int:
        return STATE_DIM

    def residual(self, states) -> np.ndarray:
        return local(states[self.key], self.mean)

    def linearize(self, states):
        r = self.residual(states)
        j = np.eye(STATE_DIM)
        j[0:3, 0:3] = jr_inv(r[0:3])
        return self.sqrt_info @ r, {self.key: self.sqrt_info @ j}


@dataclass(eq=False)
class ImuFactor:
    """Preintegrated IMU constraint between consecutive states i -> j.

    Residual rows: (rot 3, vel 3, pos 3, accel-bias walk 3, gyro-bias walk 3),
    whitened by the preintegration covariance and the bias random-walk
    covariance sigma_rw^2 * dt.
    """

    key_i: int
    key_j: int
    delta: PreintegratedDelta
    gravity: np.ndarray
    sqrt_info: np.ndarray = field(default=None)  # (15, 15)

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        if self.sqrt_info is None:
            raise InputError("ImuFactor needs a sqrt_info; use create()")

    @staticmethod
    def create(key_i: int, key_j: int, delta: PreintegratedDelta, gravity,
               accel_bias_rw: float, gyro_bias_rw: float) -> "ImuFactor":
        cov = np.zeros((15, 15))
        cov[0:9, 0:9] = delta.covariance
        cov[9:12, 9:12] = np.eye(3) * (accel_bias_rw ** 2 * delta.dt)
        cov[12:15, 12:15] = np.eye(3) * (gyro_bias_rw ** 2 * delta.dt)
        return ImuFactor(key_i, key_j, delta, gravity, sqrt_information(cov))

    @property
    def keys(self):
        return (self.key_i, self.key_j)

    @property
    def dim(self) -> int:
        return 15

    def _packed(self, states, with_jac: bool):
        si, sj = states[self.key_i], states[self.key_j]
        d = self.delta
        res, ji, jj = backend.imu_linearize(
            si.pose.rotation.q[None], si.pose.translation[None],
            si.velocity[None], si.accel_bias[None], si.gyro_bias[None],
            sj.pose.rotation.q[None], sj.pose.translation[None],
            sj.velocity[None], sj.accel_bias[None], sj.gyro_bias[None],
            d.d_rot.q[None], d.d_vel[None], d.d_pos[None],
            np.array([d.dt]), d.accel_bias0[None], d.gyro_bias0[None],
            d.j_rot_bg[None], d.j_vel_ba[None], d.j_vel_bg[None],
            d.j_pos_ba[None], d.j_pos_bg[None], self.gravity, with_jac)
        return res, ji, jj

    def residual(self, states) -> np.ndarray:
        res, _, _ = self._packed(states, False)
        return res[0]

    def linearize(self, states):
        res, ji, jj = self._packed(states, True)
        return self.sqrt_info @ res[0], {
            self.key_i: self.sqrt_info @ ji[0],
            self.key_j: self.sqrt_info @ jj[0],
        }


@dataclass(eq=False)
class RelPoseFactor:
    """Relative-pose odometry between states i -> j.

    source tags the producing subsystem: "lidar", "vio", or "loop".
    Residual rows: (rot 3, trans 3).
    """

    key_i: int
    key_j: int
    measured: Pose3
    sqrt_info: np.ndarray  # (6, 6)
    source: str = "lidar"

    @staticmethod
    def from_sigmas(key_i, key_j, measured, rot_sigma, trans_sigma,
                    source="lidar") -> "RelPoseFactor":
        if rot_sigma <= 0 or trans_sigma <= 0:
            raise InputError("relative-pose sigmas must be positive")
        w = np.diag([1.0 / rot_sigma] * 3 + [1.0 / trans_sigma] * 3)
        return RelPoseFactor(key_i, key_j, measured, w, source)

    @property
    def keys(self):
        return (self.key_i, self.key_j)

    @property
    def dim(self) -> int:
        return 6

    def _packed(self, states, with_jac: bool):
        si, sj = states[self.key_i], states[self.key_j]
        return backend.relpose_linearize(
            si.pose.rotation.q[None], si.pose.translation[None],
            sj.pose.rotation.q[None], sj.pose.translation[None],
            self.measured.rotation.q[None], self.measured.translation[None],
            with_jac)

    def residual(self, states) -> np.ndarray:
        res, _, _ = self._packed(states, False)
        return res[0]

    def linearize(self, states):
        res, ji, jj = self._packed(states, True)
        out = {}
        for key, j6 in ((self.key_i, ji[0]), (self.key_j, jj[0])):
            j = np.zeros((6, STATE_DIM))
            j[:, 0:6] = j6
            out[key] = self.sqrt_info @ j
        return self.sqrt_info @ res[0], out


@dataclass(eq=False)
class PoseAnchorFactor:
    """Unary pose constraint against a fixed target pose.

    Used to re-anchor loop closures whose older endpoint has already been
    marginalized out of the window: the target is (anchor * measured).
    """

    key: int
    target: Pose3
    sqrt_info: np.ndarray  # (6, 6)

    @property
    def keys(self):
        return (self.key,)

    @property
    def dim(self) -> int:
        return 6

    def residual(self, states) -> np.ndarray:
        pose = states[self.key].pose
        r = np.empty(6)
        r[0:3] = rotvec_from_quat(quat_mul(quat_conj(self.target.rotation.q),
                                           pose.rotation.q))
        r[3:6] = pose.translation - self.target.translation
        return r

    def linearize(self, states):
        r = self.residual(states)
        j = np.zeros((6, STATE_DIM))
        j[0:3, 0:3] = jr_inv(r[0:3])
        j[3:6, 3:6] = np.eye(3)
        return self.sqrt_info @ r, {self.key: self.sqrt_info @ j}


@dataclass(eq=False)
class MagHeadingFactor:
    """Scalar heading observation with an innovation gate."""

    key: int
    heading: float
    sqrt_info: float  # 1 / sigma
    gate: float = 0.25

    @property
    def keys(self):
        return (self.key,)

    @property
    def dim(self) -> int:
        return 1

    def innovation(self, state: NavState) -> float:
        return wrap_angle(yaw_of(state.pose.rotation) - self.heading)

    def accept(self, state: NavState) -> bool:
        """Gate test against the current estimate; boundary is accepted."""
        return abs(self.innovation(state)) <= self.gate

    def residual(self, states) -> np.ndarray:
        return np.array([self.innovation(states[self.key])])

    def linearize(self, states):
        r = self.residual(states)
        j = np.zeros((1, STATE_DIM))
        j[0, 0:3] = yaw_jacobian(states[self.key].pose.rotation)
        return self.sqrt_info * r, {self.key: self.sqrt_info * j}


@dataclass(eq=False)
class FlowVelocityFactor:
    """Planar body-frame velocity observation (vx, vy)."""

    key: int
    vel_xy: np.ndarray
    sqrt_info: np.ndarray  # (2, 2)

    def __post_init__(self):
        self.vel_xy = np.asarray(self.vel_xy, dtype=float).reshape(2)

    @property
    def keys(self):
        return (self.key,)

    @property
    def dim(self) -> int:
        return 2

    def residual(self, states) -> np.ndarray:
        s = states[self.key]
        v_body = s.pose.rotation.matrix().T @ s.velocity
        return v_body[0:2] - self.vel_xy

    def linearize(self, states):
        s = states[self.key]
        rt = s.pose.rotation.matrix().T
        v_body = rt @ s.velocity
        j = np.zeros((2, STATE_DIM))
        # d(R^T v)/d phi = skew(R^T v); planar rows only
        j[0, 1] = -v_body[2]
        j[0, 2] = v_body[1]
        j[1, 0] = v_body[2]
        j[1, 2] = -v_body[0]
        j[:, 6:9] = rt[0:2, :]
        return self.sqrt_info @ (v_body[0:2] - self.vel_xy), \
            {self.key: self.sqrt_info @ j}


@dataclass(eq=False)
class HeightFactor:
    """World-frame height (z) observation."""

    key: int
    height: float
    sqrt_info: float  # 1 / sigma

    @property
    def keys(self):
        return (self.key,)

    @property
    def dim(self) -> int:
        return 1

    def residual(self, states) -> np.ndarray:
        return np.array([states[self.key].pose.translation[2] - self.height])

    def linearize(self, states):
        j = np.zeros((1, STATE_DIM))
        j[0, 5] = 1.0
        return self.sqrt_info * self.residual(states), {self.key: self.sqrt_info * j}


@dataclass(eq=False)
class MarginalPrior:
    """Linearized Gaussian prior left behind by marginalization.

    Evaluates r = A * stack(local(x_k, lin_k)) + r0 over the surviving keys,
    where A carries the square root of the Schur-complement information.
    """

    keys_: tuple
    lin_points: dict  # key -> NavState at marginalization time
    a_mat: np.ndarray  # (rank, 15 * len(keys))
    r0: np.ndarray  # (rank,)

    @property
    def keys(self):
        return self.keys_

    @property
    def dim(self) -> int:
        return self.a_mat.shape[0]

    def _delta(self, states) -> np.ndarray:
        return np.concatenate([local(states[k], self.lin_points[k])
                               for k in self.keys_])

    def residual(self, states) -> np.ndarray:
        return self.a_mat @ self._delta(states) + self.r0

    def linearize(self, states):
        d = self._delta(states)
        out = {}
        for idx, k in enumerate(self.keys_):
            block = self.a_mat[:, idx * STATE_DIM:(idx + 1) * STATE_DIM].copy()
            block[:, 0:3] = block[:, 0:3] @ jr_inv(d[idx * STATE_DIM:idx * STATE_DIM + 3])
            out[k] = block
        return self.a_mat @ d + self.r0, out


FACTOR_TYPES = (PriorFactor, ImuFactor, RelPoseFactor, PoseAnchorFactor,
                MagHeadingFactor, FlowVelocityFactor, HeightFactor,
                MarginalPrior)


def gate_heading(factor: MagHeadingFactor, state: NavState) -> bool:
    """Innovation gate for a heading factor against the current estimate.

    True (accept) iff |wrap(yaw(state) - measured)| <= factor.gate; the
    boundary itself is accepted.
    """
    return factor.accept(state)


def residual_and_jacobian(factor, states):
    """Whitened residual and per-key Jacobian blocks of one factor.

    Jacobians are with respect to the tangent of each referenced state,
    in the (rot, trans, vel, ba, bg) column layout.
    """
    try:
        return factor.linearize(states)
    except KeyError as exc:
        raise InputError(f"factor references missing key {exc.args[0]}")
