"""Minimal 3D geometry kernel: rotations, rigid transforms, tangent ops.

Conventions used throughout the package:

* Rotations are unit quaternions (w, x, y, z), canonicalized to w >= 0.
* All manifold derivatives use right (body-frame) perturbations:
  R <- R * exp(phi).
* Navigation-state tangent vectors are ordered
  (rotation 3, translation 3, velocity 3, accel bias 3, gyro bias 3).
* Heading is the yaw of the Z-Y-X Euler factorization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GimbalLockError

# Below this rotation angle exp/log switch to their Taylor branches.
SMALL_ANGLE = 1e-8


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def skew(v) -> np.ndarray:
    """3x3 cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ])


def quat_rotate(q: np.ndarray, v) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion."""
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def quat_from_rotvec(w: np.ndarray) -> np.ndarray:
    """Exponential map so(3) -> unit quaternion."""
    w = np.asarray(w, dtype=float)
    angle = math.sqrt(float(w @ w))
    if angle < SMALL_ANGLE:
        # sin(a/2)/a ~ 1/2 - a^2/48
        s = 0.5 - angle * angle / 48.0
        q = np.array([1.0 - angle * angle / 8.0, w[0] * s, w[1] * s, w[2] * s])
    else:
        half = 0.5 * angle
        s = math.sin(half) / angle
        q = np.array([math.cos(half), w[0] * s, w[1] * s, w[2] * s])
    return q / math.sqrt(float(q @ q))


def rotvec_from_quat(q: np.ndarray) -> np.ndarray:
    """Logarithm map unit quaternion -> so(3), angle in [0, pi]."""
    w = q[0]
    v = q[1:4]
    if w < 0.0:
        w, v = -w, -v
    n = math.sqrt(float(v @ v))
    if n < SMALL_ANGLE:
        # angle ~ 2n/w; scale ~ 2/w * (1 + n^2/(3w^2))
        return v * (2.0 / w) * (1.0 + n * n / (3.0 * w * w))
    angle = 2.0 * math.atan2(n, w)
    return v * (angle / n)


@dataclass(frozen=True)
class Rotation3:
    """Rotation stored as a canonical unit quaternion (w >= 0)."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        n = math.sqrt(float(q @ q))
        if not math.isfinite(n) or n == 0.0:
            raise ValueError("quaternion has zero or non-finite norm")
        # Skip the division when already unit so identity operations stay
        # bit-exact; the drift tolerance is far below the 1e-9 contract.
        if abs(n - 1.0) > 1e-12:
            q = q / n
        if q[0] < 0.0:
            q = -q
        object.__setattr__(self, "q", q)

    @staticmethod
    def identity() -> "Rotation3":
        return Rotation3()

    @staticmethod
    def from_matrix(m) -> "Rotation3":
        m = np.asarray(m, dtype=float)
        t = np.trace(m)
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                          (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
        else:
            i = int(np.argmax(np.diag(m)))
            j, k = (i + 1) % 3, (i + 2) % 3
            s = math.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
            q = np.empty(4)
            q[0] = (m[k, j] - m[j, k]) / s
            q[1 + i] = 0.25 * s
            q[1 + j] = (m[j, i] + m[i, j]) / s
            q[1 + k] = (m[k, i] + m[i, k]) / s
        return Rotation3(q)

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def inverse(self) -> "Rotation3":
        return Rotation3(quat_conj(self.q))

    def compose(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(quat_mul(self.q, other.q))

    def __matmul__(self, other: "Rotation3") -> "Rotation3":
        return self.compose(other)

    def rotate(self, v) -> np.ndarray:
        return quat_rotate(self.q, v)


def so3_exp(omega) -> Rotation3:
    """Rotation by angle ||omega|| about axis omega/||omega||."""
    return Rotation3(quat_from_rotvec(omega))


def so3_log(r: Rotation3) -> np.ndarray:
    """Inverse of so3_exp on ||omega|| < pi."""
    return rotvec_from_quat(r.q)


def jr(phi) -> np.ndarray:
    """Right Jacobian of SO(3): exp(phi + d) ~ exp(phi) exp(jr(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    a = math.sqrt(float(phi @ phi))
    s = skew(phi)
    if a < SMALL_ANGLE:
        return np.eye(3) - 0.5 * s + s @ s / 6.0
    a2 = a * a
    return (np.eye(3) - (1.0 - math.cos(a)) / a2 * s
            + (a - math.sin(a)) / (a2 * a) * (s @ s))


def jr_inv(phi) -> np.ndarray:
    """Inverse of the right Jacobian of SO(3)."""
    phi = np.asarray(phi, dtype=float)
    a = math.sqrt(float(phi @ phi))
    s = skew(phi)
    if a < SMALL_ANGLE:
        return np.eye(3) + 0.5 * s + s @ s / 12.0
    a2 = a * a
    c = (1.0 / a2) - (1.0 + math.cos(a)) / (2.0 * a * math.sin(a))
    return np.eye(3) + 0.5 * s + c * (s @ s)


def yaw_of(r: Rotation3) -> float:
    """Yaw (heading) of the Z-Y-X Euler factorization, in (-pi, pi].

    Raises GimbalLockError when |pitch| is within 1e-6 of pi/2, where the
    heading is unobservable from the rotation.
    """
    m = r.matrix()
    pitch = math.asin(max(-1.0, min(1.0, -m[2, 0])))
    if math.pi / 2.0 - abs(pitch) < 1e-6:
        raise GimbalLockError("pitch at +/- pi/2: heading undefined")
    return math.atan2(m[1, 0], m[0, 0])


def yaw_jacobian(r: Rotation3) -> np.ndarray:
    """d yaw / d phi for a right perturbation R <- R exp(phi), shape (3,)."""
    m = r.matrix()
    a, b = m[0, 0], m[1, 0]
    d = a * a + b * b
    if d < 1e-12:
        raise GimbalLockError("pitch at +/- pi/2: heading undefined")
    return np.array([
        0.0,
        (-a * m[1, 2] + b * m[0, 2]) / d,
        (a * m[1, 1] - b * m[0, 1]) / d,
    ])


@dataclass(frozen=True)
class Pose3:
    """Rigid transform: x_world = rotation * x_body + translation."""

    rotation: Rotation3 = field(default_factory=Rotation3.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose3":
        return Pose3()

    def compose(self, other: "Pose3") -> "Pose3":
        return Pose3(self.rotation @ other.rotation,
                     self.rotation.rotate(other.translation) + self.translation)

    def __matmul__(self, other: "Pose3") -> "Pose3":
        return self.compose(other)

    def inverse(self) -> "Pose3":
        rinv = self.rotation.inverse()
        return Pose3(rinv, -rinv.rotate(self.translation))

    def transform(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.matrix().T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix()
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class NavState:
    """Per-keyframe estimate: pose, world velocity, and IMU biases."""

    pose: Pose3 = field(default_factory=Pose3.identity)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("velocity", "accel_bias", "gyro_bias"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float).reshape(3))


STATE_DIM = 15


def retract(state: NavState, delta) -> NavState:
    """Apply a 15-vector tangent step (rot, trans, vel, ba, bg)."""
    d = np.asarray(delta, dtype=float).reshape(STATE_DIM)
    rot = state.pose.rotation @ so3_exp(d[0:3])
    return NavState(
        pose=Pose3(rot, state.pose.translation + d[3:6]),
        velocity=state.velocity + d[6:9],
        accel_bias=state.accel_bias + d[9:12],
        gyro_bias=state.gyro_bias + d[12:15],
    )


def local(a: NavState, b: NavState) -> np.ndarray:
    """Tangent delta such that retract(b, delta) ~ a."""
    d = np.empty(STATE_DIM)
    d[0:3] = rotvec_from_quat(quat_mul(quat_conj(b.pose.rotation.q),
                                       a.pose.rotation.q))
    d[3:6] = a.pose.translation - b.pose.translation
    d[6:9] = a.velocity - b.velocity
    d[9:12] = a.accel_bias - b.accel_bias
    d[12:15] = a.gyro_bias - b.gyro_bias
    return d


# Batched helpers (arrays of shape (N, 4) / (N, 3)); used by the simulator
# and the NumPy backend.

def quat_mul_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_to_matrix_batch(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - w * z)
    m[..., 0, 2] = 2.0 * (x * z + w * y)
    m[..., 1, 0] = 2.0 * (x * y + w * z)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - w * x)
    m[..., 2, 0] = 2.0 * (x * z - w * y)
    m[..., 2, 1] = 2.0 * (y * z + w * x)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def quat_from_rotvec_batch(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    angle = np.linalg.norm(w, axis=-1)
    small = angle < SMALL_ANGLE
    half = 0.5 * angle
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(small, 0.5 - angle * angle / 48.0,
                     np.sin(half) / np.where(small, 1.0, angle))
    qw = np.where(small, 1.0 - angle * angle / 8.0, np.cos(half))
    q = np.concatenate([qw[..., None], w * s[..., None]], axis=-1)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def rotvec_from_quat_batch(q: np.ndarray) -> np.ndarray:
    q = np.where(q[..., :1] < 0.0, -q, q)
    v = q[..., 1:4]
    n = np.linalg.norm(v, axis=-1)
    w = q[..., 0]
    small = n < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(
            small,
            (2.0 / w) * (1.0 + n * n / (3.0 * w * w)),
            2.0 * np.arctan2(n, w) / np.where(small, 1.0, n),
        )
    return v * scale[..., None]


def skew_batch(v: np.ndarray) -> np.ndarray:
    s = np.zeros(v.shape[:-1] + (3, 3))
    s[..., 0, 1] = -v[..., 2]
    s[..., 0, 2] = v[..., 1]
    s[..., 1, 0] = v[..., 2]
    s[..., 1, 2] = -v[..., 0]
    s[..., 2, 0] = -v[..., 1]
    s[..., 2, 1] = v[..., 0]
    return s


def jr_batch(phi: np.ndarray) -> np.ndarray:
    a = np.linalg.norm(phi, axis=-1)
    s = skew_batch(phi)
    s2 = s @ s
    small = a < SMALL_ANGLE
    a_safe = np.where(small, 1.0, a)
    a2 = a_safe * a_safe
    c1 = np.where(small, 0.5, (1.0 - np.cos(a_safe)) / a2)
    c2 = np.where(small, 1.0 / 6.0, (a_safe - np.sin(a_safe)) / (a2 * a_safe))
    eye = np.broadcast_to(np.eye(3), s.shape)
    return eye - c1[..., None, None] * s + c2[..., None, None] * s2


def jr_inv_batch(phi: np.ndarray) -> np.ndarray:
    a = np.linalg.norm(phi, axis=-1)
    s = skew_batch(phi)
    s2 = s @ s
    small = a < SMALL_ANGLE
    a_safe = np.where(small, 1.0, a)
    a2 = a_safe * a_safe
    c = np.where(
        small, 1.0 / 12.0,
        1.0 / a2 - (1.0 + np.cos(a_safe)) / (2.0 * a_safe * np.sin(a_safe)))
    eye = np.broadcast_to(np.eye(3), s.shape)
    return eye + 0.5 * s + c[..., None, None] * s2
