import math

import numpy as np
import pytest

from conftest import random_state
from polarfuse.errors import InputError
from polarfuse.factors import (
    FlowVelocityFactor,
    HeightFactor,
    ImuFactor,
    MagHeadingFactor,
    MarginalPrior,
    PoseAnchorFactor,
    PriorFactor,
    RelPoseFactor,
    residual_and_jacobian,
)
from polarfuse.geom import NavState, Pose3, STATE_DIM, retract, so3_exp
from polarfuse.preintegration import integrate_arrays


def make_imu_factor(rng, key_i=0, key_j=1):
    n = 51
    t = np.arange(n) / 100.0
    gyro = rng.normal(0.0, 0.4, (n, 3))
    accel = rng.normal(0.0, 1.0, (n, 3)) + [0, 0, 9.81]
    delta = integrate_arrays(t, gyro, accel, rng.normal(0, 0.02, 3),
                             rng.normal(0, 0.005, 3), 1e-3, 1e-2)
    return ImuFactor.create(key_i, key_j, delta, [0, 0, -9.81], 1e-4, 1e-5)


class TestResidualConventions:
    def test_height_sign(self):
        f = HeightFactor(0, 2.0, 1.0)
        s = NavState(pose=Pose3(translation=[0, 0, 2.5]))
        assert f.residual({0: s})[0] == pytest.approx(0.5)

    def test_mag_wrap(self):
        # yaw - measured = -6.2, wrapped by +2*pi into (-pi, pi].
        f = MagHeadingFactor(0, 3.1, 1.0)
        s = NavState(pose=Pose3(so3_exp([0, 0, -3.1])))
        assert f.residual({0: s})[0] == pytest.approx(2 * math.pi - 6.2)

    def test_flow_zero_residual(self):
        f = FlowVelocityFactor(0, [1.0, 2.0], np.eye(2))
        s = NavState(velocity=[1.0, 2.0, 0.3])
        assert np.abs(f.residual({0: s})).max() == 0.0

    def test_missing_key(self):
        f = HeightFactor(3, 2.0, 1.0)
        with pytest.raises(InputError):
            residual_and_jacobian(f, {0: NavState()})


class TestGate:
    def test_accept_inside(self):
        from polarfuse.factors import gate_heading
        f = MagHeadingFactor(0, 0.0, 1.0, gate=0.3)
        s = NavState(pose=Pose3(so3_exp([0, 0, 0.1])))
        assert f.accept(s)
        assert gate_heading(f, s)

    def test_reject_outside(self):
        f = MagHeadingFactor(0, 0.0, 1.0, gate=0.3)
        s = NavState(pose=Pose3(so3_exp([0, 0, 0.5])))
        assert not f.accept(s)

    def test_boundary_accepts(self):
        # Closed boundary: innovation exactly equal to the gate is accepted.
        s = NavState(pose=Pose3(so3_exp([0, 0, 0.3])))
        probe = MagHeadingFactor(0, 0.0, 1.0, gate=1.0)
        f = MagHeadingFactor(0, 0.0, 1.0, gate=probe.innovation(s))
        assert f.accept(s)


def fd_jacobian(factor, states, key, dim, delta=1e-6):
    base = states[key]
    jac = np.zeros((dim, STATE_DIM))
    for col in range(STATE_DIM):
        step = np.zeros(STATE_DIM)
        step[col] = delta
        plus = dict(states)
        plus[key] = retract(base, step)
        minus = dict(states)
        minus[key] = retract(base, -step)
        rp, _ = factor.linearize(plus)
        rm, _ = factor.linearize(minus)
        jac[:, col] = (rp - rm) / (2 * delta)
    return jac


def check_factor_jacobians(factor, states, rel_tol=1e-5):
    r, jacs = factor.linearize(states)
    for key, j_analytic in jacs.items():
        j_fd = fd_jacobian(factor, states, key, len(r))
        scale = max(1.0, np.abs(j_fd).max())
        err = np.abs(j_analytic - j_fd).max() / scale
        assert err < rel_tol, f"{type(factor).__name__} key {key}: {err:.2e}"


def build_factor(name, rng):
    s0 = random_state(rng)
    s1 = random_state(rng)
    states = {0: s0, 1: s1}
    if name == "prior":
        f = PriorFactor.from_sigmas(0, random_state(rng), 0.05, 0.1, 0.2, 0.1, 0.05)
    elif name == "imu":
        f = make_imu_factor(rng)
    elif name == "relpose":
        f = RelPoseFactor.from_sigmas(
            0, 1, random_state(rng).pose, 0.01, 0.05, source="lidar")
    elif name == "anchor":
        f = PoseAnchorFactor(0, random_state(rng).pose,
                             np.diag([20.0] * 3 + [10.0] * 3))
    elif name == "mag":
        # Bounded pitch keeps the yaw derivative well-conditioned for FD.
        s0 = NavState(pose=Pose3(
            so3_exp([rng.uniform(-0.9, 0.9), 0, 0])
            @ so3_exp([0, rng.uniform(-0.9, 0.9), 0])
            @ so3_exp([0, 0, rng.uniform(-math.pi, math.pi)]),
            rng.normal(0, 5, 3)), velocity=rng.normal(0, 2, 3))
        states = {0: s0, 1: s1}
        f = MagHeadingFactor(0, rng.uniform(-math.pi, math.pi), 50.0)
    elif name == "flow":
        f = FlowVelocityFactor(0, rng.normal(0, 2, 2), np.diag([20.0, 20.0]))
    elif name == "height":
        f = HeightFactor(0, rng.normal(0, 2), 20.0)
    elif name == "marginal":
        dim = 2 * STATE_DIM
        a = rng.normal(0, 1, (dim, dim))
        h = a.T @ a + np.eye(dim)
        vals, vecs = np.linalg.eigh(h)
        a_mat = np.sqrt(vals)[:, None] * vecs.T
        f = MarginalPrior(keys_=(0, 1),
                          lin_points={0: random_state(rng), 1: random_state(rng)},
                          a_mat=a_mat, r0=rng.normal(0, 1, dim))
    else:
        raise AssertionError(name)
    return f, states


ALL_FACTORS = ["prior", "imu", "relpose", "anchor", "mag", "flow", "height",
               "marginal"]


@pytest.mark.parametrize("name", ALL_FACTORS)
def test_jacobians_match_finite_differences(name, rng):
    for _ in range(20):
        f, states = build_factor(name, rng)
        check_factor_jacobians(f, states)


class TestGaugeInvariance:
    def test_cost_invariant_under_rigid_transform(self, rng):
        # Prior + relative-pose factors: transforming all states and all
        # measurement means by one rigid transform leaves the cost unchanged.
        states = {k: random_state(rng) for k in range(3)}
        prior_mean = random_state(rng)
        rel01 = random_state(rng).pose
        rel12 = random_state(rng).pose
        factors = [
            PriorFactor.from_sigmas(0, prior_mean, 0.05, 0.1, 0.2, 0.1, 0.05),
            RelPoseFactor.from_sigmas(0, 1, rel01, 0.01, 0.05),
            RelPoseFactor.from_sigmas(1, 2, rel12, 0.01, 0.05),
        ]

        def cost(fs, sts):
            return sum(float(f.linearize(sts)[0] @ f.linearize(sts)[0])
                       for f in fs)

        g = Pose3(so3_exp([0.3, -0.5, 1.0]), [10.0, -4.0, 2.0])

        def tf_state(s):
            return NavState(pose=g @ s.pose,
                            velocity=g.rotation.rotate(s.velocity),
                            accel_bias=s.accel_bias, gyro_bias=s.gyro_bias)

        states_tf = {k: tf_state(s) for k, s in states.items()}
        prior_tf = tf_state(prior_mean)
        factors_tf = [
            PriorFactor.from_sigmas(0, prior_tf, 0.05, 0.1, 0.2, 0.1, 0.05),
            RelPoseFactor.from_sigmas(0, 1, rel01, 0.01, 0.05),
            RelPoseFactor.from_sigmas(1, 2, rel12, 0.01, 0.05),
        ]
        c0 = cost(factors, states)
        c1 = cost(factors_tf, states_tf)
        assert c1 == pytest.approx(c0, rel=1e-9)

    def test_unary_factors_raise_hessian_rank(self, rng):
        # An IMU-only chain has translation + yaw + velocity-offset (+ bias
        # offset) gauge freedom; flow, height, and heading factors each
        # remove part of it. Identity whitening keeps one eigenvalue scale
        # so the numeric rank is unambiguous.
        states = {k: random_state(rng, rot_scale=0.3) for k in range(3)}
        imu = []
        for k in range(2):
            f = make_imu_factor(rng, k, k + 1)
            f.sqrt_info = np.eye(15)
            imu.append(f)
        flow = [FlowVelocityFactor(k, [0.0, 0.0], np.eye(2)) for k in range(3)]
        height = [HeightFactor(k, 0.0, 1.0) for k in range(3)]
        mag = [MagHeadingFactor(k, 0.0, 1.0) for k in range(3)]

        def gn_rank(factors):
            h = np.zeros((45, 45))
            for f in factors:
                _, jac = f.linearize(states)
                for ka, ja in jac.items():
                    for kb, jb in jac.items():
                        h[ka * 15:(ka + 1) * 15, kb * 15:(kb + 1) * 15] += ja.T @ jb
            vals = np.linalg.eigvalsh(h)
            return int(np.sum(vals > 1e-8 * max(vals.max(), 1.0)))

        base = gn_rank(imu)
        with_flow = gn_rank(imu + flow)
        with_fh = gn_rank(imu + flow + height)
        with_fhm = gn_rank(imu + flow + height + mag)
        assert base < with_flow < with_fh < with_fhm
