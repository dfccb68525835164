"""Parity between the compiled kernels and the NumPy fallback."""

import numpy as np
import pytest

from polarfuse.backend import get_backend

try:
    FAST = get_backend("compiled")
except ImportError:
    FAST = None

SLOW = get_backend("python")

needs_compiled = pytest.mark.skipif(FAST is None,
                                    reason="compiled backend not built")


def random_quats(rng, n):
    q = rng.normal(0, 1, (n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return np.ascontiguousarray(np.where(q[:, :1] < 0, -q, q))


def imu_args(rng, n):
    c = np.ascontiguousarray
    return dict(
        q_i=random_quats(rng, n), p_i=c(rng.normal(0, 5, (n, 3))),
        v_i=c(rng.normal(0, 2, (n, 3))), ba_i=c(rng.normal(0, 0.05, (n, 3))),
        bg_i=c(rng.normal(0, 0.01, (n, 3))), q_j=random_quats(rng, n),
        p_j=c(rng.normal(0, 5, (n, 3))), v_j=c(rng.normal(0, 2, (n, 3))),
        ba_j=c(rng.normal(0, 0.05, (n, 3))), bg_j=c(rng.normal(0, 0.01, (n, 3))),
        dq=random_quats(rng, n), dv=c(rng.normal(0, 1, (n, 3))),
        dp=c(rng.normal(0, 1, (n, 3))), dt=c(rng.uniform(0.2, 1.0, n)),
        ba0=c(rng.normal(0, 0.05, (n, 3))), bg0=c(rng.normal(0, 0.01, (n, 3))),
        j_rbg=c(rng.normal(0, 0.3, (n, 3, 3))), j_vba=c(rng.normal(0, 0.3, (n, 3, 3))),
        j_vbg=c(rng.normal(0, 0.3, (n, 3, 3))), j_pba=c(rng.normal(0, 0.3, (n, 3, 3))),
        j_pbg=c(rng.normal(0, 0.3, (n, 3, 3))), gravity=np.array([0.0, 0.0, -9.81]))


@needs_compiled
class TestParity:
    def test_preintegrate(self, rng):
        n = 300
        t = np.arange(n) * 0.005
        gyro = np.ascontiguousarray(rng.normal(0, 0.5, (n, 3)))
        accel = np.ascontiguousarray(rng.normal(0, 2, (n, 3)) + [0, 0, 9.81])
        ba = rng.normal(0, 0.02, 3)
        bg = rng.normal(0, 0.005, 3)
        a = SLOW.preintegrate(t, gyro, accel, ba, bg, 1e-3, 1e-2)
        b = FAST.preintegrate(t, gyro, accel, ba, bg, 1e-3, 1e-2)
        for x, y in zip(a, b):
            assert np.abs(np.asarray(x) - np.asarray(y)).max() < 1e-12

    def test_imu_linearize(self, rng):
        args = imu_args(rng, 41)
        ra, ja, jb = SLOW.imu_linearize(**args, with_jac=True)
        rb, jc, jd = FAST.imu_linearize(**args, with_jac=True)
        assert np.abs(ra - rb).max() < 1e-12
        assert np.abs(ja - jc).max() < 1e-12
        assert np.abs(jb - jd).max() < 1e-12

    def test_imu_residual_only(self, rng):
        args = imu_args(rng, 17)
        ra, _, _ = SLOW.imu_linearize(**args, with_jac=False)
        rb, _, _ = FAST.imu_linearize(**args, with_jac=False)
        assert np.abs(ra - rb).max() < 1e-12

    def test_relpose_linearize(self, rng):
        n = 29
        c = np.ascontiguousarray
        q_i, q_j, q_m = (random_quats(rng, n) for _ in range(3))
        p_i, p_j, t_m = (c(rng.normal(0, 3, (n, 3))) for _ in range(3))
        ra, ja, jb = SLOW.relpose_linearize(q_i, p_i, q_j, p_j, q_m, t_m, True)
        rb, jc, jd = FAST.relpose_linearize(q_i, p_i, q_j, p_j, q_m, t_m, True)
        assert np.abs(ra - rb).max() < 1e-12
        assert np.abs(ja - jc).max() < 1e-12
        assert np.abs(jb - jd).max() < 1e-12


class TestDeterminism:
    def test_preintegrate_bitwise_repeatable(self, rng):
        n = 200
        t = np.arange(n) * 0.005
        gyro = np.ascontiguousarray(rng.normal(0, 0.5, (n, 3)))
        accel = np.ascontiguousarray(rng.normal(0, 2, (n, 3)) + [0, 0, 9.81])
        from polarfuse import backend
        a = backend.preintegrate(t, gyro, accel, np.zeros(3), np.zeros(3), 1e-3, 1e-2)
        b = backend.preintegrate(t, gyro, accel, np.zeros(3), np.zeros(3), 1e-3, 1e-2)
        for x, y in zip(a, b):
            assert np.array_equal(np.asarray(x), np.asarray(y))


def test_active_backend_name():
    from polarfuse import active_backend
    assert active_backend() in ("python", "compiled")
