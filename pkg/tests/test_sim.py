import numpy as np
import pytest

from conftest import scenario_path
from polarfuse.errors import InputError
from polarfuse.geom import Pose3, Rotation3, quat_to_matrix_batch, wrap_angle
from polarfuse.scenario import (
    OdomSpec,
    PathSpec,
    Scenario,
    load_scenario,
    scenario_from_dict,
)
from polarfuse.sensors import save_log, simulate
from polarfuse.trajectory import generate_truth


def line_scenario(**kw):
    return Scenario(path=PathSpec(kind="waypoints",
                                  points=[[0, 0, 0], [50, 0, 0], [100, 0, 0]],
                                  speed=2.0), **kw)


class TestTruth:
    def test_stationary(self):
        s = Scenario(path=PathSpec(kind="stationary", duration=5.0))
        tr = generate_truth(s)
        assert np.abs(tr.p).max() == 0.0
        assert np.abs(tr.v).max() == 0.0
        assert np.abs(tr.gyro).max() == 0.0
        assert np.allclose(tr.sforce, [0, 0, 9.81])
        assert tr.t[-1] == pytest.approx(5.0)

    def test_straight_line(self):
        tr = generate_truth(line_scenario())
        assert np.abs(tr.p[-1] - [100, 0, 0]).max() < 1e-9
        assert np.linalg.norm(tr.v[-1]) < 1e-3

    def test_zigzag_length(self):
        s = Scenario(path=PathSpec(kind="zigzag", legs=6, leg_length=20.0,
                                   turn_deg=60.0, speed=2.0))
        tr = generate_truth(s)
        assert abs(tr.length - 120.0) <= 1.2  # 1% corner-rounding budget

    def test_kinematic_consistency(self):
        s = Scenario(path=PathSpec(kind="zigzag", legs=4, leg_length=15.0,
                                   speed=2.0))
        tr = generate_truth(s)
        fd = (tr.p[2:] - tr.p[:-2]) / (tr.t[2:] - tr.t[:-2])[:, None]
        assert np.abs(fd - tr.v[1:-1]).max() <= 1e-3

    def test_coincident_waypoints_rejected(self):
        with pytest.raises(InputError):
            scenario_from_dict({"path": {"kind": "waypoints",
                                         "points": [[0, 0, 0], [0, 0, 0]]}})


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        s = line_scenario(seed=9)
        a = simulate(s)
        b = simulate(s)
        assert np.array_equal(a.imu_gyro, b.imu_gyro)
        assert np.array_equal(a.imu_accel, b.imu_accel)
        assert np.array_equal(a.mag_psi, b.mag_psi)
        assert np.array_equal(a.flow_vxy, b.flow_vxy)
        for ra, rb in zip(a.lidar, b.lidar):
            assert np.array_equal(ra.q, rb.q) and np.array_equal(ra.t, rb.t)

    def test_save_byte_identical(self, tmp_path):
        s = line_scenario(seed=9)
        d1, d2 = tmp_path / "a", tmp_path / "b"
        save_log(simulate(s), str(d1))
        save_log(simulate(s), str(d2))
        for f in d1.iterdir():
            assert f.read_bytes() == (d2 / f.name).read_bytes()

    def test_streams_independent_of_each_other(self):
        # Disabling one stream leaves the others bit-identical.
        s1 = line_scenario(seed=4)
        s2 = line_scenario(seed=4)
        s2.vio.enabled = False
        a = simulate(s1)
        b = simulate(s2)
        assert np.array_equal(a.imu_gyro, b.imu_gyro)
        assert np.array_equal(a.mag_psi, b.mag_psi)
        for ra, rb in zip(a.lidar, b.lidar):
            assert np.array_equal(ra.t, rb.t)


class TestSynthesis:
    def test_zero_noise_measurements_exact(self):
        s = line_scenario(seed=1).zeroed()
        log = simulate(s)
        tr = log.truth
        assert np.array_equal(log.imu_gyro, tr.gyro)
        assert np.array_equal(log.imu_accel, tr.sforce)
        rot = quat_to_matrix_batch(tr.q)
        yaw = np.arctan2(rot[:, 1, 0], rot[:, 0, 0])
        step = int(round(s.imu.rate / s.mag.rate))
        assert np.abs(log.mag_psi - yaw[::step]).max() < 1e-15
        assert np.abs(log.flow_h - tr.p[::int(round(s.imu.rate / s.flow.rate)), 2]).max() == 0.0

    def test_zdrift_telescopes(self):
        s = line_scenario(seed=1).zeroed()
        s.lidar.z_drift = 0.01
        log = simulate(s)
        pose = Pose3()
        for row in log.lidar:
            pose = pose @ Pose3(Rotation3(row.q), row.t)
        assert pose.translation[2] == pytest.approx(1.0, rel=0.02)
        assert log.truth.p[-1, 2] == pytest.approx(0.0, abs=1e-9)

    def test_degradation_drops_rows(self):
        s = line_scenario(seed=2)
        s.lidar.dropout = [[10.0, 20.0]]
        log = simulate(s)
        for row in log.lidar:
            mid = 0.5 * (row.t0 + row.t1)
            assert not (10.0 <= mid <= 20.0)
        # Rows outside the window are unaffected by its presence.
        clean = simulate(line_scenario(seed=2))
        kept = {(r.t0, r.t1): r for r in clean.lidar}
        for row in log.lidar:
            ref = kept[(row.t0, row.t1)]
            assert np.array_equal(row.t, ref.t)

    def test_corrupt_mode_keeps_rows(self):
        s = line_scenario(seed=2)
        s.lidar.dropout = [[10.0, 20.0]]
        s.lidar.dropout_mode = "corrupt"
        log = simulate(s)
        clean = simulate(line_scenario(seed=2))
        assert len(log.lidar) == len(clean.lidar)
        errs = [np.linalg.norm(a.t - b.t) for a, b in zip(log.lidar, clean.lidar)
                if 10.0 <= 0.5 * (a.t0 + a.t1) <= 20.0]
        assert min(errs) > 0.05  # far beyond nominal noise

    def test_dropout_outside_duration_rejected(self):
        s = line_scenario(seed=2)
        s.lidar.dropout = [[10.0, 1e5]]
        with pytest.raises(InputError):
            simulate(s)

    def test_mag_outliers(self):
        s = line_scenario(seed=3)
        s.mag.outlier_prob = 0.1
        s.mag.outlier_min = 1.0
        log = simulate(s)
        rot = quat_to_matrix_batch(log.truth.q)
        yaw = np.arctan2(rot[:, 1, 0], rot[:, 0, 0])
        step = int(round(s.imu.rate / s.mag.rate))
        err = np.abs([wrap_angle(p - y) for p, y in zip(log.mag_psi, yaw[::step])])
        outliers = err > 0.5
        assert 0.02 < outliers.mean() < 0.25
        assert err[outliers].min() >= 1.0 - 5 * s.mag.sigma

    def test_loop_injection(self):
        s = load_scenario(scenario_path("loop_150m.yaml"))
        log = simulate(s)
        assert len(log.loops) >= 1
        for row in log.loops:
            assert row.t1 - row.t0 >= s.loops.min_dt
            i = int(round(row.t0 * s.imu.rate))
            j = int(round(row.t1 * s.imu.rate))
            d = np.linalg.norm(log.truth.p[j] - log.truth.p[i])
            assert d <= s.loops.radius + 1e-6


class TestScenarioSchema:
    def test_fixture_files_load(self):
        for name in ("zigzag_166m.yaml", "zigzag_144m.yaml", "zigzag_232m.yaml",
                     "zigzag_256m_zdrift.yaml", "zigzag_480m_degraded.yaml",
                     "line_100m.yaml", "loop_150m.yaml", "stationary_10s.yaml"):
            s = load_scenario(scenario_path(name))
            assert s.imu.rate > 0

    def test_unknown_key_rejected(self):
        with pytest.raises(InputError):
            scenario_from_dict({"nope": 1})

    def test_zero_duration_rejected(self):
        with pytest.raises(InputError):
            scenario_from_dict({"path": {"kind": "stationary", "duration": 0.0}})

    def test_rate_divisibility_enforced(self):
        with pytest.raises(InputError):
            scenario_from_dict({"keyframe_rate": 3.0, "imu": {"rate": 200.0}})
