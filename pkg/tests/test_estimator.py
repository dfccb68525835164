import numpy as np
import pytest

from conftest import scenario_path
from polarfuse.errors import InputError
from polarfuse.estimator import (
    FusionConfig,
    heading_series,
    resolve_fusion_config,
    run_estimator,
)
from polarfuse.evaluation import Trajectory, evaluate
from polarfuse.geom import quat_to_matrix_batch, wrap_angle
from polarfuse.scenario import load_scenario
from polarfuse.sensors import SensorLog, simulate


def truth_traj(log):
    return Trajectory(t=log.truth.t, pos=log.truth.p, quat=log.truth.q)


def est_traj(result):
    return Trajectory(t=result.t, pos=result.positions(),
                      quat=result.quaternions())


def run(scenario, **cfg_overrides):
    log = simulate(scenario)
    cfg = resolve_fusion_config(scenario)
    for k, v in cfg_overrides.items():
        setattr(cfg, k, v)
    res = run_estimator(log, cfg)
    return log, res


class TestExactRecovery:
    def test_stationary_zero_noise(self):
        s = load_scenario(scenario_path("stationary_10s.yaml")).zeroed()
        log, res = run(s)
        assert np.abs(res.positions()).max() < 1e-6

    def test_straight_line_zero_noise(self):
        s = load_scenario(scenario_path("line_100m.yaml")).zeroed()
        log, res = run(s)
        rep = evaluate(est_traj(res), truth_traj(log), mode="first")
        assert rep.ate_rmse <= 1e-6

    def test_zigzag_zero_noise_with_all_factors(self):
        s = load_scenario(scenario_path("zigzag_166m.yaml")).zeroed()
        log, res = run(s)
        rep = evaluate(est_traj(res), truth_traj(log), mode="first")
        assert rep.ate_rmse <= 1e-6


class TestConfig:
    def test_unobservable_rejected(self):
        cfg = FusionConfig(use_lidar=False, use_vio=False)
        with pytest.raises(InputError, match="unobservable"):
            cfg.validate()

    def test_empty_log_rejected(self):
        cfg = FusionConfig()
        log = SensorLog(imu_t=np.empty(0), imu_gyro=np.empty((0, 3)),
                        imu_accel=np.empty((0, 3)), mag_t=np.empty(0),
                        mag_psi=np.empty(0), flow_t=np.empty(0),
                        flow_vxy=np.empty((0, 2)), flow_h=np.empty(0))
        with pytest.raises(InputError, match="empty"):
            run_estimator(log, cfg)

    def test_whitening_inherits_scenario_noise(self):
        s = load_scenario(scenario_path("zigzag_144m.yaml"))
        cfg = resolve_fusion_config(s)
        assert cfg.lidar_trans_sigma == pytest.approx(0.03)
        z = s.zeroed()
        cfg0 = resolve_fusion_config(z)
        assert cfg0.lidar_trans_sigma > 0  # defaults survive zero noise


class TestGating:
    def test_outliers_rejected_inliers_kept(self):
        s = load_scenario(scenario_path("zigzag_166m.yaml"))
        s.mag.outlier_prob = 0.1
        s.mag.outlier_min = 1.0
        log, res = run(s)
        rot = quat_to_matrix_batch(log.truth.q)
        yaw = np.arctan2(rot[:, 1, 0], rot[:, 0, 0])
        step = int(round(s.imu.rate / s.mag.rate))
        truth_yaw = dict(zip(np.round(log.mag_t, 6), yaw[::step]))
        n_out = n_out_rej = n_in = n_in_rej = 0
        for rec in res.gating:
            err = abs(wrap_angle(
                log.mag_psi[np.argmin(np.abs(log.mag_t - rec.t))]
                - truth_yaw[round(rec.t, 6)]))
            if err > 0.5:
                n_out += 1
                n_out_rej += not rec.accepted
            else:
                n_in += 1
                n_in_rej += not rec.accepted
        assert n_out > 5
        assert n_out_rej / n_out >= 0.95
        assert n_in_rej / n_in <= 0.01

    def test_gating_log_complete(self):
        s = load_scenario(scenario_path("line_100m.yaml"))
        log, res = run(s)
        assert len(res.gating) == len(log.mag_t)

    def test_bootstrap_survives_leading_outlier(self):
        # Poison the first magnetometer sample; the bootstrap median must
        # ignore it and the run must stay accurate.
        s = load_scenario(scenario_path("line_100m.yaml"))
        log = simulate(s)
        log.mag_psi = log.mag_psi.copy()
        log.mag_psi[0] = wrap_angle(log.mag_psi[0] + 2.5)
        cfg = resolve_fusion_config(s)
        res = run_estimator(log, cfg)
        rep = evaluate(est_traj(res), truth_traj(log), mode="first",
                       with_heading=True)
        assert rep.heading_rmse < 0.1
        assert rep.ate_rmse < 2.0


class TestDegradation:
    def test_survives_lidar_gaps_with_vio(self):
        s = load_scenario(scenario_path("zigzag_166m.yaml"))
        s.lidar.dropout = [[20.0, 40.0]]
        log, res = run(s)
        rep = evaluate(est_traj(res), truth_traj(log), mode="first")
        assert rep.ate_rmse < 2.0

    def test_no_lidar_runs_on_vio(self):
        s = load_scenario(scenario_path("zigzag_166m.yaml"))
        log, res = run(s, use_lidar=False)
        rep = evaluate(est_traj(res), truth_traj(log), mode="first")
        assert rep.ate_rmse < 2.0


class TestLoops:
    def test_anchored_loop_attached(self):
        s = load_scenario(scenario_path("loop_150m.yaml"))
        log, res = run(s)
        # The revisit happens ~75 s after the anchor left the 12.5 s window.
        assert res.stats["anchored_loops"] >= 1

    def test_heading_series(self):
        s = load_scenario(scenario_path("line_100m.yaml")).zeroed()
        log, res = run(s)
        h = heading_series(res)
        assert np.abs(h).max() < 1e-6  # line runs along +x
