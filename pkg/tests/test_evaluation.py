import math

import numpy as np
import pytest

from polarfuse.errors import InputError
from polarfuse.evaluation import (
    Trajectory,
    align,
    associate,
    compute_errors,
    evaluate,
    load_tum,
    write_report,
)
from polarfuse.geom import Pose3, Rotation3, so3_exp


def make_traj(t, pos, yaw=None):
    pos = np.asarray(pos, dtype=float)
    n = len(t)
    if yaw is None:
        quat = np.tile([1.0, 0, 0, 0], (n, 1))
    else:
        quat = np.column_stack([np.cos(np.asarray(yaw) / 2), np.zeros(n),
                                np.zeros(n), np.sin(np.asarray(yaw) / 2)])
    return Trajectory(t=np.asarray(t, dtype=float), pos=pos, quat=quat)


def circle_traj(n=40, radius=5.0):
    ang = np.linspace(0, 1.5 * math.pi, n)
    pos = np.column_stack([radius * np.cos(ang), radius * np.sin(ang),
                           0.1 * ang])
    return make_traj(np.arange(n) * 0.5, pos, yaw=ang)


def transform_traj(traj, pose):
    pos = traj.pos @ pose.rotation.matrix().T + pose.translation
    quat = np.stack([
        (pose.rotation @ Rotation3(q)).q for q in traj.quat])
    return Trajectory(t=traj.t.copy(), pos=pos, quat=quat)


class TestAssociate:
    def test_identical_timestamps(self):
        tr = circle_traj()
        ei, ti = associate(tr, tr)
        assert np.array_equal(ei, ti)
        assert len(ei) == len(tr)

    def test_sparse_vs_dense(self):
        truth = make_traj(np.arange(0, 10, 0.005),
                          np.zeros((2000, 3)))
        est = make_traj(np.arange(0, 10, 0.2), np.zeros((50, 3)))
        ei, ti = associate(est, truth, max_dt=0.01)
        assert len(ei) == len(est)
        assert np.abs(truth.t[ti] - est.t[ei]).max() <= 0.01

    def test_truth_used_once(self):
        truth = make_traj([0.0, 1.0], np.zeros((2, 3)))
        est = make_traj([0.0, 0.01, 0.02], np.zeros((3, 3)))
        ei, ti = associate(est, truth, max_dt=0.5)
        assert len(set(ti.tolist())) == len(ti)

    def test_disjoint_ranges(self):
        a = make_traj([0.0, 1.0], np.zeros((2, 3)))
        b = make_traj([100.0, 101.0], np.zeros((2, 3)))
        with pytest.raises(InputError):
            associate(a, b, max_dt=0.05)


class TestAlign:
    def test_identity_when_equal(self):
        tr = circle_traj()
        for mode in ("first", "umeyama"):
            t = align(tr.pos, tr.pos, tr.quat, tr.quat, mode=mode)
            assert np.abs(t.translation).max() < 1e-9
            assert abs(t.rotation.q[0] - 1.0) < 1e-9

    def test_translation_recovered(self):
        tr = circle_traj()
        shifted = transform_traj(tr, Pose3(Rotation3.identity(), [1.0, 2.0, 3.0]))
        t = align(shifted.pos, tr.pos, shifted.quat, tr.quat, mode="first")
        assert np.allclose(t.translation, [-1, -2, -3], atol=1e-9)

    def test_rotation_recovered_umeyama(self):
        tr = circle_traj()
        g = Pose3(so3_exp([0, 0, math.pi / 6]), [0.0, 0.0, 0.0])
        rotated = transform_traj(tr, g)
        t = align(rotated.pos, tr.pos, mode="umeyama")
        recovered = t.rotation @ g.rotation
        assert np.abs(recovered.q - [1, 0, 0, 0]).max() < 1e-9

    def test_collinear_rejected(self):
        pos = np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)])
        with pytest.raises(InputError):
            align(pos, pos + [0, 1, 0], mode="umeyama")

    def test_none_mode(self):
        t = align(None, None, mode="none")
        assert np.abs(t.translation).max() == 0.0


class TestComputeErrors:
    def test_zero_when_equal(self):
        tr = circle_traj()
        rep = evaluate(tr, tr, mode="first")
        assert rep.ate_rmse == 0.0
        assert np.abs(rep.rmse_xyz).max() == 0.0

    def test_constant_offset_none_mode(self):
        tr = circle_traj()
        shifted = Trajectory(t=tr.t, pos=tr.pos - [0, 0, 1.0], quat=tr.quat)
        rep = evaluate(shifted, tr, mode="none")
        assert rep.ate_rmse == pytest.approx(1.0)
        assert rep.rmse_xyz[2] == pytest.approx(1.0)
        assert rep.rmse_xyz[0] == pytest.approx(0.0, abs=1e-12)

    def test_half_pairs_with_unit_error(self):
        n = 40
        t = np.arange(n) * 1.0
        truth = make_traj(t, np.zeros((n, 3)))
        est_pos = np.zeros((n, 3))
        est_pos[: n // 2, 0] = -1.0  # truth - est = +1 on half the pairs
        est = make_traj(t, est_pos)
        rep = evaluate(est, truth, mode="none", max_dt=0.1)
        assert rep.ate_rmse == pytest.approx(math.sqrt(0.5))

    def test_rigid_invariance(self):
        tr = circle_traj()
        est = Trajectory(t=tr.t, pos=tr.pos + np.random.default_rng(0).normal(0, 0.1, tr.pos.shape),
                         quat=tr.quat)
        g = Pose3(so3_exp([0.4, -0.2, 0.9]), [5.0, -2.0, 1.0])
        for mode in ("first", "umeyama"):
            a = evaluate(est, tr, mode=mode).ate_rmse
            b = evaluate(transform_traj(est, g), transform_traj(tr, g),
                         mode=mode).ate_rmse
            assert b == pytest.approx(a, rel=1e-9)

    def test_umeyama_not_worse_than_none(self):
        tr = circle_traj()
        rng = np.random.default_rng(3)
        est = Trajectory(t=tr.t, pos=tr.pos + rng.normal(0, 0.2, tr.pos.shape)
                         + [0.5, -0.3, 0.2], quat=tr.quat)
        pairs = associate(est, tr)
        none_rep = compute_errors(est, tr, align(None, None, mode="none"), pairs)
        um = align(est.pos[pairs[0]], tr.pos[pairs[1]], mode="umeyama")
        um_rep = compute_errors(est, tr, um, pairs)
        assert um_rep.ate_rmse <= none_rep.ate_rmse + 1e-12

    def test_e3d_dominates_axes(self):
        tr = circle_traj()
        rng = np.random.default_rng(4)
        est = Trajectory(t=tr.t, pos=tr.pos + rng.normal(0, 0.3, tr.pos.shape),
                         quat=tr.quat)
        rep = evaluate(est, tr, mode="first")
        assert np.all(rep.e3d + 1e-12 >= np.abs(rep.errors).max(axis=1))

    def test_ate_definition(self):
        tr = circle_traj()
        rng = np.random.default_rng(5)
        est = Trajectory(t=tr.t, pos=tr.pos + rng.normal(0, 0.3, tr.pos.shape),
                         quat=tr.quat)
        rep = evaluate(est, tr, mode="first")
        assert rep.ate_rmse ** 2 == pytest.approx(np.mean(rep.e3d ** 2))

    def test_heading_rmse(self):
        tr = circle_traj()
        rep = evaluate(tr, tr, mode="first", with_heading=True)
        assert rep.heading_rmse == pytest.approx(0.0, abs=1e-12)


class TestTumIo:
    def test_roundtrip(self, tmp_path):
        from polarfuse.sensors import write_tum
        tr = circle_traj()
        path = str(tmp_path / "t.tum")
        write_tum(path, tr.t, tr.pos, tr.quat)
        back = load_tum(path)
        assert np.abs(back.pos - tr.pos).max() < 1e-12
        assert np.abs(back.t - tr.t).max() < 1e-12

    def test_parse_error_has_line_number(self, tmp_path):
        path = tmp_path / "bad.tum"
        path.write_text("0 0 0 0 0 0 0 1\n0 0 nope 0 0 0 0 1\n")
        with pytest.raises(InputError, match=":2"):
            load_tum(str(path))

    def test_field_count_error(self, tmp_path):
        path = tmp_path / "bad.tum"
        path.write_text("0 0 0 0 0 0 1\n")
        with pytest.raises(InputError, match="8 fields"):
            load_tum(str(path))

    def test_report_files(self, tmp_path):
        tr = circle_traj()
        rep = evaluate(tr, tr, mode="first")
        write_report(rep, str(tmp_path / "report.csv"),
                     str(tmp_path / "errors.csv"), str(tmp_path / "summary.txt"))
        header = (tmp_path / "report.csv").read_text().splitlines()[0]
        assert header == "ate_rmse,rmse_x,rmse_y,rmse_z,length_m,pairs"
        lines = (tmp_path / "errors.csv").read_text().splitlines()
        assert lines[0] == "t,ex,ey,ez,e3d"
        assert len(lines) == len(tr) + 1
