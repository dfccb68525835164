"""Trajectory evaluation: association, alignment, and error metrics.

The default alignment mode transforms the estimate so its first pose
coincides with the ground truth's first pose; a full rigid (no scale)
least-squares alignment and a pass-through mode are also available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geom import Pose3, Rotation3, wrap_angle

ALIGN_MODES = ("none", "first", "umeyama")


@dataclass
class Trajectory:
    t: np.ndarray  # (N,)
    pos: np.ndarray  # (N, 3)
    quat: np.ndarray  # (N, 4) w,x,y,z

    def __len__(self) -> int:
        return len(self.t)


def load_tum(path: str) -> Trajectory:
    """Read TUM-format text: `t x y z qx qy qz qw` per line."""
    rows = []
    try:
        with open(path, "r") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 8:
                    raise InputError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
                try:
                    vals = [float(x) for x in parts]
                except ValueError:
                    raise InputError(f"{path}:{lineno}: non-numeric field")
                rows.append(vals)
    except OSError as exc:
        raise InputError(f"{path}: {exc}")
    if not rows:
        raise InputError(f"{path}: empty trajectory")
    arr = np.array(rows)
    quat = np.column_stack([arr[:, 7], arr[:, 4], arr[:, 5], arr[:, 6]])
    norms = np.linalg.norm(quat, axis=1)
    if np.any(norms < 1e-9):
        raise InputError(f"{path}: zero-norm quaternion")
    return Trajectory(t=arr[:, 0], pos=arr[:, 1:4], quat=quat / norms[:, None])


@dataclass
class ErrorReport:
    ate_rmse: float
    rmse_xyz: np.ndarray  # (3,)
    t: np.ndarray  # (K,) paired timestamps
    errors: np.ndarray  # (K, 3) truth - aligned estimate
    e3d: np.ndarray  # (K,)
    alignment: Pose3
    length: float  # truth trajectory length over the paired span
    heading_rmse: float | None = None


def associate(est: Trajectory, truth: Trajectory, max_dt: float = 0.05):
    """Nearest-timestamp pairing; each truth pose is used at most once.

    Returns (est_idx, truth_idx) arrays. Raises when the time ranges do not
    overlap or nothing pairs within max_dt.
    """
    if len(est) == 0 or len(truth) == 0:
        raise InputError("cannot associate empty trajectories")
    if est.t[0] > truth.t[-1] + max_dt or truth.t[0] > est.t[-1] + max_dt:
        raise InputError("trajectories do not overlap in time")
    ei, ti = [], []
    used = -1
    for i, te in enumerate(est.t):
        j = int(np.searchsorted(truth.t, te))
        best, best_dt = -1, max_dt
        for cand in (j - 1, j):
            if used < cand < len(truth.t):
                dt = abs(float(truth.t[cand] - te))
                if dt <= best_dt:
                    best, best_dt = cand, dt
        if best >= 0:
            ei.append(i)
            ti.append(best)
            used = best
    if not ei:
        raise InputError("no pairs within the association tolerance")
    return np.array(ei), np.array(ti)


def align(est_pos, truth_pos, est_quat=None, truth_quat=None,
          mode: str = "first") -> Pose3:
    """Transform T minimizing truth vs T * estimate discrepancy.

    Modes: `none` (identity), `first` (truth_0 * est_0^-1, mirrors aligning
    the first node to ground truth), `umeyama` (rigid least squares via SVD,
    no scale; needs >= 3 non-collinear pairs).
    """
    if mode not in ALIGN_MODES:
        raise InputError(f"unknown alignment mode {mode!r}")
    if mode == "none":
        return Pose3.identity()
    if mode == "first":
        if est_quat is None or truth_quat is None:
            raise InputError("first-pose alignment needs orientations")
        t_est = Pose3(Rotation3(est_quat[0]), est_pos[0])
        t_truth = Pose3(Rotation3(truth_quat[0]), truth_pos[0])
        return t_truth @ t_est.inverse()

    est_pos = np.asarray(est_pos, dtype=float)
    truth_pos = np.asarray(truth_pos, dtype=float)
    if est_pos.shape[0] < 3:
        raise InputError("rigid alignment needs at least 3 pairs")
    mu_e = est_pos.mean(axis=0)
    mu_t = truth_pos.mean(axis=0)
    cross = (truth_pos - mu_t).T @ (est_pos - mu_e)
    u, s, vt = np.linalg.svd(cross)
    if s[1] < 1e-9 * max(s[0], 1.0):
        raise InputError("degenerate configuration: pairs are collinear")
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    r3 = Rotation3.from_matrix(rot)
    return Pose3(r3, mu_t - r3.rotate(mu_e))


def compute_errors(est: Trajectory, truth: Trajectory, alignment: Pose3,
                   pairs=None, with_heading: bool = False) -> ErrorReport:
    """Per-pair position errors and RMSE after applying the alignment."""
    if pairs is None:
        pairs = associate(est, truth)
    ei, ti = pairs
    if len(ei) == 0:
        raise InputError("no aligned pairs to evaluate")
    est_aligned = est.pos[ei] @ alignment.rotation.matrix().T + alignment.translation
    err = truth.pos[ti] - est_aligned
    e3d = np.linalg.norm(err, axis=1)
    ate = float(np.sqrt(np.mean(e3d ** 2)))
    rmse_xyz = np.sqrt(np.mean(err ** 2, axis=0))
    seg = truth.pos[ti[0]:ti[-1] + 1]
    length = float(np.linalg.norm(np.diff(seg, axis=0), axis=1).sum())
    heading_rmse = None
    if with_heading:
        dyaw = []
        rot_align = alignment.rotation.matrix()
        for a, b in zip(ei, ti):
            qe = est.quat[a]
            re = rot_align @ Rotation3(qe).matrix()
            rt = Rotation3(truth.quat[b]).matrix()
            ye = math.atan2(re[1, 0], re[0, 0])
            yt = math.atan2(rt[1, 0], rt[0, 0])
            dyaw.append(wrap_angle(yt - ye))
        heading_rmse = float(np.sqrt(np.mean(np.array(dyaw) ** 2)))
    return ErrorReport(ate_rmse=ate, rmse_xyz=rmse_xyz, t=est.t[ei],
                       errors=err, e3d=e3d, alignment=alignment,
                       length=length, heading_rmse=heading_rmse)


def evaluate(est: Trajectory, truth: Trajectory, mode: str = "first",
             max_dt: float = 0.05, with_heading: bool = False) -> ErrorReport:
    """associate + align + compute_errors in one call."""
    pairs = associate(est, truth, max_dt)
    ei, ti = pairs
    alignment = align(est.pos[ei], truth.pos[ti], est.quat[ei],
                      truth.quat[ti], mode=mode)
    return compute_errors(est, truth, alignment, pairs=pairs,
                          with_heading=with_heading)


def write_report(report: ErrorReport, report_csv: str, errors_csv: str,
                 summary_txt: str) -> None:
    with open(report_csv, "w") as fh:
        fh.write("ate_rmse,rmse_x,rmse_y,rmse_z,length_m,pairs\n")
        fh.write(f"{report.ate_rmse:.9g},{report.rmse_xyz[0]:.9g},"
                 f"{report.rmse_xyz[1]:.9g},{report.rmse_xyz[2]:.9g},"
                 f"{report.length:.9g},{len(report.t)}\n")
    with open(errors_csv, "w") as fh:
        fh.write("t,ex,ey,ez,e3d\n")
        for k in range(len(report.t)):
            fh.write(f"{report.t[k]:.9g},{report.errors[k, 0]:.9g},"
                     f"{report.errors[k, 1]:.9g},{report.errors[k, 2]:.9g},"
                     f"{report.e3d[k]:.9g}\n")
    lines = [
        f"pairs          : {len(report.t)}",
        f"trajectory len : {report.length:.3f} m",
        f"ate rmse       : {report.ate_rmse:.6f} m",
        f"rmse x/y/z     : {report.rmse_xyz[0]:.6f} / "
        f"{report.rmse_xyz[1]:.6f} / {report.rmse_xyz[2]:.6f} m",
        f"max 3d error   : {report.e3d.max():.6f} m",
    ]
    if report.heading_rmse is not None:
        lines.append(f"heading rmse   : {report.heading_rmse:.6f} rad")
    with open(summary_txt, "w") as fh:
        fh.write("\n".join(lines) + "\n")
