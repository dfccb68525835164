"""NumPy fallback for the hot kernels.

Mirrors the compiled extension (`_fastcore`) function for function. The
per-step chains that cannot be vectorized (covariance propagation, rotation
bias Jacobian) run as lean Python loops over precomputed per-step blocks;
everything else is batched.
"""

from __future__ import annotations

import numpy as np

from .geom import (
    jr_batch,
    jr_inv_batch,
    quat_from_rotvec_batch,
    quat_mul_batch,
    quat_to_matrix_batch,
    rotvec_from_quat_batch,
    skew_batch,
)

COMPILED = False


def preintegrate(t, gyro, accel, ba, bg, sigma_g, sigma_a):
    """Midpoint preintegration of an IMU segment.

    t: (N,) strictly increasing times; gyro/accel: (N, 3) raw samples;
    ba/bg: (3,) bias linearization point; sigma_g/sigma_a: continuous-time
    noise densities (per sqrt(s)).

    Returns (dt_total, dq, dv, dp, cov, j_rbg, j_vba, j_vbg, j_pba, j_pbg)
    with cov the 9x9 covariance of (rot, vel, pos) errors.
    """
    t = np.asarray(t, dtype=float)
    w = np.asarray(gyro, dtype=float) - np.asarray(bg, dtype=float)
    a = np.asarray(accel, dtype=float) - np.asarray(ba, dtype=float)
    n = t.shape[0]
    dts = np.diff(t)  # (S,)
    s = n - 1

    w_mid = 0.5 * (w[:-1] + w[1:])  # (S, 3)
    step_rotvec = w_mid * dts[:, None]
    step_q = quat_from_rotvec_batch(step_rotvec)  # (S, 4)

    # Rotation chain.
    q_seq = np.empty((n, 4))
    q_seq[0] = (1.0, 0.0, 0.0, 0.0)
    for k in range(s):
        qk = quat_mul_batch(q_seq[k], step_q[k])
        q_seq[k + 1] = qk / np.sqrt(qk @ qk)
    rot = quat_to_matrix_batch(q_seq)  # (N, 3, 3)

    # Midpoint specific force in the start frame, then v/p cumsums.
    a_rot = np.einsum("kij,kj->ki", rot, a)  # (N, 3)
    a_mid = 0.5 * (a_rot[:-1] + a_rot[1:])  # (S, 3)
    dv_seq = np.vstack([np.zeros(3), np.cumsum(a_mid * dts[:, None], axis=0)])
    dp_terms = dv_seq[:-1] * dts[:, None] + 0.5 * a_mid * (dts ** 2)[:, None]
    dp = dp_terms.sum(axis=0)

    # Per-step blocks shared by covariance and bias-Jacobian chains.
    r0 = rot[:-1]
    r1 = rot[1:]
    sk0 = skew_batch(a[:-1])
    sk1 = skew_batch(a[1:])
    r0s0 = r0 @ sk0
    r1s1 = r1 @ sk1
    step_rt = np.swapaxes(quat_to_matrix_batch(step_q), 1, 2)  # (S, 3, 3)
    jr_step = jr_batch(step_rotvec)
    f_vt = -0.5 * (r0s0 + r1s1 @ step_rt) * dts[:, None, None]
    rbar_dt = 0.5 * (r0 + r1) * dts[:, None, None]

    amat = np.zeros((s, 9, 9))
    amat[:, 0:3, 0:3] = step_rt
    amat[:, 3:6, 0:3] = f_vt
    amat[:, 6:9, 0:3] = 0.5 * f_vt * dts[:, None, None]
    amat[:, 3:6, 3:6] = np.eye(3)
    amat[:, 6:9, 6:9] = np.eye(3)
    amat[:, 6:9, 3:6] = np.eye(3) * dts[:, None, None]

    # Noise input blocks: columns (gyro, accel), rows (rot, vel, pos).
    n_tg = jr_step * dts[:, None, None]
    n_vg = -0.5 * (r1s1 @ jr_step) * (dts ** 2)[:, None, None]
    n_va = rbar_dt
    bmat = np.zeros((s, 9, 6))
    bmat[:, 0:3, 0:3] = n_tg
    bmat[:, 3:6, 0:3] = n_vg
    bmat[:, 6:9, 0:3] = 0.5 * n_vg * dts[:, None, None]
    bmat[:, 3:6, 3:6] = n_va
    bmat[:, 6:9, 3:6] = 0.5 * n_va * dts[:, None, None]
    q_diag = np.empty((s, 6))
    q_diag[:, 0:3] = (sigma_g ** 2) / dts[:, None]
    q_diag[:, 3:6] = (sigma_a ** 2) / dts[:, None]
    bqb = np.einsum("sik,sk,sjk->sij", bmat, q_diag, bmat)

    cov = np.zeros((9, 9))
    for k in range(s):
        cov = amat[k] @ cov @ amat[k].T + bqb[k]
    cov = 0.5 * (cov + cov.T)

    # Rotation bias Jacobian chain, then the vectorized v/p accumulations.
    j_rbg_seq = np.zeros((n, 3, 3))
    for k in range(s):
        j_rbg_seq[k + 1] = step_rt[k] @ j_rbg_seq[k] - jr_step[k] * dts[k]

    j_vba_terms = -rbar_dt
    j_vba_seq = np.concatenate(
        [np.zeros((1, 3, 3)), np.cumsum(j_vba_terms, axis=0)])
    g_terms = -0.5 * (r0s0 @ j_rbg_seq[:-1] + r1s1 @ j_rbg_seq[1:])
    j_vbg_seq = np.concatenate(
        [np.zeros((1, 3, 3)), np.cumsum(g_terms * dts[:, None, None], axis=0)])
    j_pba = (j_vba_seq[:-1] * dts[:, None, None]
             - 0.5 * rbar_dt * dts[:, None, None]).sum(axis=0)
    j_pbg = (j_vbg_seq[:-1] * dts[:, None, None]
             + 0.5 * g_terms * (dts ** 2)[:, None, None]).sum(axis=0)

    return (float(t[-1] - t[0]), q_seq[-1], dv_seq[-1], dp, cov,
            j_rbg_seq[-1], j_vba_seq[-1], j_vbg_seq[-1], j_pba, j_pbg)


def imu_linearize(q_i, p_i, v_i, ba_i, bg_i, q_j, p_j, v_j, ba_j, bg_j,
                  dq, dv, dp, dt, ba0, bg0,
                  j_rbg, j_vba, j_vbg, j_pba, j_pbg, gravity, with_jac=True):
    """Batched IMU factor residuals/Jacobians.

    All state arrays are (N, k); delta arrays are stacked per factor.
    Residual rows: (rot 3, vel 3, pos 3, ba walk 3, bg walk 3); Jacobian
    columns follow the state tangent order.
    """
    nq = q_i.shape[0]
    dba = ba_i - ba0
    dbg = bg_i - bg0

    xi = np.einsum("nij,nj->ni", j_rbg, dbg)
    dq_c = quat_mul_batch(dq, quat_from_rotvec_batch(xi))
    dv_c = dv + np.einsum("nij,nj->ni", j_vba, dba) + np.einsum(
        "nij,nj->ni", j_vbg, dbg)
    dp_c = dp + np.einsum("nij,nj->ni", j_pba, dba) + np.einsum(
        "nij,nj->ni", j_pbg, dbg)

    qi_conj = q_i * np.array([1.0, -1.0, -1.0, -1.0])
    dqc_conj = dq_c * np.array([1.0, -1.0, -1.0, -1.0])
    e_q = quat_mul_batch(dqc_conj, quat_mul_batch(qi_conj, q_j))
    r_rot = rotvec_from_quat_batch(e_q)

    ri_t = np.swapaxes(quat_to_matrix_batch(q_i), 1, 2)
    dtc = dt[:, None]
    w_v = np.einsum("nij,nj->ni", ri_t, v_j - v_i - gravity * dtc)
    w_p = np.einsum("nij,nj->ni", ri_t,
                    p_j - p_i - v_i * dtc - 0.5 * gravity * dtc ** 2)

    res = np.empty((nq, 15))
    res[:, 0:3] = r_rot
    res[:, 3:6] = w_v - dv_c
    res[:, 6:9] = w_p - dp_c
    res[:, 9:12] = ba_j - ba_i
    res[:, 12:15] = bg_j - bg_i
    if not with_jac:
        return res, None, None

    jri = jr_inv_batch(r_rot)
    rj = quat_to_matrix_batch(q_j)
    ri = np.swapaxes(ri_t, 1, 2)
    rjt_ri = np.einsum("nji,njk->nik", rj, ri)
    e_rt = np.swapaxes(quat_to_matrix_batch(e_q), 1, 2)
    jr_xi = jr_batch(xi)

    ji = np.zeros((nq, 15, 15))
    jj = np.zeros((nq, 15, 15))
    ji[:, 0:3, 0:3] = -jri @ rjt_ri
    ji[:, 0:3, 12:15] = -jri @ e_rt @ jr_xi @ j_rbg
    ji[:, 3:6, 0:3] = skew_batch(w_v)
    ji[:, 3:6, 6:9] = -ri_t
    ji[:, 3:6, 9:12] = -j_vba
    ji[:, 3:6, 12:15] = -j_vbg
    ji[:, 6:9, 0:3] = skew_batch(w_p)
    ji[:, 6:9, 3:6] = -ri_t
    ji[:, 6:9, 6:9] = -ri_t * dtc[:, :, None]
    ji[:, 6:9, 9:12] = -j_pba
    ji[:, 6:9, 12:15] = -j_pbg
    ji[:, 9:12, 9:12] = -np.eye(3)
    ji[:, 12:15, 12:15] = -np.eye(3)

    jj[:, 0:3, 0:3] = jri
    jj[:, 3:6, 6:9] = ri_t
    jj[:, 6:9, 3:6] = ri_t
    jj[:, 9:12, 9:12] = np.eye(3)
    jj[:, 12:15, 12:15] = np.eye(3)
    return res, ji, jj


def relpose_linearize(q_i, p_i, q_j, p_j, q_m, t_m, with_jac=True):
    """Batched relative-pose factor residuals/Jacobians.

    Residual rows (rot 3, trans 3); Jacobians are (N, 6, 6) over the
    (rot, trans) tangent blocks of states i and j.
    """
    nq = q_i.shape[0]
    qi_conj = q_i * np.array([1.0, -1.0, -1.0, -1.0])
    qm_conj = q_m * np.array([1.0, -1.0, -1.0, -1.0])
    e_q = quat_mul_batch(qm_conj, quat_mul_batch(qi_conj, q_j))
    r_rot = rotvec_from_quat_batch(e_q)

    ri_t = np.swapaxes(quat_to_matrix_batch(q_i), 1, 2)
    rm_t = np.swapaxes(quat_to_matrix_batch(q_m), 1, 2)
    u = np.einsum("nij,nj->ni", ri_t, p_j - p_i)
    r_tr = np.einsum("nij,nj->ni", rm_t, u - t_m)

    res = np.empty((nq, 6))
    res[:, 0:3] = r_rot
    res[:, 3:6] = r_tr
    if not with_jac:
        return res, None, None

    jri = jr_inv_batch(r_rot)
    rj = quat_to_matrix_batch(q_j)
    ri = np.swapaxes(ri_t, 1, 2)
    rjt_ri = np.einsum("nji,njk->nik", rj, ri)
    rmt_rit = rm_t @ ri_t

    ji = np.zeros((nq, 6, 6))
    jj = np.zeros((nq, 6, 6))
    ji[:, 0:3, 0:3] = -jri @ rjt_ri
    ji[:, 3:6, 0:3] = rm_t @ skew_batch(u)
    ji[:, 3:6, 3:6] = -rmt_rit
    jj[:, 0:3, 0:3] = jri
    jj[:, 3:6, 3:6] = rmt_rit
    return res, ji, jj
