# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: IMU preintegration and batched factor linearization.

Mirrors `_slowcore` function for function; both backends must agree to
floating-point round-off (see the backend parity tests).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cos, fabs, sin, sqrt

cnp.import_array()

COMPILED = True

cdef double SMALL = 1e-8


cdef inline void quat_mul_c(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[0]*b[0] - a[1]*b[1] - a[2]*b[2] - a[3]*b[3]
    out[1] = a[0]*b[1] + a[1]*b[0] + a[2]*b[3] - a[3]*b[2]
    out[2] = a[0]*b[2] - a[1]*b[3] + a[2]*b[0] + a[3]*b[1]
    out[3] = a[0]*b[3] + a[1]*b[2] - a[2]*b[1] + a[3]*b[0]


cdef inline void quat_conj_c(const double* q, double* out) noexcept nogil:
    out[0] = q[0]
    out[1] = -q[1]
    out[2] = -q[2]
    out[3] = -q[3]


cdef inline void quat_normalize_c(double* q) noexcept nogil:
    cdef double n = sqrt(q[0]*q[0] + q[1]*q[1] + q[2]*q[2] + q[3]*q[3])
    q[0] /= n; q[1] /= n; q[2] /= n; q[3] /= n


cdef inline void quat_to_mat_c(const double* q, double* m) noexcept nogil:
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    m[0] = 1.0 - 2.0*(y*y + z*z); m[1] = 2.0*(x*y - w*z); m[2] = 2.0*(x*z + w*y)
    m[3] = 2.0*(x*y + w*z); m[4] = 1.0 - 2.0*(x*x + z*z); m[5] = 2.0*(y*z - w*x)
    m[6] = 2.0*(x*z - w*y); m[7] = 2.0*(y*z + w*x); m[8] = 1.0 - 2.0*(x*x + y*y)


cdef inline void quat_from_rotvec_c(const double* w, double* q) noexcept nogil:
    cdef double angle = sqrt(w[0]*w[0] + w[1]*w[1] + w[2]*w[2])
    cdef double s, half
    if angle < SMALL:
        s = 0.5 - angle*angle/48.0
        q[0] = 1.0 - angle*angle/8.0
    else:
        half = 0.5*angle
        s = sin(half)/angle
        q[0] = cos(half)
    q[1] = w[0]*s; q[2] = w[1]*s; q[3] = w[2]*s
    quat_normalize_c(q)


cdef inline void rotvec_from_quat_c(const double* q, double* out) noexcept nogil:
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    cdef double n, angle, scale
    if w < 0.0:
        w = -w; x = -x; y = -y; z = -z
    n = sqrt(x*x + y*y + z*z)
    if n < SMALL:
        scale = (2.0/w)*(1.0 + n*n/(3.0*w*w))
    else:
        angle = 2.0*atan2(n, w)
        scale = angle/n
    out[0] = x*scale; out[1] = y*scale; out[2] = z*scale


cdef inline void skew_c(const double* v, double* m) noexcept nogil:
    m[0] = 0.0;   m[1] = -v[2]; m[2] = v[1]
    m[3] = v[2];  m[4] = 0.0;   m[5] = -v[0]
    m[6] = -v[1]; m[7] = v[0];  m[8] = 0.0


cdef inline void mat3_mul(const double* a, const double* b, double* out) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += a[3*i + k]*b[3*k + j]
            out[3*i + j] = s


cdef inline void mat3_mul_t(const double* a, const double* b, double* out) noexcept nogil:
    # a^T @ b
    cdef int i, j, k
    cdef double s
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += a[3*k + i]*b[3*k + j]
            out[3*i + j] = s


cdef inline void mat3_vec(const double* a, const double* v, double* out) noexcept nogil:
    out[0] = a[0]*v[0] + a[1]*v[1] + a[2]*v[2]
    out[1] = a[3]*v[0] + a[4]*v[1] + a[5]*v[2]
    out[2] = a[6]*v[0] + a[7]*v[1] + a[8]*v[2]


cdef inline void mat3_vec_t(const double* a, const double* v, double* out) noexcept nogil:
    out[0] = a[0]*v[0] + a[3]*v[1] + a[6]*v[2]
    out[1] = a[1]*v[0] + a[4]*v[1] + a[7]*v[2]
    out[2] = a[2]*v[0] + a[5]*v[1] + a[8]*v[2]


cdef inline void mat3_transpose(const double* a, double* out) noexcept nogil:
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3*i + j] = a[3*j + i]


cdef inline void jr_c(const double* phi, double* m) noexcept nogil:
    cdef double a = sqrt(phi[0]*phi[0] + phi[1]*phi[1] + phi[2]*phi[2])
    cdef double s[9]
    cdef double s2[9]
    cdef double c1, c2, a2
    cdef int i
    skew_c(phi, s)
    mat3_mul(s, s, s2)
    if a < SMALL:
        c1 = 0.5
        c2 = 1.0/6.0
    else:
        a2 = a*a
        c1 = (1.0 - cos(a))/a2
        c2 = (a - sin(a))/(a2*a)
    for i in range(9):
        m[i] = -c1*s[i] + c2*s2[i]
    m[0] += 1.0; m[4] += 1.0; m[8] += 1.0


cdef inline void jr_inv_c(const double* phi, double* m) noexcept nogil:
    cdef double a = sqrt(phi[0]*phi[0] + phi[1]*phi[1] + phi[2]*phi[2])
    cdef double s[9]
    cdef double s2[9]
    cdef double c, a2
    cdef int i
    skew_c(phi, s)
    mat3_mul(s, s, s2)
    if a < SMALL:
        c = 1.0/12.0
    else:
        a2 = a*a
        c = 1.0/a2 - (1.0 + cos(a))/(2.0*a*sin(a))
    for i in range(9):
        m[i] = 0.5*s[i] + c*s2[i]
    m[0] += 1.0; m[4] += 1.0; m[8] += 1.0


def preintegrate(double[::1] t, double[:, ::1] gyro, double[:, ::1] accel,
                 double[::1] ba, double[::1] bg, double sigma_g, double sigma_a):
    """See `_slowcore.preintegrate`."""
    cdef Py_ssize_t n = t.shape[0]
    cdef Py_ssize_t steps = n - 1
    cdef cnp.ndarray[double, ndim=1] dq_out = np.empty(4)
    cdef cnp.ndarray[double, ndim=1] dv_out = np.zeros(3)
    cdef cnp.ndarray[double, ndim=1] dp_out = np.zeros(3)
    cdef cnp.ndarray[double, ndim=2] cov_out = np.zeros((9, 9))
    cdef cnp.ndarray[double, ndim=2] j_rbg_o = np.zeros((3, 3))
    cdef cnp.ndarray[double, ndim=2] j_vba_o = np.zeros((3, 3))
    cdef cnp.ndarray[double, ndim=2] j_vbg_o = np.zeros((3, 3))
    cdef cnp.ndarray[double, ndim=2] j_pba_o = np.zeros((3, 3))
    cdef cnp.ndarray[double, ndim=2] j_pbg_o = np.zeros((3, 3))

    cdef double q[4]
    cdef double q_next[4]
    cdef double step_q[4]
    cdef double dv[3]
    cdef double dp[3]
    cdef double w_mid[3]
    cdef double a0[3]
    cdef double a1[3]
    cdef double r0[9]
    cdef double r1[9]
    cdef double rstep[9]
    cdef double rstep_t[9]
    cdef double jr_step[9]
    cdef double sk0[9]
    cdef double sk1[9]
    cdef double r0s0[9]
    cdef double r1s1[9]
    cdef double tmp[9]
    cdef double tmp2[9]
    cdef double f_vt[9]
    cdef double n_tg[9]
    cdef double n_vg[9]
    cdef double n_va[9]
    cdef double n_pg[9]
    cdef double n_pa[9]
    cdef double p_mat[81]
    cdef double a_mat[81]
    cdef double ap[81]
    cdef double bqb[81]
    cdef double j_rbg[9]
    cdef double j_rbg_next[9]
    cdef double j_vba[9]
    cdef double j_vbg[9]
    cdef double j_pba[9]
    cdef double j_pbg[9]
    cdef double g_term[9]
    cdef double av0[3]
    cdef double av1[3]
    cdef double a_mid[3]
    cdef double dt, qg, qa, s
    cdef Py_ssize_t k, i, j, kk

    q[0] = 1.0; q[1] = 0.0; q[2] = 0.0; q[3] = 0.0
    for i in range(3):
        dv[i] = 0.0; dp[i] = 0.0
    for i in range(81):
        p_mat[i] = 0.0
    for i in range(9):
        j_rbg[i] = 0.0; j_vba[i] = 0.0; j_vbg[i] = 0.0
        j_pba[i] = 0.0; j_pbg[i] = 0.0

    for k in range(steps):
        dt = t[k + 1] - t[k]
        for i in range(3):
            w_mid[i] = (0.5*(gyro[k, i] + gyro[k + 1, i]) - bg[i])*dt
            a0[i] = accel[k, i] - ba[i]
            a1[i] = accel[k + 1, i] - ba[i]
        quat_from_rotvec_c(w_mid, step_q)
        quat_to_mat_c(step_q, rstep)
        mat3_transpose(rstep, rstep_t)
        jr_c(w_mid, jr_step)
        quat_to_mat_c(q, r0)
        quat_mul_c(q, step_q, q_next)
        quat_normalize_c(q_next)
        quat_to_mat_c(q_next, r1)

        mat3_vec(r0, a0, av0)
        mat3_vec(r1, a1, av1)
        for i in range(3):
            a_mid[i] = 0.5*(av0[i] + av1[i])
            dp[i] += dv[i]*dt + 0.5*a_mid[i]*dt*dt
            dv[i] += a_mid[i]*dt

        skew_c(a0, sk0)
        skew_c(a1, sk1)
        mat3_mul(r0, sk0, r0s0)
        mat3_mul(r1, sk1, r1s1)
        mat3_mul(r1s1, rstep_t, tmp)
        for i in range(9):
            f_vt[i] = -0.5*(r0s0[i] + tmp[i])*dt

        # State transition (9x9): rows/cols (rot, vel, pos).
        for i in range(81):
            a_mat[i] = 0.0
        for i in range(3):
            for j in range(3):
                a_mat[9*i + j] = rstep_t[3*i + j]
                a_mat[9*(3 + i) + j] = f_vt[3*i + j]
                a_mat[9*(6 + i) + j] = 0.5*f_vt[3*i + j]*dt
        for i in range(3):
            a_mat[9*(3 + i) + 3 + i] = 1.0
            a_mat[9*(6 + i) + 6 + i] = 1.0
            a_mat[9*(6 + i) + 3 + i] = dt

        # Noise input blocks.
        mat3_mul(r1s1, jr_step, tmp)
        for i in range(9):
            n_tg[i] = jr_step[i]*dt
            n_vg[i] = -0.5*tmp[i]*dt*dt
            n_pg[i] = 0.5*n_vg[i]*dt
            n_va[i] = 0.5*(r0[i] + r1[i])*dt
            n_pa[i] = 0.5*n_va[i]*dt
        qg = sigma_g*sigma_g/dt
        qa = sigma_a*sigma_a/dt
        for i in range(81):
            bqb[i] = 0.0
        _accum_outer(bqb, 0, 0, n_tg, n_tg, qg)
        _accum_outer(bqb, 0, 3, n_tg, n_vg, qg)
        _accum_outer(bqb, 0, 6, n_tg, n_pg, qg)
        _accum_outer(bqb, 3, 3, n_vg, n_vg, qg)
        _accum_outer(bqb, 3, 6, n_vg, n_pg, qg)
        _accum_outer(bqb, 6, 6, n_pg, n_pg, qg)
        _accum_outer(bqb, 3, 3, n_va, n_va, qa)
        _accum_outer(bqb, 3, 6, n_va, n_pa, qa)
        _accum_outer(bqb, 6, 6, n_pa, n_pa, qa)
        for i in range(9):
            for j in range(i):
                bqb[9*i + j] = bqb[9*j + i]

        # P <- A P A^T + BQB, then symmetrize.
        for i in range(9):
            for j in range(9):
                s = 0.0
                for kk in range(9):
                    s += a_mat[9*i + kk]*p_mat[9*kk + j]
                ap[9*i + j] = s
        for i in range(9):
            for j in range(9):
                s = 0.0
                for kk in range(9):
                    s += ap[9*i + kk]*a_mat[9*j + kk]
                p_mat[9*i + j] = s + bqb[9*i + j]
        for i in range(9):
            for j in range(i):
                s = 0.5*(p_mat[9*i + j] + p_mat[9*j + i])
                p_mat[9*i + j] = s
                p_mat[9*j + i] = s

        # Bias Jacobians (old values feed the position rows first).
        mat3_mul(rstep_t, j_rbg, tmp)
        for i in range(9):
            j_rbg_next[i] = tmp[i] - jr_step[i]*dt
        mat3_mul(r0s0, j_rbg, tmp)
        mat3_mul(r1s1, j_rbg_next, tmp2)
        for i in range(9):
            g_term[i] = -0.5*(tmp[i] + tmp2[i])
        for i in range(9):
            j_pba[i] += j_vba[i]*dt - 0.25*(r0[i] + r1[i])*dt*dt
            j_pbg[i] += j_vbg[i]*dt + 0.5*g_term[i]*dt*dt
            j_vba[i] += -0.5*(r0[i] + r1[i])*dt
            j_vbg[i] += g_term[i]*dt
            j_rbg[i] = j_rbg_next[i]
        for i in range(4):
            q[i] = q_next[i]

    for i in range(4):
        dq_out[i] = q[i]
    for i in range(3):
        dv_out[i] = dv[i]
        dp_out[i] = dp[i]
    for i in range(9):
        for j in range(9):
            cov_out[i, j] = p_mat[9*i + j]
    for i in range(3):
        for j in range(3):
            j_rbg_o[i, j] = j_rbg[3*i + j]
            j_vba_o[i, j] = j_vba[3*i + j]
            j_vbg_o[i, j] = j_vbg[3*i + j]
            j_pba_o[i, j] = j_pba[3*i + j]
            j_pbg_o[i, j] = j_pbg[3*i + j]
    return (float(t[n - 1] - t[0]), dq_out, dv_out, dp_out, cov_out,
            j_rbg_o, j_vba_o, j_vbg_o, j_pba_o, j_pbg_o)


cdef inline void _accum_outer(double* m, int row, int col, const double* a,
                              const double* b, double w) noexcept nogil:
    # m[row:row+3, col:col+3] += w * a @ b^T over 3x3 blocks of a 9x9 buffer
    cdef int i, j, k
    cdef double s
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += a[3*i + k]*b[3*j + k]
            m[9*(row + i) + (col + j)] += w*s


def imu_linearize(double[:, ::1] q_i, double[:, ::1] p_i, double[:, ::1] v_i,
                  double[:, ::1] ba_i, double[:, ::1] bg_i,
                  double[:, ::1] q_j, double[:, ::1] p_j, double[:, ::1] v_j,
                  double[:, ::1] ba_j, double[:, ::1] bg_j,
                  double[:, ::1] dq, double[:, ::1] dv, double[:, ::1] dp,
                  double[::1] dt, double[:, ::1] ba0, double[:, ::1] bg0,
                  double[:, :, ::1] j_rbg, double[:, :, ::1] j_vba,
                  double[:, :, ::1] j_vbg, double[:, :, ::1] j_pba,
                  double[:, :, ::1] j_pbg, double[::1] gravity, bint with_jac=True):
    """See `_slowcore.imu_linearize`."""
    cdef Py_ssize_t n = q_i.shape[0]
    cdef cnp.ndarray[double, ndim=2] res = np.empty((n, 15))
    cdef cnp.ndarray[double, ndim=3] ji_arr
    cdef cnp.ndarray[double, ndim=3] jj_arr
    cdef double[:, :, ::1] ji_v
    cdef double[:, :, ::1] jj_v
    cdef double[:, ::1] res_v = res

    cdef double dba[3]
    cdef double dbg[3]
    cdef double xi[3]
    cdef double exi[4]
    cdef double dq_c[4]
    cdef double dv_c[3]
    cdef double dp_c[3]
    cdef double qi_c[4]
    cdef double dqc_c[4]
    cdef double tmpq[4]
    cdef double e_q[4]
    cdef double r_rot[3]
    cdef double ri[9]
    cdef double rj[9]
    cdef double tv[3]
    cdef double w_v[3]
    cdef double w_p[3]
    cdef double jri[9]
    cdef double rjt_ri[9]
    cdef double e_m[9]
    cdef double jr_xi[9]
    cdef double m1[9]
    cdef double m2[9]
    cdef double skw[9]
    cdef double dtk, g0, g1, g2
    cdef Py_ssize_t k, i, j

    g0 = gravity[0]; g1 = gravity[1]; g2 = gravity[2]
    if with_jac:
        ji_arr = np.zeros((n, 15, 15))
        jj_arr = np.zeros((n, 15, 15))
        ji_v = ji_arr
        jj_v = jj_arr

    for k in range(n):
        dtk = dt[k]
        for i in range(3):
            dba[i] = ba_i[k, i] - ba0[k, i]
            dbg[i] = bg_i[k, i] - bg0[k, i]
        for i in range(3):
            xi[i] = (j_rbg[k, i, 0]*dbg[0] + j_rbg[k, i, 1]*dbg[1]
                     + j_rbg[k, i, 2]*dbg[2])
            dv_c[i] = dv[k, i] + (j_vba[k, i, 0]*dba[0] + j_vba[k, i, 1]*dba[1]
                                  + j_vba[k, i, 2]*dba[2]) \
                + (j_vbg[k, i, 0]*dbg[0] + j_vbg[k, i, 1]*dbg[1]
                   + j_vbg[k, i, 2]*dbg[2])
            dp_c[i] = dp[k, i] + (j_pba[k, i, 0]*dba[0] + j_pba[k, i, 1]*dba[1]
                                  + j_pba[k, i, 2]*dba[2]) \
                + (j_pbg[k, i, 0]*dbg[0] + j_pbg[k, i, 1]*dbg[1]
                   + j_pbg[k, i, 2]*dbg[2])
        quat_from_rotvec_c(xi, exi)
        quat_mul_c(&dq[k, 0], exi, dq_c)
        quat_conj_c(&q_i[k, 0], qi_c)
        quat_conj_c(dq_c, dqc_c)
        quat_mul_c(qi_c, &q_j[k, 0], tmpq)
        quat_mul_c(dqc_c, tmpq, e_q)
        rotvec_from_quat_c(e_q, r_rot)

        quat_to_mat_c(&q_i[k, 0], ri)
        for i in range(3):
            tv[i] = v_j[k, i] - v_i[k, i]
        tv[0] -= g0*dtk; tv[1] -= g1*dtk; tv[2] -= g2*dtk
        mat3_vec_t(ri, tv, w_v)
        for i in range(3):
            tv[i] = p_j[k, i] - p_i[k, i] - v_i[k, i]*dtk
        tv[0] -= 0.5*g0*dtk*dtk; tv[1] -= 0.5*g1*dtk*dtk; tv[2] -= 0.5*g2*dtk*dtk
        mat3_vec_t(ri, tv, w_p)

        for i in range(3):
            res_v[k, i] = r_rot[i]
            res_v[k, 3 + i] = w_v[i] - dv_c[i]
            res_v[k, 6 + i] = w_p[i] - dp_c[i]
            res_v[k, 9 + i] = ba_j[k, i] - ba_i[k, i]
            res_v[k, 12 + i] = bg_j[k, i] - bg_i[k, i]
        if not with_jac:
            continue

        jr_inv_c(r_rot, jri)
        quat_to_mat_c(&q_j[k, 0], rj)
        mat3_mul_t(rj, ri, rjt_ri)
        quat_to_mat_c(e_q, e_m)
        jr_c(xi, jr_xi)

        # rows 0:3 (rotation residual)
        mat3_mul(jri, rjt_ri, m1)
        for i in range(3):
            for j in range(3):
                ji_v[k, i, j] = -m1[3*i + j]
                jj_v[k, i, j] = jri[3*i + j]
        mat3_mul_t(e_m, jr_xi, m1)  # e_rt @ jr_xi
        mat3_mul(m1, &j_rbg[k, 0, 0], m2)
        mat3_mul(jri, m2, m1)
        for i in range(3):
            for j in range(3):
                ji_v[k, i, 12 + j] = -m1[3*i + j]

        # rows 3:6 (velocity residual)
        skew_c(w_v, skw)
        for i in range(3):
            for j in range(3):
                ji_v[k, 3 + i, j] = skw[3*i + j]
                ji_v[k, 3 + i, 6 + j] = -ri[3*j + i]  # -Ri^T
                ji_v[k, 3 + i, 9 + j] = -j_vba[k, i, j]
                ji_v[k, 3 + i, 12 + j] = -j_vbg[k, i, j]
                jj_v[k, 3 + i, 6 + j] = ri[3*j + i]

        # rows 6:9 (position residual)
        skew_c(w_p, skw)
        for i in range(3):
            for j in range(3):
                ji_v[k, 6 + i, j] = skw[3*i + j]
                ji_v[k, 6 + i, 3 + j] = -ri[3*j + i]
                ji_v[k, 6 + i, 6 + j] = -ri[3*j + i]*dtk
                ji_v[k, 6 + i, 9 + j] = -j_pba[k, i, j]
                ji_v[k, 6 + i, 12 + j] = -j_pbg[k, i, j]
                jj_v[k, 6 + i, 3 + j] = ri[3*j + i]

        # bias random-walk rows
        for i in range(3):
            ji_v[k, 9 + i, 9 + i] = -1.0
            ji_v[k, 12 + i, 12 + i] = -1.0
            jj_v[k, 9 + i, 9 + i] = 1.0
            jj_v[k, 12 + i, 12 + i] = 1.0

    if with_jac:
        return res, ji_arr, jj_arr
    return res, None, None


def relpose_linearize(double[:, ::1] q_i, double[:, ::1] p_i,
                      double[:, ::1] q_j, double[:, ::1] p_j,
                      double[:, ::1] q_m, double[:, ::1] t_m, bint with_jac=True):
    """See `_slowcore.relpose_linearize`."""
    cdef Py_ssize_t n = q_i.shape[0]
    cdef cnp.ndarray[double, ndim=2] res = np.empty((n, 6))
    cdef cnp.ndarray[double, ndim=3] ji_arr
    cdef cnp.ndarray[double, ndim=3] jj_arr
    cdef double[:, :, ::1] ji_v
    cdef double[:, :, ::1] jj_v
    cdef double[:, ::1] res_v = res

    cdef double qi_c[4]
    cdef double qm_c[4]
    cdef double tmpq[4]
    cdef double e_q[4]
    cdef double r_rot[3]
    cdef double ri[9]
    cdef double rj[9]
    cdef double rm[9]
    cdef double u[3]
    cdef double r_tr[3]
    cdef double tv[3]
    cdef double jri[9]
    cdef double rjt_ri[9]
    cdef double m1[9]
    cdef double skw[9]
    cdef Py_ssize_t k, i, j

    if with_jac:
        ji_arr = np.zeros((n, 6, 6))
        jj_arr = np.zeros((n, 6, 6))
        ji_v = ji_arr
        jj_v = jj_arr

    for k in range(n):
        quat_conj_c(&q_i[k, 0], qi_c)
        quat_conj_c(&q_m[k, 0], qm_c)
        quat_mul_c(qi_c, &q_j[k, 0], tmpq)
        quat_mul_c(qm_c, tmpq, e_q)
        rotvec_from_quat_c(e_q, r_rot)

        quat_to_mat_c(&q_i[k, 0], ri)
        quat_to_mat_c(&q_m[k, 0], rm)
        for i in range(3):
            tv[i] = p_j[k, i] - p_i[k, i]
        mat3_vec_t(ri, tv, u)
        for i in range(3):
            tv[i] = u[i] - t_m[k, i]
        mat3_vec_t(rm, tv, r_tr)

        for i in range(3):
            res_v[k, i] = r_rot[i]
            res_v[k, 3 + i] = r_tr[i]
        if not with_jac:
            continue

        jr_inv_c(r_rot, jri)
        quat_to_mat_c(&q_j[k, 0], rj)
        mat3_mul_t(rj, ri, rjt_ri)
        mat3_mul(jri, rjt_ri, m1)
        for i in range(3):
            for j in range(3):
                ji_v[k, i, j] = -m1[3*i + j]
                jj_v[k, i, j] = jri[3*i + j]
        skew_c(u, skw)
        mat3_mul_t(rm, skw, m1)  # Rm^T @ skew(u)
        for i in range(3):
            for j in range(3):
                ji_v[k, 3 + i, 3 + j] = 0.0
        for i in range(3):
            for j in range(3):
                ji_v[k, 3 + i, j] = m1[3*i + j]
        # Rm^T @ Ri^T
        mat3_transpose(ri, m1)
        mat3_mul_t(rm, m1, skw)
        for i in range(3):
            for j in range(3):
                ji_v[k, 3 + i, 3 + j] = -skw[3*i + j]
                jj_v[k, 3 + i, 3 + j] = skw[3*i + j]

    if with_jac:
        return res, ji_arr, jj_arr
    return res, None, None
