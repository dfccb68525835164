"""Sliding-window factor graph and batch Levenberg-Marquardt optimizer.

The window is applied to estimator states: when more than `window` keyframes
are active, the oldest is removed and every factor touching it is replaced by
a Gaussian marginal prior on its neighbors (Schur complement of the
linearized system at the current estimate).

Linearization is grouped by factor type so the heavy binary factors run
through the kernel backend in one batched call per iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import GimbalLockError, InputError, SolverError
from .factors import (
    FlowVelocityFactor,
    HeightFactor,
    ImuFactor,
    MagHeadingFactor,
    MarginalPrior,
    PoseAnchorFactor,
    PriorFactor,
    RelPoseFactor,
)
from .geom import (
    NavState,
    Pose3,
    Rotation3,
    STATE_DIM,
    quat_from_rotvec_batch,
    quat_mul_batch,
    quat_to_matrix_batch,
    skew_batch,
)


@dataclass
class SolverSettings:
    """Levenberg-Marquardt configuration."""

    max_iterations: int = 100
    lambda_init: float = 1e-6
    lambda_max: float = 1e12
    cost_tolerance: float = 1e-9
    step_tolerance: float = 1e-10
    # Optional Huber thresholds (whitened units) per factor tag, e.g.
    # {"relpose": 1.345}. Tags: prior, imu, relpose, anchor, mag, flow,
    # height, marginal.
    huber: dict = field(default_factory=dict)


@dataclass
class OptStats:
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool


def _retract_all(states: dict, keys: list, step: np.ndarray) -> dict:
    """Apply a stacked tangent step to every state (batched rotations)."""
    d = step.reshape(len(keys), STATE_DIM)
    q = np.stack([states[k].pose.rotation.q for k in keys])
    q_new = quat_mul_batch(q, quat_from_rotvec_batch(d[:, 0:3]))
    q_new /= np.linalg.norm(q_new, axis=1, keepdims=True)
    out = {}
    for i, k in enumerate(keys):
        s = states[k]
        out[k] = NavState(
            pose=Pose3(Rotation3(q_new[i]), s.pose.translation + d[i, 3:6]),
            velocity=s.velocity + d[i, 6:9],
            accel_bias=s.accel_bias + d[i, 9:12],
            gyro_bias=s.gyro_bias + d[i, 12:15])
    return out


def factor_tag(f) -> str:
    return {
        PriorFactor: "prior",
        ImuFactor: "imu",
        RelPoseFactor: "relpose",
        PoseAnchorFactor: "anchor",
        MagHeadingFactor: "mag",
        FlowVelocityFactor: "flow",
        HeightFactor: "height",
        MarginalPrior: "marginal",
    }[type(f)]


def _huber_cost_and_weight(sq_norms: np.ndarray, k: float):
    """Huber cost rho(e) and the sqrt IRLS weight for each residual block."""
    e = np.sqrt(sq_norms)
    small = e <= k
    cost = np.where(small, sq_norms, 2.0 * k * e - k * k)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(small, 1.0, np.sqrt(np.maximum(cost, 0.0)) / np.where(e > 0, e, 1.0))
    return cost, w


class Graph:
    """Keyed navigation states plus the factors connecting them."""

    def __init__(self, window: int = 30):
        if window < 1:
            raise InputError("window must be >= 1")
        self.window = int(window)
        self.states: dict[int, NavState] = {}
        self.factors: list = []

    def add_state(self, key: int, state: NavState) -> None:
        if key in self.states:
            raise InputError(f"state key {key} already present")
        self.states[key] = state

    def add_factor(self, factor) -> None:
        for k in factor.keys:
            if k not in self.states:
                raise InputError(f"factor references missing key {k}")
        self.factors.append(factor)

    def sorted_keys(self) -> list:
        return sorted(self.states)

    # -- linearization ----------------------------------------------------

    def _prepare(self):
        """Group factors by type and stack their measurement constants."""
        groups = {"imu": [], "relpose": [], "anchor": [], "mag": [],
                  "flow": [], "height": [], "dense": []}
        for f in self.factors:
            tag = factor_tag(f)
            if tag in ("prior", "marginal"):
                groups["dense"].append(f)
            else:
                groups[tag].append(f)
        prep = {"dense": groups["dense"]}

        keys = self.sorted_keys()
        index = {k: i for i, k in enumerate(keys)}
        prep["keys"] = keys
        prep["index"] = index

        fs = groups["imu"]
        if fs:
            d = [f.delta for f in fs]
            prep["imu"] = {
                "factors": fs,
                "i": np.array([index[f.key_i] for f in fs]),
                "j": np.array([index[f.key_j] for f in fs]),
                "dq": np.stack([x.d_rot.q for x in d]),
                "dv": np.stack([x.d_vel for x in d]),
                "dp": np.stack([x.d_pos for x in d]),
                "dt": np.array([x.dt for x in d]),
                "ba0": np.stack([x.accel_bias0 for x in d]),
                "bg0": np.stack([x.gyro_bias0 for x in d]),
                "j_rbg": np.stack([x.j_rot_bg for x in d]),
                "j_vba": np.stack([x.j_vel_ba for x in d]),
                "j_vbg": np.stack([x.j_vel_bg for x in d]),
                "j_pba": np.stack([x.j_pos_ba for x in d]),
                "j_pbg": np.stack([x.j_pos_bg for x in d]),
                "w": np.stack([f.sqrt_info for f in fs]),
                "gravity": fs[0].gravity,
            }
        fs = groups["relpose"]
        if fs:
            prep["relpose"] = {
                "factors": fs,
                "i": np.array([index[f.key_i] for f in fs]),
                "j": np.array([index[f.key_j] for f in fs]),
                "qm": np.stack([f.measured.rotation.q for f in fs]),
                "tm": np.stack([f.measured.translation for f in fs]),
                "w": np.stack([f.sqrt_info for f in fs]),
            }
        fs = groups["anchor"]
        if fs:
            prep["anchor"] = {
                "factors": fs,
                "i": np.array([index[f.key] for f in fs]),
                "qm": np.stack([f.target.rotation.q for f in fs]),
                "tm": np.stack([f.target.translation for f in fs]),
                "w": np.stack([f.sqrt_info for f in fs]),
            }
        fs = groups["mag"]
        if fs:
            prep["mag"] = {
                "factors": fs,
                "i": np.array([index[f.key] for f in fs]),
                "psi": np.array([f.heading for f in fs]),
                "w": np.array([f.sqrt_info for f in fs]),
            }
        fs = groups["flow"]
        if fs:
            prep["flow"] = {
                "factors": fs,
                "i": np.array([index[f.key] for f in fs]),
                "m": np.stack([f.vel_xy for f in fs]),
                "w": np.stack([f.sqrt_info for f in fs]),
            }
        fs = groups["height"]
        if fs:
            prep["height"] = {
                "factors": fs,
                "i": np.array([index[f.key] for f in fs]),
                "m": np.array([f.height for f in fs]),
                "w": np.array([f.sqrt_info for f in fs]),
            }

        # Half bandwidth in block units decides banded vs dense solves.
        span = 0
        for f in self.factors:
            idxs = [index[k] for k in f.keys]
            span = max(span, max(idxs) - min(idxs))
        prep["hbw"] = (span + 1) * STATE_DIM - 1
        return prep

    @staticmethod
    def _stack_states(states: dict, keys: list):
        q = np.stack([states[k].pose.rotation.q for k in keys])
        p = np.stack([states[k].pose.translation for k in keys])
        v = np.stack([states[k].velocity for k in keys])
        ba = np.stack([states[k].accel_bias for k in keys])
        bg = np.stack([states[k].gyro_bias for k in keys])
        return q, p, v, ba, bg

    def _evaluate(self, prep, states, with_jac: bool, huber: dict):
        """Whitened total cost; optionally also (H, g) of the normal eqs."""
        from . import backend

        keys = prep["keys"]
        q, p, v, ba, bg = self._stack_states(states, keys)
        nk = len(keys)
        dim = nk * STATE_DIM
        cost = 0.0
        h = np.zeros((dim, dim)) if with_jac else None
        gvec = np.zeros(dim) if with_jac else None

        def scatter(n_items, idx_i, idx_j, res_w, ji_w, jj_w, block):
            nonlocal cost
            sq = np.einsum("nk,nk->n", res_w, res_w)
            w_arr = None
            if huber is not None and block in huber:
                sq, w_arr = _huber_cost_and_weight(sq, huber[block])
            cost += float(sq.sum())
            if not with_jac:
                return
            if w_arr is not None:
                res_w = res_w * w_arr[:, None]
                ji_w = ji_w * w_arr[:, None, None]
                if jj_w is not None:
                    jj_w = jj_w * w_arr[:, None, None]
            d = ji_w.shape[2]
            hii = np.einsum("nki,nkj->nij", ji_w, ji_w)
            gi = np.einsum("nki,nk->ni", ji_w, res_w)
            if jj_w is not None:
                hjj = np.einsum("nki,nkj->nij", jj_w, jj_w)
                hij = np.einsum("nki,nkj->nij", ji_w, jj_w)
                gj = np.einsum("nki,nk->ni", jj_w, res_w)
            for n in range(n_items):
                a = idx_i[n] * STATE_DIM
                h[a:a + d, a:a + d] += hii[n]
                gvec[a:a + d] += gi[n]
                if jj_w is not None:
                    b = idx_j[n] * STATE_DIM
                    h[b:b + d, b:b + d] += hjj[n]
                    h[a:a + d, b:b + d] += hij[n]
                    h[b:b + d, a:a + d] += hij[n].T
                    gvec[b:b + d] += gj[n]

        if "imu" in prep:
            g = prep["imu"]
            ii, jj = g["i"], g["j"]
            res, jmat_i, jmat_j = backend.imu_linearize(
                q[ii], p[ii], v[ii], ba[ii], bg[ii],
                q[jj], p[jj], v[jj], ba[jj], bg[jj],
                g["dq"], g["dv"], g["dp"], g["dt"], g["ba0"], g["bg0"],
                g["j_rbg"], g["j_vba"], g["j_vbg"], g["j_pba"], g["j_pbg"],
                g["gravity"], with_jac)
            res_w = np.einsum("nij,nj->ni", g["w"], res)
            if with_jac:
                ji_w = g["w"] @ jmat_i
                jj_w = g["w"] @ jmat_j
            else:
                ji_w = jj_w = None
            scatter(len(ii), ii, jj, res_w, ji_w, jj_w, "imu")

        for tag in ("relpose", "anchor"):
            if tag not in prep:
                continue
            g = prep[tag]
            ii = g["i"]
            if tag == "relpose":
                jjx = g["j"]
                res, jmat_i, jmat_j = backend.relpose_linearize(
                    q[ii], p[ii], q[jjx], p[jjx], g["qm"], g["tm"], with_jac)
            else:
                # Anchor: relative pose from a fixed target to the state.
                jjx = None
                from .geom import quat_mul_batch, rotvec_from_quat_batch
                qm_conj = g["qm"] * np.array([1.0, -1.0, -1.0, -1.0])
                e_q = quat_mul_batch(qm_conj, q[ii])
                res = np.empty((len(ii), 6))
                res[:, 0:3] = rotvec_from_quat_batch(e_q)
                res[:, 3:6] = p[ii] - g["tm"]
                if with_jac:
                    from .geom import jr_inv_batch
                    jmat_i = np.zeros((len(ii), 6, 6))
                    jmat_i[:, 0:3, 0:3] = jr_inv_batch(res[:, 0:3])
                    jmat_i[:, 3:6, 3:6] = np.eye(3)
                else:
                    jmat_i = None
            res_w = np.einsum("nij,nj->ni", g["w"], res)
            if with_jac:
                ji_w = g["w"] @ jmat_i
                jj_w = g["w"] @ jmat_j if tag == "relpose" else None
            else:
                ji_w = jj_w = None
            scatter(len(ii), ii, jjx, res_w, ji_w, jj_w,
                    "relpose" if tag == "relpose" else "anchor")

        if "mag" in prep:
            g = prep["mag"]
            ii = g["i"]
            rot = quat_to_matrix_batch(q[ii])
            a, b = rot[:, 0, 0], rot[:, 1, 0]
            denom = a * a + b * b
            if np.any(denom < 1e-12):
                raise GimbalLockError("pitch at +/- pi/2: heading undefined")
            diff = np.arctan2(b, a) - g["psi"]
            res = np.arctan2(np.sin(diff), np.cos(diff))[:, None]
            res_w = res * g["w"][:, None]
            if with_jac:
                jmat = np.zeros((len(ii), 1, STATE_DIM))
                jmat[:, 0, 1] = (-a * rot[:, 1, 2] + b * rot[:, 0, 2]) / denom
                jmat[:, 0, 2] = (a * rot[:, 1, 1] - b * rot[:, 0, 1]) / denom
                ji_w = jmat * g["w"][:, None, None]
            else:
                ji_w = None
            scatter(len(ii), ii, None, res_w, ji_w, None, "mag")

        if "flow" in prep:
            g = prep["flow"]
            ii = g["i"]
            rt = np.swapaxes(quat_to_matrix_batch(q[ii]), 1, 2)
            v_body = np.einsum("nij,nj->ni", rt, v[ii])
            res = v_body[:, 0:2] - g["m"]
            res_w = np.einsum("nij,nj->ni", g["w"], res)
            if with_jac:
                jmat = np.zeros((len(ii), 2, STATE_DIM))
                jmat[:, :, 0:3] = skew_batch(v_body)[:, 0:2, :]
                jmat[:, :, 6:9] = rt[:, 0:2, :]
                ji_w = g["w"] @ jmat
            else:
                ji_w = None
            scatter(len(ii), ii, None, res_w, ji_w, None, "flow")

        if "height" in prep:
            g = prep["height"]
            ii = g["i"]
            res = (p[ii, 2] - g["m"])[:, None]
            res_w = res * g["w"][:, None]
            if with_jac:
                jmat = np.zeros((len(ii), 1, STATE_DIM))
                jmat[:, 0, 5] = 1.0
                ji_w = jmat * g["w"][:, None, None]
            else:
                ji_w = None
            scatter(len(ii), ii, None, res_w, ji_w, None, "height")

        index = prep["index"]
        for f in prep["dense"]:
            tag = factor_tag(f)
            r, jac = f.linearize(states)  # dense factors are few
            sq = float(r @ r)
            w_scale = 1.0
            if huber is not None and tag in huber:
                c_arr, w_arr = _huber_cost_and_weight(np.array([sq]), huber[tag])
                cost += float(c_arr[0])
                w_scale = float(w_arr[0])
            else:
                cost += sq
            if not with_jac:
                continue
            r = r * w_scale
            for ka, ja in jac.items():
                ja = ja * w_scale
                astart = index[ka] * STATE_DIM
                gvec[astart:astart + STATE_DIM] += ja.T @ r
                for kb, jb in jac.items():
                    jb = jb * w_scale
                    bstart = index[kb] * STATE_DIM
                    h[astart:astart + STATE_DIM, bstart:bstart + STATE_DIM] += ja.T @ jb

        return cost, h, gvec

    # -- solving ----------------------------------------------------------

    def _has_gauge(self) -> bool:
        return any(isinstance(f, (PriorFactor, MarginalPrior, PoseAnchorFactor))
                   for f in self.factors)

    @staticmethod
    def _solve(h, gvec, lam, hbw):
        diag = np.diag(h).copy()
        diag[diag < 1e-12] = 1e-12
        hd = h + np.diag(lam * diag)
        dim = h.shape[0]
        if hbw < dim - 1:
            ab = np.zeros((hbw + 1, dim))
            for k in range(hbw + 1):
                ab[hbw - k, k:] = np.diagonal(hd, k)
            try:
                return scipy.linalg.solveh_banded(ab, -gvec, lower=False,
                                                  check_finite=False)
            except np.linalg.LinAlgError:
                return None
        try:
            c = scipy.linalg.cho_factor(hd, check_finite=False)
            return scipy.linalg.cho_solve(c, -gvec, check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            return None

    def optimize(self, settings: SolverSettings | None = None) -> OptStats:
        """Minimize the total whitened squared residual in place."""
        settings = settings or SolverSettings()
        if not self.states:
            raise InputError("graph has no states")
        if not self._has_gauge():
            raise SolverError("graph is not connected to any prior; gauge unfixed")

        prep = self._prepare()
        keys = prep["keys"]
        huber = settings.huber or None
        states = dict(self.states)
        cost, _, _ = self._evaluate(prep, states, False, huber)
        initial_cost = cost
        lam = settings.lambda_init
        converged = False
        iterations = 0

        for _ in range(settings.max_iterations):
            iterations += 1
            _, h, gvec = self._evaluate(prep, states, True, huber)
            accepted = False
            while lam <= settings.lambda_max:
                step = self._solve(h, gvec, lam, prep["hbw"])
                if step is None:
                    lam *= 10.0
                    if lam > settings.lambda_max:
                        raise SolverError("normal equations are indefinite")
                    continue
                trial = _retract_all(states, keys, step)
                new_cost, _, _ = self._evaluate(prep, trial, False, huber)
                if new_cost <= cost and math.isfinite(new_cost):
                    states = trial
                    accepted = True
                    lam = max(lam / 3.0, 1e-12)
                    step_norm = float(np.linalg.norm(step))
                    decrease = cost - new_cost
                    cost = new_cost
                    if (decrease < settings.cost_tolerance * max(cost, 1e-30)
                            or step_norm < settings.step_tolerance):
                        converged = True
                    break
                lam *= 10.0
            if not accepted:
                converged = True  # no descent direction left: local minimum
                break
            if converged:
                break

        self.states.update(states)
        return OptStats(initial_cost=initial_cost, final_cost=cost,
                        iterations=iterations, converged=converged)

    # -- marginalization --------------------------------------------------

    def slide(self) -> list:
        """Marginalize oldest keyframes until at most `window` remain.

        Returns the list of (key, final NavState) removed, oldest first.
        """
        removed = []
        while len(self.states) > self.window:
            victim = self.sorted_keys()[0]
            removed.append((victim, self.states[victim]))
            self._marginalize(victim)
        return removed

    def _marginalize(self, victim: int) -> None:
        involved = [f for f in self.factors if victim in f.keys]
        keep = sorted({k for f in involved for k in f.keys} - {victim})
        order = [victim] + keep
        index = {k: i for i, k in enumerate(order)}
        dim = len(order) * STATE_DIM

        h = np.zeros((dim, dim))
        b = np.zeros(dim)
        for f in involved:
            r, jac = f.linearize(self.states)
            for ka, ja in jac.items():
                a = index[ka] * STATE_DIM
                b[a:a + STATE_DIM] += ja.T @ r
                for kb, jb in jac.items():
                    bb = index[kb] * STATE_DIM
                    h[a:a + STATE_DIM, bb:bb + STATE_DIM] += ja.T @ jb

        involved_ids = {id(f) for f in involved}
        self.factors = [f for f in self.factors if id(f) not in involved_ids]
        del self.states[victim]
        if not keep:
            return

        m = STATE_DIM
        hmm = h[:m, :m]
        hmn = h[:m, m:]
        hnn = h[m:, m:]
        bm = b[:m]
        bn = b[m:]
        jitter = 0.0
        while True:
            try:
                c = scipy.linalg.cho_factor(hmm + jitter * np.eye(m),
                                            check_finite=False)
                break
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                jitter = max(jitter * 10.0, 1e-10)
                if jitter > 1e-3:
                    raise SolverError("marginal block is numerically singular")
        sol = scipy.linalg.cho_solve(c, np.column_stack([hmn, bm]),
                                     check_finite=False)
        h_t = hnn - hmn.T @ sol[:, :-1]
        b_t = bn - hmn.T @ sol[:, -1]
        h_t = 0.5 * (h_t + h_t.T)

        vals, vecs = np.linalg.eigh(h_t)
        cut = max(float(vals.max()) * 1e-12, 1e-12) if vals.size else 0.0
        keep_idx = vals > cut
        if not np.any(keep_idx):
            return
        s = vals[keep_idx]
        u = vecs[:, keep_idx]
        a_mat = np.sqrt(s)[:, None] * u.T
        r0 = (u.T @ b_t) / np.sqrt(s)
        self.factors.append(MarginalPrior(
            keys_=tuple(keep),
            lin_points={k: self.states[k] for k in keep},
            a_mat=a_mat,
            r0=r0,
        ))


def optimize(graph: Graph, settings: SolverSettings | None = None) -> OptStats:
    """Module-level alias for Graph.optimize."""
    return graph.optimize(settings)


def slide_window(graph: Graph) -> list:
    """Module-level alias for Graph.slide."""
    return graph.slide()
