import numpy as np
import pytest

from conftest import random_state
from polarfuse.errors import SolverError
from polarfuse.factors import (
    HeightFactor,
    MagHeadingFactor,
    MarginalPrior,
    PriorFactor,
    RelPoseFactor,
)
from polarfuse.geom import NavState, Pose3, Rotation3, local, so3_exp
from polarfuse.graph import Graph, SolverSettings, optimize, slide_window


def noisy_chain_measurements(n, rng, sigma=1e-3):
    step = Pose3(so3_exp([0, 0, 0.1]), [1.0, 0.0, 0.0])
    return [Pose3(step.rotation @ so3_exp(rng.normal(0, sigma, 3)),
                  step.translation + rng.normal(0, sigma, 3))
            for _ in range(n - 1)]


def build_chain(measurements, window=10 ** 6):
    g = Graph(window=window)
    g.add_state(0, NavState())
    g.add_factor(PriorFactor.from_sigmas(0, NavState(), 1e-3, 1e-3, 0.1, 0.1, 0.1))
    for k, m in enumerate(measurements):
        g.add_state(k + 1, NavState(pose=g.states[k].pose @ m))
        g.add_factor(RelPoseFactor.from_sigmas(k, k + 1, m, 1e-3, 1e-3))
    return g


class TestOptimize:
    def test_single_prior_reaches_mean(self):
        mean = NavState(pose=Pose3(so3_exp([0.1, 0.2, -0.1]), [1, 2, 3]),
                        velocity=[0.5, 0, 0])
        g = Graph()
        g.add_state(0, NavState())
        g.add_factor(PriorFactor.from_sigmas(0, mean, 0.1, 0.1, 0.1, 0.1, 0.1))
        stats = g.optimize()
        assert stats.final_cost < 1e-18
        assert np.abs(local(g.states[0], mean)).max() < 1e-9

    def test_two_state_chain_exact(self):
        t = Pose3(so3_exp([0, 0, 0.7]), [1.0, -0.5, 0.25])
        g = Graph()
        g.add_state(0, NavState())
        g.add_state(1, NavState())
        g.add_factor(PriorFactor.from_sigmas(0, NavState(), 1e-3, 1e-3, 0.1, 0.1, 0.1))
        g.add_factor(RelPoseFactor.from_sigmas(0, 1, t, 0.01, 0.01))
        g.optimize()
        assert np.abs(g.states[1].pose.translation - t.translation).max() < 1e-9
        assert np.abs(g.states[1].pose.rotation.q - t.rotation.q).max() < 1e-9

    def test_weighted_priors(self):
        # Information weights 1 and 3 on positions 0 and 1 -> 0.75.
        g = Graph()
        g.add_state(0, NavState())
        g.add_factor(PriorFactor(0, NavState(), np.eye(15)))
        g.add_factor(PriorFactor(
            0, NavState(pose=Pose3(Rotation3.identity(), [1, 0, 0])),
            np.sqrt(3.0) * np.eye(15)))
        g.optimize()
        assert np.abs(g.states[0].pose.translation - [0.75, 0, 0]).max() < 1e-9

    def test_cost_never_increases(self, rng):
        g = build_chain(noisy_chain_measurements(8, rng, sigma=0.05))
        # Perturb the initial guesses hard so LM has to work.
        for k in list(g.states):
            g.states[k] = random_state(rng)
        prep = g._prepare()
        costs = [g._evaluate(prep, g.states, False, None)[0]]
        for _ in range(20):
            g.optimize(SolverSettings(max_iterations=1))
            costs.append(g._evaluate(prep, g.states, False, None)[0])
        assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))

    def test_deterministic(self, rng):
        meas = noisy_chain_measurements(6, rng, sigma=0.02)
        res = []
        for _ in range(2):
            g = build_chain(meas)
            g.optimize()
            res.append(np.concatenate(
                [np.r_[g.states[k].pose.rotation.q, g.states[k].pose.translation]
                 for k in g.sorted_keys()]))
        assert np.array_equal(res[0], res[1])

    def test_gauge_unfixed_raises(self):
        g = Graph()
        g.add_state(0, NavState())
        g.add_state(1, NavState())
        g.add_factor(RelPoseFactor.from_sigmas(0, 1, Pose3(), 0.01, 0.01))
        with pytest.raises(SolverError):
            g.optimize()

    def test_module_level_alias(self):
        g = Graph()
        g.add_state(0, NavState())
        g.add_factor(PriorFactor.from_sigmas(0, NavState(), .1, .1, .1, .1, .1))
        stats = optimize(g)
        assert stats.converged

    def test_huber_downweights_outlier(self, rng):
        # Redundant chain: per-edge measurements plus skip-level ones, with
        # one corrupted edge. The robust loss must limit its influence.
        meas = noisy_chain_measurements(6, rng, sigma=1e-3)
        bad = Pose3(meas[2].rotation, meas[2].translation + [0.5, 0, 0])
        meas_bad = meas[:2] + [bad] + meas[3:]

        def build(ms, huber):
            g = build_chain(ms)
            for k in range(len(ms) - 1):
                skip = meas[k] @ meas[k + 1]  # skip edges stay clean
                g.add_factor(RelPoseFactor.from_sigmas(k, k + 2, skip, 1e-3, 1e-3))
            g.optimize(SolverSettings(huber=huber))
            return g

        truth = build(meas, {})
        plain = build(meas_bad, {})
        robust = build(meas_bad, {"relpose": 1.345})
        k = len(meas)

        def err(g):
            return np.linalg.norm(g.states[k].pose.translation
                                  - truth.states[k].pose.translation)

        assert err(robust) < err(plain)
        assert err(robust) < 0.05


class TestSlide:
    def test_within_window_unchanged(self, rng):
        g = build_chain(noisy_chain_measurements(5, rng), window=5)
        factors_before = list(g.factors)
        assert g.slide() == []
        assert g.factors == factors_before
        assert len(g.states) == 5

    def test_matches_full_batch(self, rng):
        meas = noisy_chain_measurements(14, rng, sigma=1e-3)
        full = build_chain(meas)
        full.optimize()

        w = 5
        g = Graph(window=w)
        g.add_state(0, NavState())
        g.add_factor(PriorFactor.from_sigmas(0, NavState(), 1e-3, 1e-3, 0.1, 0.1, 0.1))
        for k, m in enumerate(meas):
            g.add_state(k + 1, NavState(pose=g.states[k].pose @ m))
            g.add_factor(RelPoseFactor.from_sigmas(k, k + 1, m, 1e-3, 1e-3))
            g.optimize()
            slide_window(g)
        for k in g.sorted_keys():
            assert np.abs(local(g.states[k], full.states[k])).max() < 1e-6

    def test_marginal_prior_is_psd(self, rng):
        g = build_chain(noisy_chain_measurements(8, rng), window=4)
        g.optimize()
        g.slide()
        priors = [f for f in g.factors if isinstance(f, MarginalPrior)]
        assert len(priors) == 1
        info = priors[0].a_mat.T @ priors[0].a_mat
        assert np.linalg.eigvalsh(info).min() >= -1e-9

    def test_gate_excludes_outlier_exactly(self, rng):
        # With the gate, an injected heading outlier leaves the estimate
        # bit-identical to the run without the outlier; without the gate the
        # heading error strictly increases.
        meas = noisy_chain_measurements(6, rng, sigma=1e-3)

        def run(outlier, gated):
            g = build_chain(meas)
            from polarfuse.geom import yaw_of
            for k in g.sorted_keys():
                truth_yaw = yaw_of(g.states[k].pose.rotation)
                g.add_factor(MagHeadingFactor(k, truth_yaw, 50.0))
            if outlier:
                f = MagHeadingFactor(3, yaw_of(g.states[3].pose.rotation) + 0.5,
                                     50.0, gate=0.25)
                if not gated or f.accept(g.states[3]):
                    g.add_factor(f)
            g.optimize()
            return g

        clean = run(outlier=False, gated=False)
        gated = run(outlier=True, gated=True)
        ungated = run(outlier=True, gated=False)
        from polarfuse.geom import yaw_of
        for k in clean.sorted_keys():
            assert abs(yaw_of(gated.states[k].pose.rotation)
                       - yaw_of(clean.states[k].pose.rotation)) < 1e-12
        err_clean = abs(yaw_of(clean.states[3].pose.rotation)
                        - yaw_of(ungated.states[3].pose.rotation))
        assert err_clean > 1e-3
