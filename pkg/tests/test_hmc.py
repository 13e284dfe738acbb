"""Leapfrog/Metropolis checks: reversibility, energy drift, target moments,
detailed balance on a discretized target, and transform Jacobians."""

import numpy as np
import pytest

from popgibbs import gmm
from popgibbs.hmc import DualAveraging, HmcConfig, hmc_step, leapfrog, run_chain

from helpers import gl_nodes


def gaussian_target(cov_inv):
    def logp_and_grad(q):
        logp = -0.5 * np.einsum("ri,ij,rj->r", q, cov_inv, q)
        return logp, -q @ cov_inv.T
    return logp_and_grad


class TestLeapfrog:
    def test_reversibility(self):
        target = gaussian_target(np.array([[1.0, 0.3], [0.3, 2.0]]))
        rng = np.random.default_rng(0)
        q0 = rng.normal(size=(5, 2))
        p0 = rng.normal(size=(5, 2))
        q1, p1, _, _, _ = leapfrog(target, q0, p0, 0.05, 12)
        q2, p2, _, _, _ = leapfrog(target, q1, -p1, 0.05, 12)
        np.testing.assert_allclose(q2, q0, atol=1e-8)
        np.testing.assert_allclose(-p2, p0, atol=1e-8)

    def test_energy_drift_small(self):
        target = gaussian_target(np.eye(3))
        rng = np.random.default_rng(1)
        q0 = rng.normal(size=(20, 3))
        p0 = rng.normal(size=(20, 3))
        logp0, _ = target(q0)
        q1, p1, logp1, _, _ = leapfrog(target, q0, p0, 0.01, 10)
        h0 = -logp0 + 0.5 * (p0 ** 2).sum(axis=1)
        h1 = -logp1 + 0.5 * (p1 ** 2).sum(axis=1)
        assert np.abs(h1 - h0).max() < 1e-3

    def test_flat_target_zero_momentum_is_static(self):
        def flat(q):
            return np.zeros(q.shape[0]), np.zeros_like(q)
        q0 = np.ones((3, 2))
        q1, p1, _, _, _ = leapfrog(flat, q0, np.zeros_like(q0), 0.1, 7)
        np.testing.assert_array_equal(q1, q0)
        np.testing.assert_array_equal(p1, 0.0)

    def test_nonfinite_gradient_raises(self):
        def bad(q):
            return np.zeros(q.shape[0]), np.full_like(q, np.nan)
        with pytest.raises(FloatingPointError):
            leapfrog(bad, np.ones((1, 2)), np.ones((1, 2)), 0.1, 2)


class TestHmcStep:
    def test_tiny_step_always_accepts(self):
        target = gaussian_target(np.eye(2))
        rng = np.random.default_rng(2)
        q = rng.normal(size=(200, 2))
        logp, grad = target(q)
        cfg = HmcConfig(step_size=1e-5, leapfrog_steps=3)
        _, _, _, acc = hmc_step(target, q, logp, grad, cfg, rng)
        assert acc == pytest.approx(1.0)

    def test_deterministic_given_seed(self):
        target = gaussian_target(np.eye(2))
        q0 = np.zeros((4, 2))
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(33)
            logp, grad = target(q0)
            q, _, _, _ = hmc_step(target, q0, logp, grad,
                                  HmcConfig(0.3, 5), rng)
            outs.append(q)
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_gaussian_moments(self):
        cov = np.array([[1.0, 0.6], [0.6, 2.0]])
        target = gaussian_target(np.linalg.inv(cov))
        rng = np.random.default_rng(5)
        q = rng.normal(size=(64, 2))
        cfg = HmcConfig(step_size=0.5, leapfrog_steps=8, adapt=False)
        logp, grad = target(q)
        samples = []
        for k in range(1800):
            q, logp, grad, _ = hmc_step(target, q, logp, grad, cfg, rng)
            if k >= 200:
                samples.append(q.copy())
        s = np.concatenate(samples, axis=0)
        # conservative effective-sample-size guard for the 3 SE bound
        n_eff = s.shape[0] / 10.0
        se_mean = np.sqrt(np.diag(cov) / n_eff)
        assert np.all(np.abs(s.mean(axis=0)) <= 3 * se_mean)
        emp = np.cov(s.T)
        se_cov = (np.sqrt(np.diag(cov))[:, None] * np.sqrt(np.diag(cov))[None, :]
                  * np.sqrt(2.0 / n_eff))
        assert np.all(np.abs(emp - cov) <= 3 * se_cov)

    def test_detailed_balance_discretized_1d(self):
        # empirical pi_i T_ij vs pi_j T_ji on a binned double-well target
        def logp_and_grad(q):
            x = q[:, 0]
            return -0.25 * x ** 4 + 0.5 * x ** 2, \
                np.stack([-x ** 3 + x], axis=1)
        rng = np.random.default_rng(9)
        q = rng.normal(size=(128, 1))
        cfg = HmcConfig(step_size=0.35, leapfrog_steps=4, adapt=False)
        logp, grad = logp_and_grad(q)
        edges = np.linspace(-2.5, 2.5, 6)
        flow = np.zeros((7, 7))
        for k in range(3000):
            b0 = np.digitize(q[:, 0], edges)
            q, logp, grad, _ = hmc_step(logp_and_grad, q, logp, grad, cfg, rng)
            if k >= 300:
                b1 = np.digitize(q[:, 0], edges)
                np.add.at(flow, (b0, b1), 1.0)
        total = flow.sum()
        for i in range(7):
            for j in range(i + 1, 7):
                fij, fji = flow[i, j] / total, flow[j, i] / total
                se = np.sqrt((fij + fji) / total) + 1e-9
                assert abs(fij - fji) <= 5 * se

    def test_dual_averaging_reaches_target_acceptance(self):
        target = gaussian_target(np.eye(4))
        rng = np.random.default_rng(11)
        q = rng.normal(size=(256, 4))
        _, info = run_chain(target, q, 120, HmcConfig(1.5, 3, adapt=True), rng)
        late = np.mean(info["accept"][80:])
        assert 0.4 < late < 0.95


class TestTransforms:
    def test_log_transform_jacobian_normalizes(self):
        # density of u = log tau must integrate to 1 when the Jacobian tau
        # is included; quadrature over a Gamma target
        from scipy.special import gammaln
        alpha, beta = 2.0, 2.0
        us, wu = gl_nodes(-14, 8, 800)
        tau = np.exp(us)
        log_pdf_u = (alpha * np.log(beta) - gammaln(alpha)
                     + (alpha - 1) * np.log(tau) - beta * tau) + us
        assert np.sum(np.exp(log_pdf_u) * wu) == pytest.approx(1.0, abs=1e-9)

    def test_gmm_marginal_target_gradient(self):
        hyper = gmm.GmmHyper()
        rng = np.random.default_rng(3)
        x, _ = gmm.generate_corpus(1, 3, 12, hyper, rng)
        target = gmm.MarginalTarget(x, hyper, n_particles=2)
        mu = rng.normal(size=(1, 2, 3, 2))
        tau = rng.uniform(0.5, 2.0, size=(1, 2, 3, 2))
        q = target.flatten(mu, tau)
        logp, grad = target(q)
        h = 1e-6
        rng2 = np.random.default_rng(4)
        for _ in range(10):
            r = rng2.integers(0, q.shape[0])
            i = rng2.integers(0, q.shape[1])
            qp, qm = q.copy(), q.copy()
            qp[r, i] += h
            qm[r, i] -= h
            fd = (target(qp)[0][r] - target(qm)[0][r]) / (2 * h)
            assert grad[r, i] == pytest.approx(fd, rel=1e-5, abs=1e-6)

    def test_hmc_baseline_zero_updates_is_one_shot(self):
        hyper = gmm.GmmHyper()
        rng = np.random.default_rng(6)
        x, _ = gmm.generate_corpus(2, 3, 10, hyper, rng)
        import popgibbs.autodiff as ad
        store = ad.ParamStore(np.random.default_rng(0))
        gmm.init_network_params(store, hyper)
        system, metrics, diag = gmm.hmc_rws_baseline(
            x, store, hyper, n_updates=0, n_particles=5, leapfrog_steps=5,
            rng=np.random.default_rng(1))
        assert system.sweep == 1 and len(metrics) == 1
        assert len(diag["accept"]) == 0
