"""Estimator checks: SNIS algebra, score estimators vs literal transcription,
stationarity at the optimum, and the model-score identity on enumerable
models."""

import numpy as np
import pytest

from popgibbs import autodiff as ad
from popgibbs import estimators as est
from popgibbs import gmm
from popgibbs.estimators import GradSink, snis_expectation
from popgibbs.smc import DegenerateWeightsError, LatentState, apg_run

from tiny_models import FixedMixture, PointwiseEncoder, PointwiseKernel, make_tiny


class TestSnis:
    def test_equal_weights_mean(self):
        vals = np.array([1.0, 2.0, 3.0, 4.0])
        assert snis_expectation(np.zeros(4), vals) == pytest.approx(2.5)

    def test_dominant_weight(self):
        vals = np.array([1.0, 2.0, 3.0])
        lw = np.array([0.0, 500.0, 0.0])
        assert snis_expectation(lw, vals) == pytest.approx(2.0)

    def test_degenerate_raises(self):
        with pytest.raises(DegenerateWeightsError):
            snis_expectation(np.full(3, -np.inf), np.ones(3))

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        lw = rng.normal(size=12)
        vals = rng.normal(size=12)
        a = snis_expectation(lw, vals)
        b = snis_expectation(lw + 777.0, vals)
        assert a == pytest.approx(b, abs=1e-12)

    def test_linear_in_f(self):
        rng = np.random.default_rng(1)
        lw = rng.normal(size=9)
        f1, f2 = rng.normal(size=9), rng.normal(size=9)
        combo = snis_expectation(lw, 2.0 * f1 - 3.0 * f2)
        assert combo == pytest.approx(
            2.0 * snis_expectation(lw, f1) - 3.0 * snis_expectation(lw, f2),
            abs=1e-12)

    def test_enumerable_posterior_expectation(self):
        # SNIS estimate of P(c_1 = 1 | x) converges to the enumerated value
        model, x = make_tiny(seed=5)
        _, _, per_point = model.posterior_probs(x)
        enc = PointwiseEncoder(model.exact_pointwise_conditional(x) ** 0.5
                               / (model.exact_pointwise_conditional(x) ** 0.5)
                               .sum(-1, keepdims=True))
        rng = np.random.default_rng(3)
        state, lq, _ = enc.propose(x, 10_000, rng)
        lw = model.log_joint(x, state) - lq
        f = (state["c"][..., 0] == 1).astype(float)
        estimate = snis_expectation(lw[0], f[0])
        # crude SE from weight-normalized variance
        wbar = np.exp(lw[0] - lw[0].max())
        wbar /= wbar.sum()
        se = np.sqrt(np.sum(wbar ** 2 * (f[0] - estimate) ** 2))
        assert abs(estimate - per_point[0, 1]) <= 3 * se + 1e-3


class LogitEncoder:
    """One-shot proposal with raw per-point logits as parameters."""

    def __init__(self, store: ad.ParamStore, n_points: int, n_classes: int):
        self.store = store
        self.logits = store.ensure("enc.logits", (n_points, n_classes), "zeros")

    def propose(self, x, n_particles, rng, want_grad=False):
        logp_t = ad.log_softmax(self.logits, axis=-1)
        probs = np.exp(ad.value_of(logp_t))
        shape = (x.shape[0], n_particles, probs.shape[0])
        from popgibbs.expfam import sample_categorical
        c = sample_categorical(rng, np.broadcast_to(probs, shape + probs.shape[-1:]))
        onehot = np.eye(probs.shape[-1])[c]
        node = ad.sum(ad.mul(logp_t, onehot), axis=(-2, -1))
        state = LatentState({"c": c})
        if want_grad:
            return state, node.data, node
        return state, ad.value_of(node), None


class TestProposalScoreEstimator:
    def test_single_particle_is_plain_score(self):
        model, x = make_tiny(seed=7)
        store = ad.ParamStore(np.random.default_rng(0))
        enc = LogitEncoder(store, x.shape[1], 2)
        sink = GradSink(store)
        est.rws_grad_phi(enc, model, x, 1, np.random.default_rng(1), sink)
        got = -store.grad("enc.logits").copy()     # sink holds the loss grad
        store.zero_grads()
        state, _, node = enc.propose(x, 1, np.random.default_rng(1),
                                     want_grad=True)
        ad.backward(ad.sum(node), 1.0)
        np.testing.assert_allclose(got, store.grad("enc.logits"), atol=1e-12)

    def test_matches_literal_transcription(self):
        # sum_l softmax(lw)_l grad log q(z_l | x), frozen samples
        model, x = make_tiny(seed=9)
        store = ad.ParamStore(np.random.default_rng(0))
        store.ensure("enc.logits", (x.shape[1], 2), "zeros").data[...] = \
            np.random.default_rng(5).normal(size=(x.shape[1], 2)) * 0.5
        enc = LogitEncoder(store, x.shape[1], 2)
        sink = GradSink(store)
        state, lw = est.rws_grad_phi(enc, model, x, 8,
                                     np.random.default_rng(2), sink)
        got = -store.grad("enc.logits").copy()
        # independent transcription with the same frozen samples/weights
        wbar = np.exp(lw[0] - lw[0].max())
        wbar /= wbar.sum()
        probs = np.exp(ad.value_of(ad.log_softmax(store.get("enc.logits"), axis=-1)))
        expect = np.zeros_like(probs)
        for l in range(8):
            onehot = np.eye(2)[state["c"][0, l]]
            expect += wbar[l] * (onehot - probs)
        np.testing.assert_allclose(got, expect, atol=1e-10)

    def test_stationary_at_exact_posterior(self):
        # encoder == enumerated per-point posterior: expected gradient ~ 0;
        # mild separation keeps the posteriors away from float saturation
        model, x = make_tiny(seed=11, spread=1.0)
        post = model.exact_pointwise_conditional(x)
        store = ad.ParamStore(np.random.default_rng(0))
        store.ensure("enc.logits", post.shape, "zeros").data[...] = np.log(post)
        enc = LogitEncoder(store, x.shape[1], 2)
        n_rep = 10_000
        grads = np.zeros((n_rep,) + post.shape)
        rng = np.random.default_rng(13)
        for r in range(n_rep):
            sink = GradSink(store)
            est.rws_grad_phi(enc, model, x, 4, rng, sink)
            grads[r] = store.grad("enc.logits")
            store.zero_grads()
        mean = grads.mean(axis=0)
        se = grads.std(axis=0, ddof=1) / np.sqrt(n_rep)
        assert np.all(np.abs(mean) <= 3 * se + 1e-6)

    def test_block_estimator_weights(self):
        # equal weights -> unweighted mean of per-particle scores
        model, x = make_tiny(seed=15)
        store = ad.ParamStore(np.random.default_rng(0))
        hyper = gmm.GmmHyper(n_clusters=2)
        kernel = gmm.NeuralLocalKernel(store, hyper)
        state = LatentState({
            "mu": np.random.default_rng(1).normal(size=(1, 6, 2, 2)),
            "tau": np.abs(np.random.default_rng(2).normal(size=(1, 6, 2, 2))) + 0.5,
            "c": np.random.default_rng(3).integers(0, 2, (1, 6, 3))})
        values = {"c": np.random.default_rng(4).integers(0, 2, (1, 6, 3))}
        sink = GradSink(store)
        est.apg_grad_phi_block(kernel, x, state, values, np.zeros((1, 6)), sink)
        got = {n: -store.grad(n).copy() for n in store.names()}
        store.zero_grads()
        for l in range(6):
            sub = LatentState({k: v[:, l:l + 1] for k, v in state.values.items()})
            node = kernel.log_density_node(x, sub, {"c": values["c"][:, l:l + 1]})
            ad.backward(node, 1.0 / 6.0)
        for n in got:
            np.testing.assert_allclose(got[n], store.grad(n), atol=1e-10)


class ScalarDecoderModel(FixedMixture):
    """Enumerable model with one generative parameter: x | c ~ N(theta a_c, s)."""

    has_theta = True

    def __init__(self, anchors, theta_store, sigma=1.0):
        self.anchors = np.asarray(anchors)
        m = self.anchors.shape[0]
        super().__init__(np.zeros((m, 1)), np.ones((m, 1)))
        self.theta = theta_store
        self.sigma = sigma
        theta_store.ensure("theta", (1,), "zeros")

    def _mu_of(self, c, theta):
        return ad.mul(np.take(self.anchors, ad.value_of(c).astype(int)), theta)

    def log_joint(self, x, state):
        node = self.log_joint_node(x, state)
        out = ad.value_of(node)
        self.count(out.shape)
        return out

    def log_joint_node(self, x, state):
        c = state["c"]
        theta = self.theta.tensor("theta")
        mean = self._mu_of(c, theta)                      # (..., N)
        resid = ad.sub(x[..., 0][:, None], mean)
        quad = ad.mul(ad.sum(ad.square(resid), axis=-1), -0.5 / self.sigma ** 2)
        const = c.shape[-1] * (np.log(self.pi[0]) - 0.5 * ef_log2pi()
                               - np.log(self.sigma))
        return ad.add(quad, const)

    def marginal_log_lik(self, x, theta_val):
        # direct summation over assignments at a given parameter value
        stash = self.theta.get("theta").copy()
        self.theta.get("theta")[...] = theta_val
        configs = self.enumerate_configs(x.shape[1])
        lj = ad.value_of(self.log_joint_node(x, LatentState({"c": configs[None]})))[0]
        self.theta.get("theta")[...] = stash
        hi = lj.max()
        return float(np.log(np.exp(lj - hi).sum()) + hi)


def ef_log2pi():
    from popgibbs.expfam import LOG_2PI
    return LOG_2PI


class TestModelScoreEstimator:
    def test_model_without_parameters_is_noop(self):
        hyper = gmm.GmmHyper()
        model = gmm.GmmModel(hyper)
        sink = GradSink(None, None)
        est.grad_theta(model, np.zeros((1, 4, 2)), None, np.zeros((1, 3)), sink)
        assert sink.theta_terms == 0

    def test_matches_finite_difference_marginal_gradient(self):
        theta_store = ad.ParamStore(np.random.default_rng(0))
        model = ScalarDecoderModel([-1.0, 2.0], theta_store, sigma=0.8)
        theta_store.get("theta")[...] = 0.7
        rng = np.random.default_rng(5)
        x = np.array([[-0.9, 1.5, 1.2]]).T[None, :, :]   # (1, 3, 1)
        # proposal: tempered pointwise posterior
        ll = (-0.5 * (x[0] - 0.7 * np.array([-1.0, 2.0])) ** 2 / 0.8 ** 2)
        p = np.exp(ll - ll.max(axis=-1, keepdims=True)) ** 0.7
        p /= p.sum(axis=-1, keepdims=True)
        enc = PointwiseEncoder(p)
        n_rep, n_part = 3000, 256
        estimates = np.zeros(n_rep)
        for r in range(n_rep):
            state, lq, _ = enc.propose(x, n_part, rng)
            lw = model.log_joint(x, state) - lq
            sink = GradSink(None, theta_store)
            est.grad_theta(model, x, state, lw, sink)
            estimates[r] = -theta_store.grad("theta")[0]
            theta_store.zero_grads()
        h = 1e-5
        fd = (model.marginal_log_lik(x, 0.7 + h)
              - model.marginal_log_lik(x, 0.7 - h)) / (2 * h)
        se = estimates.std(ddof=1) / np.sqrt(n_rep)
        assert abs(estimates.mean() - fd) <= 3 * se

    def test_exact_posterior_weights_match_enumeration(self):
        theta_store = ad.ParamStore(np.random.default_rng(0))
        model = ScalarDecoderModel([-1.0, 2.0], theta_store, sigma=0.8)
        theta_store.get("theta")[...] = 0.4
        x = np.array([[-0.5, 1.1]]).T[None, :, :]
        configs, post, _ = model.posterior_probs(x)
        # enumerated E_{p(c|x)}[grad_theta log p(x, c)]
        expect = 0.0
        for cfg, pc in zip(configs, post):
            state = LatentState({"c": cfg[None, None]})
            node = model.log_joint_node(x, state)
            ad.backward(node, 1.0)
            expect += pc * theta_store.grad("theta")[0]
            theta_store.zero_grads()
        # estimator with weights proportional to the posterior
        state = LatentState({"c": configs[None]})
        lw = model.log_joint(x, state)                   # propto posterior
        sink = GradSink(None, theta_store)
        est.grad_theta(model, x, state, lw, sink)
        got = -theta_store.grad("theta")[0]
        assert got == pytest.approx(expect, abs=1e-9)

    def test_score_expectation_identity(self):
        # sum_c p(c|x) grad_theta log p(c|x) = 0 by enumeration
        theta_store = ad.ParamStore(np.random.default_rng(0))
        model = ScalarDecoderModel([-1.0, 2.0], theta_store, sigma=0.8)
        theta_store.get("theta")[...] = 0.9
        x = np.array([[-0.5, 1.1, 0.3]]).T[None, :, :]
        configs, post, _ = model.posterior_probs(x)
        h = 1e-6
        acc = 0.0
        for cfg, pc in zip(configs, post):
            state = LatentState({"c": cfg[None, None]})

            def log_cond(tv, state=state):
                stash = theta_store.get("theta").copy()
                theta_store.get("theta")[...] = tv
                val = float(model.log_joint(x, state)[0, 0]
                            - model.marginal_log_lik(x, tv))
                theta_store.get("theta")[...] = stash
                return val

            acc += pc * (log_cond(0.9 + h) - log_cond(0.9 - h)) / (2 * h)
        assert abs(acc) <= 1e-6


class TestStructuralInvariants:
    def test_weights_stay_out_of_graph(self):
        # log-weights are plain arrays; perturbing how they were computed
        # cannot change gradients (they enter softmax-detached)
        model, x = make_tiny(seed=20)
        store = ad.ParamStore(np.random.default_rng(0))
        enc = LogitEncoder(store, x.shape[1], 2)
        state, lq, node = enc.propose(x, 5, np.random.default_rng(4),
                                      want_grad=True)
        lw = model.log_joint(x, state) - lq
        assert isinstance(lw, np.ndarray) and not isinstance(lw, ad.Tensor)
        sink = GradSink(store)
        sink.add_phi(node, lw)
        g1 = store.grad("enc.logits").copy()
        store.zero_grads()
        # same weights through a different arithmetic path
        state2, lq2, node2 = enc.propose(x, 5, np.random.default_rng(4),
                                         want_grad=True)
        lw2 = (model.log_joint(x, state2) * 2.0 - lq2 * 2.0) / 2.0
        sink.add_phi(node2, lw2)
        np.testing.assert_allclose(store.grad("enc.logits"), g1, atol=1e-12)

    def test_gradient_shift_invariance(self):
        model, x = make_tiny(seed=21)
        store = ad.ParamStore(np.random.default_rng(0))
        enc = LogitEncoder(store, x.shape[1], 2)
        sink = GradSink(store)
        state, lq, node = enc.propose(x, 6, np.random.default_rng(7),
                                      want_grad=True)
        lw = model.log_joint(x, state) - lq
        sink.add_phi(node, lw)
        g1 = store.grad("enc.logits").copy()
        store.zero_grads()
        _, _, node2 = enc.propose(x, 6, np.random.default_rng(7), want_grad=True)
        sink.add_phi(node2, lw + 1234.5)
        np.testing.assert_allclose(store.grad("enc.logits"), g1, atol=1e-12)
