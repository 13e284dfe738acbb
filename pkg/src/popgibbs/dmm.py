"""Deep generative mixture experiment: ring-shaped 2-D mixtures with a
learned decoder.

Model (per instance of N points, M components):

    mu_m ~ Normal(0, sigma0^2 I)
    c_n ~ Categorical(uniform),  h_n ~ Beta(alpha, beta)
    x_n | c_n = m ~ Normal(g(h_n) + mu_m, sigma_eps^2 I)

with a small MLP decoder g.  Global block: centers mu; local block: the
(c, h) pairs.  Corpora are generated from this family with a fixed
ground-truth decoder g*(h) = r (cos 2 pi h, sin 2 pi h), so the learned
decoder has a realizable target; the generator choice is recorded in the
corpus sidecar.

Proposals use outer-product neural statistics: per point the nets emit
s_n in R^8 and a softmax t_n over clusters; sum_n s_n (x) t_n normalized
columnwise by sum_n t_n feeds a per-cluster head that predicts the center
proposal relative to its prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import expfam as ef
from .autodiff import Fc
from .smc import LatentState, Model, Proposal

DIM = 2
STAT_DIM = 8


@dataclass(frozen=True)
class DmmHyper:
    n_clusters: int = 4
    mu_loc: float = 0.0
    sigma0: float = 10.0
    alpha: float = 1.0
    beta: float = 1.0
    sigma_eps: float = 0.1
    ring_radius: float = 3.0

    @property
    def log_pi(self) -> float:
        return -float(np.log(self.n_clusters))


def architectures(n_clusters: int = 4) -> dict:
    m = n_clusters
    return {
        "decoder": [Fc(1, 32), "tanh", Fc(32, DIM)],
        "enc_s": [Fc(DIM, 32), "tanh", Fc(32, STAT_DIM)],
        "enc_t": [Fc(DIM, 32), "tanh", Fc(32, m), "softmax"],
        "cond_s": [Fc(DIM + m + 1, 32), "tanh", Fc(32, STAT_DIM)],
        "cond_t": [Fc(DIM + m + 1, 32), "tanh", Fc(32, m), "softmax"],
        # heads predict the center proposal relative to the prior, so a
        # fresh head proposes exactly from the prior
        "enc_head": [Fc(STAT_DIM + 2 * DIM, 64), "tanh", Fc(64, 2 * DIM, zero_init=True)],
        "cond_head": [Fc(STAT_DIM + 2 * DIM, 64), "tanh", Fc(64, 2 * DIM, zero_init=True)],
        "local_c": [Fc(DIM + DIM, 32), "tanh", Fc(32, 1, zero_init=True)],
        "local_h": [Fc(DIM, 64), "tanh", Fc(64, 2, zero_init=True)],
    }


def init_theta(store: ad.ParamStore, hyper: DmmHyper | None = None) -> None:
    for i, layer in enumerate(architectures()["decoder"]):
        if isinstance(layer, Fc):
            store.ensure(f"dmm.decoder.{i}.W", (layer.fan_in, layer.fan_out),
                         "zeros" if layer.zero_init else "glorot")
            store.ensure(f"dmm.decoder.{i}.b", (layer.fan_out,), "zeros")


def init_phi(store: ad.ParamStore, hyper: DmmHyper) -> None:
    arch = architectures(hyper.n_clusters)
    for name in ("enc_s", "enc_t", "cond_s", "cond_t", "enc_head",
                 "cond_head", "local_c", "local_h"):
        for i, layer in enumerate(arch[name]):
            if isinstance(layer, Fc):
                store.ensure(f"dmm.{name}.{i}.W", (layer.fan_in, layer.fan_out),
                             "zeros" if layer.zero_init else "glorot")
                store.ensure(f"dmm.{name}.{i}.b", (layer.fan_out,), "zeros")


# ---------------------------------------------------------------------------
# decoder and densities
# ---------------------------------------------------------------------------


def decoder_forward(store: ad.ParamStore, h, want_grad=False):
    """g(h): offsets for embeddings h (..., ); differentiable in theta
    and (through `ad.Tensor` input) in h."""
    hv = h if ad.is_tensor(h) else np.asarray(h, dtype=float)
    inp = ad.reshape(hv, ad.value_of(hv).shape + (1,))
    get = store.tensor if want_grad else store.get
    return ad.mlp2_tanh(inp, get("dmm.decoder.0.W"), get("dmm.decoder.0.b"),
                        get("dmm.decoder.2.W"), get("dmm.decoder.2.b"))


def true_decoder(h, radius: float):
    ang = 2.0 * np.pi * np.asarray(h)
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)


class DmmModel(Model):
    block_order = ("centers", "locals")
    block_keys = {"centers": ("mu",), "locals": ("c", "h")}
    has_theta = True

    def __init__(self, hyper: DmmHyper, theta_store: ad.ParamStore):
        super().__init__()
        self.hyper = hyper
        self.theta = theta_store
        init_theta(theta_store)

    def _terms(self, x, state, want_grad):
        h = self.hyper
        mu, c, hv = state["mu"], state["c"], state["h"]
        if np.any((ad.value_of(hv) <= 0) | (ad.value_of(hv) >= 1)):
            raise ef.DomainError("dmm log_joint: embeddings must lie in (0,1)")
        prior_mu = ef.diag_normal_log_prob(mu, h.mu_loc, h.sigma0).sum(axis=(-2, -1))
        prior_h = ef.beta_log_prob(hv, h.alpha, h.beta).sum(axis=-1)
        prior_c = c.shape[-1] * h.log_pi
        g = decoder_forward(self.theta, hv, want_grad=want_grad)
        mu_c = _gather_centers(mu, c)
        xb = x[:, None]
        resid = ad.sub(ad.add(g, mu_c), xb)
        quad = ad.mul(ad.sum(ad.square(resid), axis=(-2, -1)),
                      -0.5 / h.sigma_eps ** 2)
        n_terms = c.shape[-1] * DIM
        lik_const = -0.5 * n_terms * (ef.LOG_2PI + 2.0 * np.log(h.sigma_eps))
        return ad.add(quad, prior_mu + prior_h + prior_c + lik_const)

    def log_joint(self, x, state):
        out = self._terms(x, state, want_grad=False)
        self.count(out.shape)
        return out

    def log_joint_node(self, x, state):
        return self._terms(x, state, want_grad=True)


def _gather_centers(mu, c):
    d = mu.shape[-1]
    m = mu.shape[-2]
    lead = c.shape[:-1]
    rows = int(np.prod(lead, dtype=int)) if lead else 1
    flat = mu.reshape(rows, m, d)
    out = flat[np.arange(rows)[:, None], c.reshape(rows, -1)]
    return out.reshape(c.shape + (d,))


def recon_mse(x, state, store: ad.ParamStore):
    """Mean over points of squared reconstruction error, per particle."""
    g = decoder_forward(store, state["h"])
    mu_c = _gather_centers(state["mu"], state["c"])
    return np.mean(np.sum((x[:, None] - (g + mu_c)) ** 2, axis=-1), axis=-1)


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------


@dataclass
class DmmInstance:
    x: np.ndarray
    truth_mu: np.ndarray | None = None
    truth_c: np.ndarray | None = None
    truth_h: np.ndarray | None = None


def generate_instance(n_clusters: int, n_points: int, hyper: DmmHyper,
                      rng: np.random.Generator) -> DmmInstance:
    mu = rng.normal(hyper.mu_loc, hyper.sigma0, size=(n_clusters, DIM))
    c = rng.integers(0, n_clusters, size=n_points)
    h = np.clip(rng.beta(hyper.alpha, hyper.beta, size=n_points), 1e-9, 1 - 1e-9)
    x = (true_decoder(h, hyper.ring_radius) + mu[c]
         + rng.standard_normal((n_points, DIM)) * hyper.sigma_eps)
    return DmmInstance(x, mu, c, h)


def generate_corpus(n_instances: int, n_clusters: int, n_points: int,
                    hyper: DmmHyper, rng: np.random.Generator):
    xs = np.empty((n_instances, n_points, DIM))
    mus = np.empty((n_instances, n_clusters, DIM))
    cs = np.empty((n_instances, n_points), dtype=np.int64)
    hs = np.empty((n_instances, n_points))
    for i in range(n_instances):
        inst = generate_instance(n_clusters, n_points, hyper, rng)
        xs[i], mus[i], cs[i], hs[i] = inst.x, inst.truth_mu, inst.truth_c, inst.truth_h
    return xs, {"mu": mus, "c": cs, "h": hs}


# ---------------------------------------------------------------------------
# neural proposals
# ---------------------------------------------------------------------------

_AGG_EPS = 1e-6


class CentersProposal:
    """Outer-product statistics -> normalized aggregation -> residual head."""

    def __init__(self, store: ad.ParamStore, hyper: DmmHyper, conditional: bool):
        self.store = store
        self.hyper = hyper
        self.conditional = conditional
        self.prefix = "cond" if conditional else "enc"
        init_phi(store, hyper)

    def _net(self, name, inp, want_grad):
        layers = architectures(self.hyper.n_clusters)[name]
        get = self.store.tensor if want_grad else self.store.get
        out = ad.mlp2_tanh(inp, get(f"dmm.{name}.0.W"), get(f"dmm.{name}.0.b"),
                           get(f"dmm.{name}.2.W"), get(f"dmm.{name}.2.b"))
        if layers[-1] == "softmax":
            out = ad.softmax(out, axis=-1)
        return out

    def params(self, x, c=None, h=None, want_grad=False):
        """Per-cluster proposal (mu_tilde (..., M, 2), logvar (..., M, 2))."""
        hy = self.hyper
        m = hy.n_clusters
        if self.conditional:
            if c is None or h is None:
                raise ValueError("conditional statistics need (c, h)")
            onehot = np.eye(m)[c]
            xb = np.broadcast_to(x[:, None], c.shape + (DIM,))
            inp = np.concatenate([xb, onehot, h[..., None]], axis=-1)
        else:
            inp = x
        s = self._net(f"{self.prefix}_s", inp, want_grad)       # (..., N, 8)
        t = self._net(f"{self.prefix}_t", inp, want_grad)       # (..., N, M)
        s_e = ad.reshape(s, ad.value_of(s).shape[:-1] + (STAT_DIM, 1))
        t_e = ad.reshape(t, ad.value_of(t).shape[:-1] + (1, m))
        agg = ad.sum(ad.mul(s_e, t_e), axis=-3)                 # (..., 8, M)
        tot = ad.clip_min(ad.sum(t, axis=-2), _AGG_EPS)         # (..., M)
        tot_e = ad.reshape(tot, ad.value_of(tot).shape[:-1] + (1, m))
        norm = ad.moveaxis(ad.div(agg, tot_e), -1, -2)          # (..., M, 8)
        lead = ad.value_of(norm).shape[:-1]
        prior_feat = np.broadcast_to(
            np.array([hy.mu_loc] * DIM + [hy.sigma0] * DIM), lead + (2 * DIM,))
        head_in = ad.concat([norm, prior_feat], axis=-1)
        out = self._net(f"{self.prefix}_head", head_in, want_grad)
        mu_t = ad.add(ad.last_slice(out, 0, DIM), hy.mu_loc)
        logvar = ad.add(ad.last_slice(out, DIM, 2 * DIM),
                        2.0 * np.log(hy.sigma0))
        return mu_t, logvar


class CentersKernel(CentersProposal):
    block = "centers"

    def __init__(self, store, hyper):
        super().__init__(store, hyper, conditional=True)

    def _log_q(self, values, mu_t, logvar):
        lp = ef.diag_normal_log_prob_logvar(values["mu"], mu_t, logvar)
        return ad.sum(lp, axis=(-2, -1))

    def propose(self, x, state, rng, want_grad=False):
        mu_t, logvar = self.params(x, state["c"], state["h"], want_grad=want_grad)
        sd = np.exp(0.5 * ad.value_of(logvar))
        mu_new = ad.value_of(mu_t) + sd * rng.standard_normal(sd.shape)
        values = {"mu": mu_new}
        lq = self._log_q(values, mu_t, logvar)
        np_params = (ad.value_of(mu_t), ad.value_of(logvar))
        scorer = lambda v: self._log_q(v, *np_params)  # noqa: E731
        if want_grad:
            return Proposal(values, lq.data, lq, scorer)
        return Proposal(values, lq, scorer=scorer)

    def log_density(self, x, state, values):
        mu_t, logvar = self.params(x, state["c"], state["h"])
        return self._log_q(values, mu_t, logvar)

    def log_density_node(self, x, state, values):
        mu_t, logvar = self.params(x, state["c"], state["h"], want_grad=True)
        return self._log_q(values, mu_t, logvar)


class LocalsProposal:
    """q(c | x, mu) q(h | x, mu_c): per-cluster logits net, then a Beta
    head on the residual to the assigned center."""

    def __init__(self, store: ad.ParamStore, hyper: DmmHyper):
        self.store = store
        self.hyper = hyper
        init_phi(store, hyper)

    def assign_logits(self, x, mu, want_grad=False):
        get = self.store.tensor if want_grad else self.store.get
        w1, b1 = get("dmm.local_c.0.W"), get("dmm.local_c.0.b")
        w2, b2 = get("dmm.local_c.2.W"), get("dmm.local_c.2.b")
        x_part = ad.linear(x, ad.rows(w1, 0, DIM), b1)
        mu_part = ad.linear(mu, ad.rows(w1, DIM, 2 * DIM))
        return ad.pair_tanh_dot(x_part, mu_part, w2, b2)        # (I, L, N, M)

    def beta_params(self, x, mu, c, want_grad=False):
        get = self.store.tensor if want_grad else self.store.get
        mu_c = _gather_centers(mu, c)
        inp = x[:, None] - mu_c
        out = ad.mlp2_tanh(inp, get("dmm.local_h.0.W"), get("dmm.local_h.0.b"),
                           get("dmm.local_h.2.W"), get("dmm.local_h.2.b"))
        log_alpha = ad.add(ad.last_slice(out, 0, 1), np.log(self.hyper.alpha))
        log_beta = ad.add(ad.last_slice(out, 1, 2), np.log(self.hyper.beta))
        return log_alpha, log_beta


class LocalsKernel(LocalsProposal):
    block = "locals"

    def propose(self, x, state, rng, want_grad=False):
        hy = self.hyper
        prior = np.full(hy.n_clusters, hy.log_pi)
        logits = self.assign_logits(x, state["mu"], want_grad=want_grad)
        logits_np = ad.value_of(logits)
        c = _sample_softmax(rng, logits_np)
        log_a, log_b = self.beta_params(x, state["mu"], c, want_grad=want_grad)
        a = np.exp(ad.value_of(log_a))[..., 0]
        b = np.exp(ad.value_of(log_b))[..., 0]
        h = ef.sample_beta(rng, a, b)
        values = {"c": c, "h": h}
        lq_c = ad.categorical_block_score(logits, prior, c)
        lp_h = ef.beta_log_prob(h[..., None], ad.exp(log_a), ad.exp(log_b))
        lq = ad.add(lq_c, ad.sum(lp_h, axis=(-2, -1)))
        if want_grad:
            return Proposal(values, lq.data, lq, self._scorer(x, state, logits_np))
        return Proposal(values, lq, scorer=self._scorer(x, state, logits_np))

    def _scorer(self, x, state, logits_np):
        prior = np.full(self.hyper.n_clusters, self.hyper.log_pi)

        def score(values):
            lq_c = ad.categorical_block_score(logits_np, prior, values["c"])
            log_a, log_b = self.beta_params(x, state["mu"], values["c"])
            lp = ef.beta_log_prob(values["h"][..., None], np.exp(log_a),
                                  np.exp(log_b))
            return lq_c + lp.sum(axis=(-2, -1))

        return score

    def log_density(self, x, state, values):
        prior = np.full(self.hyper.n_clusters, self.hyper.log_pi)
        logits = self.assign_logits(x, state["mu"])
        lq_c = ad.categorical_block_score(logits, prior, values["c"])
        log_a, log_b = self.beta_params(x, state["mu"], values["c"])
        lp = ef.beta_log_prob(values["h"][..., None], np.exp(log_a), np.exp(log_b))
        return lq_c + lp.sum(axis=(-2, -1))

    def log_density_node(self, x, state, values):
        prior = np.full(self.hyper.n_clusters, self.hyper.log_pi)
        logits = self.assign_logits(x, state["mu"], want_grad=True)
        lq_c = ad.categorical_block_score(logits, prior, values["c"])
        log_a, log_b = self.beta_params(x, state["mu"], values["c"], want_grad=True)
        lp = ef.beta_log_prob(values["h"][..., None], ad.exp(log_a), ad.exp(log_b))
        return ad.add(lq_c, ad.sum(lp, axis=(-2, -1)))


def _sample_softmax(rng, logits):
    lead = logits.shape[:-1]
    p = np.exp(logits - logits.max(axis=-1, keepdims=True))
    cum = np.cumsum(p, axis=-1)
    u = rng.random(lead + (1,)) * cum[..., -1:]
    return np.sum(u > cum, axis=-1).astype(np.int64)


class NeuralEncoder:
    """One-shot proposal q(mu | x) q(c, h | x, mu)."""

    def __init__(self, store: ad.ParamStore, hyper: DmmHyper):
        self.hyper = hyper
        self.centers = CentersProposal(store, hyper, conditional=False)
        self.locals_ = LocalsKernel(store, hyper)

    def propose(self, x, n_particles, rng, want_grad=False):
        hy = self.hyper
        mu_t, logvar = self.centers.params(x, want_grad=want_grad)
        lead = (x.shape[0], n_particles, hy.n_clusters, DIM)
        sd = np.exp(0.5 * ad.value_of(logvar))[:, None]
        mu = np.broadcast_to(ad.value_of(mu_t)[:, None], lead) \
            + sd * rng.standard_normal(lead)
        mu_e = _expand(mu_t)
        logvar_e = _expand(logvar)
        lq_g = ad.sum(ef.diag_normal_log_prob_logvar(mu, mu_e, logvar_e),
                      axis=(-2, -1))
        mid = LatentState({"mu": mu})
        prop = self.locals_.propose(x, mid, rng, want_grad=want_grad)
        state = LatentState({"mu": mu, "c": prop.values["c"], "h": prop.values["h"]})
        lq = ad.add(lq_g, prop.node if want_grad else prop.log_q)
        if want_grad:
            return state, lq.data, lq
        return state, lq, None


def _expand(p):
    shape = ad.value_of(p).shape
    return ad.reshape(p, (shape[0], 1) + shape[1:])


class PriorEncoder:
    def __init__(self, hyper: DmmHyper):
        self.hyper = hyper

    def propose(self, x, n_particles, rng, want_grad=False):
        hy = self.hyper
        n_inst, n_pts = x.shape[0], x.shape[1]
        mu = rng.normal(hy.mu_loc, hy.sigma0,
                        size=(n_inst, n_particles, hy.n_clusters, DIM))
        c = rng.integers(0, hy.n_clusters, size=(n_inst, n_particles, n_pts))
        h = np.clip(rng.beta(hy.alpha, hy.beta, size=c.shape), 1e-9, 1 - 1e-9)
        state = LatentState({"mu": mu, "c": c, "h": h})
        lq = (ef.diag_normal_log_prob(mu, hy.mu_loc, hy.sigma0).sum(axis=(-2, -1))
              + ef.beta_log_prob(h, hy.alpha, hy.beta).sum(axis=-1)
              + n_pts * hy.log_pi)
        return state, lq, None


class PriorCentersKernel:
    block = "centers"

    def __init__(self, hyper: DmmHyper):
        self.hyper = hyper

    def propose(self, x, state, rng, want_grad=False):
        hy = self.hyper
        shape = state["mu"].shape
        mu = rng.normal(hy.mu_loc, hy.sigma0, size=shape)
        lq = ef.diag_normal_log_prob(mu, hy.mu_loc, hy.sigma0).sum(axis=(-2, -1))
        return Proposal({"mu": mu}, lq, scorer=self.log_density_of)

    def log_density_of(self, values):
        hy = self.hyper
        return ef.diag_normal_log_prob(values["mu"], hy.mu_loc,
                                       hy.sigma0).sum(axis=(-2, -1))

    def log_density(self, x, state, values):
        return self.log_density_of(values)


class PriorLocalsKernel:
    block = "locals"

    def __init__(self, hyper: DmmHyper):
        self.hyper = hyper

    def propose(self, x, state, rng, want_grad=False):
        hy = self.hyper
        shape = state["c"].shape
        c = rng.integers(0, hy.n_clusters, size=shape)
        h = np.clip(rng.beta(hy.alpha, hy.beta, size=shape), 1e-9, 1 - 1e-9)
        values = {"c": c, "h": h}
        return Proposal(values, self.log_density_of(values),
                        scorer=self.log_density_of)

    def log_density_of(self, values):
        hy = self.hyper
        return (ef.beta_log_prob(values["h"], hy.alpha, hy.beta).sum(axis=-1)
                + values["c"].shape[-1] * hy.log_pi)

    def log_density(self, x, state, values):
        return self.log_density_of(values)


# ---------------------------------------------------------------------------
# encoder + HMC baseline (conditioned on discrete assignments)
# ---------------------------------------------------------------------------


class ConditionalTarget:
    """log p(x, mu, h | c) over (mu, logit h) rows, Jacobians included."""

    def __init__(self, x, c, hyper: DmmHyper, theta_store: ad.ParamStore,
                 model: Model | None = None):
        self.x = x
        self.c = c
        self.hyper = hyper
        self.theta = theta_store
        self.model = model
        self.m = hyper.n_clusters
        self.n = x.shape[1]
        self.n_particles = c.shape[1]

    def flatten(self, mu, h):
        lead = mu.shape[:-2]
        v = np.log(h) - np.log1p(-h)
        return np.concatenate([mu.reshape(lead + (-1,)), v], axis=-1).reshape(
            -1, 2 * self.m + self.n)

    def unflatten(self, q):
        n_i = self.x.shape[0]
        mu = q[:, :2 * self.m].reshape(n_i, self.n_particles, self.m, DIM)
        v = q[:, 2 * self.m:].reshape(n_i, self.n_particles, self.n)
        return mu, v

    def __call__(self, q):
        hy = self.hyper
        mu, v = self.unflatten(q)
        from scipy.special import expit
        with np.errstate(all="ignore"):   # extreme rows become divergences
            h = np.clip(expit(v), 1e-12, 1 - 1e-12)
        h_t = ad.Tensor(h)
        h_t.grad = np.zeros_like(h)
        g = decoder_forward(self.theta, h_t)
        mu_c = _gather_centers(mu, self.c)
        resid = ad.sub(self.x[:, None], ad.add(g, mu_c))
        quad = ad.mul(ad.sum(ad.square(resid), axis=(-2, -1)),
                      -0.5 / hy.sigma_eps ** 2)
        prior_mu = ef.diag_normal_log_prob(mu, hy.mu_loc, hy.sigma0).sum(axis=(-2, -1))
        prior_h = ef.beta_log_prob(h, hy.alpha, hy.beta).sum(axis=-1)
        jac = (np.log(h) + np.log1p(-h)).sum(axis=-1)
        logp = quad.data + prior_mu + prior_h + jac
        if self.model is not None:
            self.model.count(logp.shape)
        # gradient wrt mu: residual pulled back through the assignment map
        onehot = np.eye(self.m)[self.c]
        d_mu = np.einsum("ilnm,ilnd->ilmd", onehot,
                         resid.data) / hy.sigma_eps ** 2
        d_mu += -(mu - hy.mu_loc) / hy.sigma0 ** 2
        # gradient wrt h via the decoder vjp, then the logit Jacobian
        ad.backward(quad, 1.0)
        d_h = h_t.grad
        d_h = d_h + (hy.alpha - 1.0) / h - (hy.beta - 1.0) / (1.0 - h)
        d_v = d_h * h * (1.0 - h) + (1.0 - 2.0 * h)
        lead = mu.shape[:-2]
        grad = np.concatenate([d_mu.reshape(lead + (-1,)), d_v], axis=-1)
        return logp.ravel(), grad.reshape(q.shape)


def hmc_rws_baseline(x, phi_store, theta_store, hyper: DmmHyper,
                     n_updates: int, n_particles: int, leapfrog_steps: int,
                     rng: np.random.Generator, model: Model | None = None,
                     step_size: float = 0.02, adapt: bool = True):
    """Encoder proposals; HMC refreshes (mu, h) given the encoder's c."""
    from . import hmc as hmc_mod
    from .smc import ParticleSystem, sweep_metrics

    enc = NeuralEncoder(phi_store, hyper)
    state, lq, _ = enc.propose(x, n_particles, rng)
    model_eval = model if model is not None else DmmModel(hyper, theta_store)
    log_w = model_eval.log_joint(x, state) - lq
    target = ConditionalTarget(x, state["c"], hyper, theta_store, model=model)
    q = target.flatten(state["mu"], state["h"])
    diag = {"accept": [], "step_size": step_size}
    if n_updates > 0:
        cfg = hmc_mod.HmcConfig(step_size=step_size,
                                leapfrog_steps=leapfrog_steps, adapt=adapt)
        q, info = hmc_mod.run_chain(target, q, n_updates, cfg, rng)
        diag["accept"] = info["accept"]
        diag["step_size"] = info["final_step"]
    mu_f, v_f = target.unflatten(q)
    from scipy.special import expit
    h_f = np.clip(expit(v_f), 1e-12, 1 - 1e-12)
    state = LatentState({"mu": mu_f, "c": state["c"], "h": h_f})
    lj = model_eval.log_joint(x, state)
    metrics = [sweep_metrics(1 + n_updates, log_w, lj)]
    return ParticleSystem(state, log_w, sweep=1 + n_updates), metrics, diag
