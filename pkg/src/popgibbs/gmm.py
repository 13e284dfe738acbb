"""2-D Gaussian mixture experiment: generative model, analytic Gibbs
conditionals, neural proposals parameterized through conjugate sufficient
statistics, corpus generation, and the analytic inclusive-KL diagnostic.

Model (per instance of N points):

    mu_m, tau_m ~ NormalGamma(mu0, nu0, alpha0, beta0)   elementwise, m=1..M
    c_n ~ Categorical(uniform),  x_n | c_n=m ~ Normal(mu_m, 1/tau_m)

Global block: (mu, tau); local block: assignments c.  Cluster indices are
0-based.  Array layout: x (I, N, 2); latents mu/tau (I, L, M, 2), c (I, L, N).

The prior shape/rate default to (2, 2); the alternative (0.2, 0.2) pairing is
available through `GmmHyper` since both appear in common usage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import autodiff as ad
from . import expfam as ef
from .autodiff import Fc
from .smc import LatentState, Model

DIM = 2


@dataclass(frozen=True)
class GmmHyper:
    n_clusters: int = 3
    mu0: float = 0.0
    nu0: float = 0.1
    alpha0: float = 2.0
    beta0: float = 2.0

    @property
    def log_pi(self) -> float:
        return -float(np.log(self.n_clusters))

    def prior(self) -> ef.NormalGammaParams:
        return ef.NormalGammaParams(
            mu=np.full(DIM, self.mu0), nu=self.nu0,
            alpha=self.alpha0, beta=np.full(DIM, self.beta0))


@dataclass
class GmmInstance:
    x: np.ndarray                      # (N, 2)
    truth_mu: np.ndarray | None = None   # (M, 2), diagnostics only
    truth_tau: np.ndarray | None = None
    truth_c: np.ndarray | None = None


def generate_instance(n_clusters: int, n_points: int, hyper: GmmHyper,
                      rng: np.random.Generator) -> GmmInstance:
    """Ancestral sample from the model; ground truth retained."""
    mu, tau = ef.sample_normal_gamma(
        rng, np.full((n_clusters, DIM), hyper.mu0), hyper.nu0, hyper.alpha0,
        np.full((n_clusters, DIM), hyper.beta0))
    c = rng.integers(0, n_clusters, size=n_points)
    x = mu[c] + rng.standard_normal((n_points, DIM)) / np.sqrt(tau[c])
    return GmmInstance(x, mu, tau, c)


def generate_corpus(n_instances: int, n_clusters: int, n_points: int,
                    hyper: GmmHyper, rng: np.random.Generator):
    """Stacked corpus arrays: x (I, N, 2) plus ground-truth arrays."""
    xs = np.empty((n_instances, n_points, DIM))
    mus = np.empty((n_instances, n_clusters, DIM))
    taus = np.empty((n_instances, n_clusters, DIM))
    cs = np.empty((n_instances, n_points), dtype=np.int64)
    for i in range(n_instances):
        inst = generate_instance(n_clusters, n_points, hyper, rng)
        xs[i], mus[i], taus[i], cs[i] = inst.x, inst.truth_mu, inst.truth_tau, inst.truth_c
    return xs, {"mu": mus, "tau": taus, "c": cs}


def overlap_flags(truth_mu, truth_tau, factor: float = 2.0):
    """Flag instances whose ground-truth clusters overlap heavily.

    Generation samples from the prior and does not enforce separation;
    this diagnostic marks instances where any cluster pair sits closer
    than `factor` times the sum of their mean coordinate spreads.
    """
    mu = np.asarray(truth_mu)
    sd = 1.0 / np.sqrt(np.asarray(truth_tau))
    spread = sd.mean(axis=-1)                           # (I, M)
    dist = np.linalg.norm(mu[:, :, None, :] - mu[:, None, :, :], axis=-1)
    lim = factor * (spread[:, :, None] + spread[:, None, :])
    m = mu.shape[1]
    off = ~np.eye(m, dtype=bool)
    return np.any((dist < lim) & off, axis=(1, 2))


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def _gather_cluster(arr, c):
    """arr (..., M, D) indexed by assignments c (..., N) -> (..., N, D)."""
    d = arr.shape[-1]
    m = arr.shape[-2]
    lead = c.shape[:-1]
    rows = int(np.prod(lead, dtype=int)) if lead else 1
    flat = arr.reshape(rows, m, d)
    c2 = c.reshape(rows, -1)
    out = flat[np.arange(rows)[:, None], c2]
    return out.reshape(c.shape + (d,))


class GmmModel(Model):
    block_order = ("globals", "assign")
    block_keys = {"globals": ("mu", "tau"), "assign": ("c",)}
    has_theta = False

    def __init__(self, hyper: GmmHyper):
        super().__init__()
        self.hyper = hyper

    def log_joint(self, x, state) -> np.ndarray:
        return log_joint(x, state["mu"], state["tau"], state["c"], self.hyper,
                         model=self)


def log_joint(x, mu, tau, c, hyper: GmmHyper, model: Model | None = None):
    """Sum of prior terms plus per-point categorical and Gaussian terms."""
    if np.any(ad.value_of(tau) <= 0):
        raise ef.DomainError("gmm log_joint: precision must be positive")
    h = hyper
    log_tau = np.log(tau)
    prior = ef.normal_gamma_log_prob(
        mu, tau, h.mu0, h.nu0, h.alpha0, h.beta0,
        log_tau_val=log_tau).sum(axis=(-2, -1))
    lik = np.empty(c.shape[:-1])
    _kernels.gmm_loglik(np.ascontiguousarray(x), np.ascontiguousarray(mu),
                        np.ascontiguousarray(tau), log_tau,
                        np.ascontiguousarray(c, dtype=np.int64), lik)
    out = prior + c.shape[-1] * h.log_pi + lik
    if model is not None:
        model.count(out.shape)
    return out


def exact_local_conditional(x, mu, tau, hyper: GmmHyper):
    """Per-point Gibbs conditional p(c_n | x, mu, tau): (..., N, M) probs."""
    logits = _assignment_logits(x, mu, tau, hyper)
    p = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return p / p.sum(axis=-1, keepdims=True)


def _assignment_logits(x, mu, tau, hyper: GmmHyper):
    xb = x[:, None, :, None, :] if x.ndim == 3 else x[..., None, :]
    mu_e = mu[..., None, :, :]
    tau_e = tau[..., None, :, :]
    log_tau_e = np.log(tau)[..., None, :, :]      # log on (.., M, D), then expand
    ll = 0.5 * (log_tau_e - ef.LOG_2PI) - 0.5 * tau_e * (xb - mu_e) ** 2
    return hyper.log_pi + ll.sum(axis=-1)         # (..., N, M)


def exact_global_conditional(x, c, hyper: GmmHyper):
    """Conjugate posterior p(mu, tau | x, c) per cluster.

    Returns (mu (...,M,2), nu (...,M), alpha (...,M), beta (...,M,2)).
    Empty clusters fall back to the prior.
    """
    xb = x[:, None] if x.ndim == c.ndim else x
    xb = np.broadcast_to(xb, c.shape + (DIM,))
    counts, s1, s2 = ef.assignment_counts(xb, c, hyper.n_clusters)
    return ef.normal_gamma_posterior_arrays(
        hyper.mu0, hyper.nu0, hyper.alpha0, hyper.beta0, counts, s1, s2)


def marginal_log_joint(x, mu, tau, hyper: GmmHyper, model: Model | None = None):
    """log p(x, mu, tau) with assignments summed out per point."""
    h = hyper
    prior = ef.normal_gamma_log_prob(mu, tau, h.mu0, h.nu0, h.alpha0,
                                     h.beta0).sum(axis=(-2, -1))
    logits = _assignment_logits(x, mu, tau, hyper)
    m = logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(logits - m).sum(axis=-1)) + m[..., 0]
    out = prior + lse.sum(axis=-1)
    if model is not None:
        model.count(out.shape)
    return out


def marginal_grad(x, mu, tau, hyper: GmmHyper):
    """Analytic gradient of `marginal_log_joint` w.r.t. (mu, tau).

    Returns (d_mu, d_tau) with the shapes of mu/tau.  Used by the HMC
    baseline; validated against finite differences in the tests.
    """
    h = hyper
    logits = _assignment_logits(x, mu, tau, hyper)
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    resp = e / e.sum(axis=-1, keepdims=True)            # (..., N, M)
    xb = x[:, None, :, None, :] if x.ndim == 3 else x[..., None, :]
    mu_e = mu[..., None, :, :]
    tau_e = tau[..., None, :, :]
    diff = xb - mu_e
    d_mu = np.einsum("...nm,...nmd->...md", resp, tau_e * diff)
    d_tau = np.einsum("...nm,...nmd->...md", resp,
                      0.5 / tau_e - 0.5 * diff ** 2)
    d_mu += -h.nu0 * tau * (mu - h.mu0)
    d_tau += (h.alpha0 - 0.5) / tau - h.beta0 - 0.5 * h.nu0 * (mu - h.mu0) ** 2
    return d_mu, d_tau


# ---------------------------------------------------------------------------
# exact (oracle) and prior kernels
# ---------------------------------------------------------------------------


def _sample_softmax_rows(rng, logits):
    """Categorical draws from softmax over the last axis of (I, L, N, M)."""
    lead = logits.shape[:-1]
    p = np.exp(logits - logits.max(axis=-1, keepdims=True))
    cum = np.cumsum(p, axis=-1)
    u = rng.random(lead + (1,)) * cum[..., -1:]
    return np.sum(u > cum, axis=-1).astype(np.int64)


def _ng_log_density(values, mu, nu, alpha, beta):
    """Summed NormalGamma log-density of a {mu, tau} block under given params."""
    nu_e = ad.reshape(nu, ad.value_of(nu).shape + (1,))
    alpha_e = ad.reshape(alpha, ad.value_of(alpha).shape + (1,))
    lp = ef.normal_gamma_log_prob(values["mu"], values["tau"],
                                  mu, nu_e, alpha_e, beta)
    return ad.sum(lp, axis=(-2, -1))


def _sample_ng_block(rng, mu, nu, alpha, beta):
    mu_val, tau_val = ef.sample_normal_gamma(
        rng, mu, nu[..., None], alpha[..., None], beta)
    return {"mu": mu_val, "tau": tau_val}


class GibbsGlobalKernel:
    """Exact conditional p(mu, tau | x, c): the analytic oracle."""

    block = "globals"

    def __init__(self, hyper: GmmHyper):
        self.hyper = hyper

    def _params(self, x, state):
        return exact_global_conditional(x, state["c"], self.hyper)

    def propose(self, x, state, rng, want_grad=False):
        from .smc import Proposal
        mu, nu, alpha, beta = self._params(x, state)
        values = _sample_ng_block(rng, mu, nu, alpha, beta)
        scorer = lambda v: _ng_log_density(v, mu, nu, alpha, beta)  # noqa: E731
        return Proposal(values, scorer(values), scorer=scorer)

    def log_density(self, x, state, values):
        mu, nu, alpha, beta = self._params(x, state)
        return _ng_log_density(values, mu, nu, alpha, beta)


class GibbsLocalKernel:
    """Exact enumerated conditional p(c | x, mu, tau)."""

    block = "assign"

    def __init__(self, hyper: GmmHyper):
        self.hyper = hyper

    def propose(self, x, state, rng, want_grad=False):
        from .smc import Proposal
        probs = exact_local_conditional(x, state["mu"], state["tau"], self.hyper)
        c = ef.sample_categorical(rng, probs)
        scorer = lambda v: ef.categorical_log_prob(  # noqa: E731
            v["c"], probs).sum(axis=-1)
        return Proposal({"c": c}, scorer({"c": c}), scorer=scorer)

    def log_density(self, x, state, values):
        probs = exact_local_conditional(x, state["mu"], state["tau"], self.hyper)
        return ef.categorical_log_prob(values["c"], probs).sum(axis=-1)


class PriorGlobalKernel:
    """Proposes (mu, tau) from the prior, ignoring the data (BPG mode)."""

    block = "globals"

    def __init__(self, hyper: GmmHyper):
        self.hyper = hyper

    def _params(self, state):
        h = self.hyper
        lead = state["c"].shape[:-1] + (h.n_clusters,)
        return (np.full(lead + (DIM,), h.mu0), np.full(lead, h.nu0),
                np.full(lead, h.alpha0), np.full(lead + (DIM,), h.beta0))

    def propose(self, x, state, rng, want_grad=False):
        from .smc import Proposal
        mu, nu, alpha, beta = self._params(state)
        values = _sample_ng_block(rng, mu, nu, alpha, beta)
        scorer = lambda v: _ng_log_density(v, mu, nu, alpha, beta)  # noqa: E731
        return Proposal(values, scorer(values), scorer=scorer)

    def log_density(self, x, state, values):
        mu, nu, alpha, beta = self._params(state)
        return _ng_log_density(values, mu, nu, alpha, beta)


class PriorLocalKernel:
    block = "assign"

    def __init__(self, hyper: GmmHyper):
        self.hyper = hyper

    def propose(self, x, state, rng, want_grad=False):
        from .smc import Proposal
        shape = state["c"].shape
        c = rng.integers(0, self.hyper.n_clusters, size=shape)
        lq = np.full(shape[:-1], shape[-1] * self.hyper.log_pi)
        return Proposal({"c": c}, lq, scorer=lambda v: lq)

    def log_density(self, x, state, values):
        shape = values["c"].shape
        return np.full(shape[:-1], shape[-1] * self.hyper.log_pi)


class PriorEncoder:
    """One-shot prior proposal: seeds the bootstrapped-population baseline."""

    def __init__(self, hyper: GmmHyper):
        self.hyper = hyper

    def propose(self, x, n_particles, rng, want_grad=False):
        h = self.hyper
        n_inst, n_pts = x.shape[0], x.shape[1]
        lead = (n_inst, n_particles, h.n_clusters)
        mu, tau = ef.sample_normal_gamma(
            rng, np.full(lead + (DIM,), h.mu0), h.nu0, h.alpha0,
            np.full(lead + (DIM,), h.beta0))
        c = rng.integers(0, h.n_clusters, size=(n_inst, n_particles, n_pts))
        state = LatentState({"mu": mu, "tau": tau, "c": c})
        lq = (ef.normal_gamma_log_prob(mu, tau, h.mu0, h.nu0, h.alpha0,
                                       h.beta0).sum(axis=(-2, -1))
              + n_pts * h.log_pi)
        return state, lq, None


# ---------------------------------------------------------------------------
# neural sufficient-statistics proposals
# ---------------------------------------------------------------------------


def architectures(n_clusters: int = 3) -> dict:
    """Layer descriptors for every proposal network in this experiment."""
    m = n_clusters
    # statistics heads use standard init: zeroing them parks the bilinear
    # aggregation (t, s) on a saddle where neither head receives a useful
    # gradient; the logits head stays zero so fresh local proposals
    # reproduce the prior
    return {
        "enc_s": [Fc(DIM, DIM)],
        "enc_t": [Fc(DIM, m), "softmax"],
        "cond_s": [Fc(DIM + m, DIM)],
        "cond_t": [Fc(DIM + m, m), "softmax"],
        "local": [Fc(DIM + 2 * DIM, 32), "tanh", Fc(32, 1, zero_init=True)],
    }


class NeuralGlobalProposal:
    """Pointwise statistics nets + conjugate-form aggregation.

    Two heads per net emit s_n (approximating x_n) and a softmax t_n
    (approximating the assignment indicator); sums of (t, t*s, t*s^2) feed
    the analytic conjugate update, so the proposal scales with instance
    size.  `conditional` selects the net that also sees assignments.
    """

    def __init__(self, store: ad.ParamStore, hyper: GmmHyper,
                 conditional: bool):
        self.store = store
        self.hyper = hyper
        self.conditional = conditional
        arch = architectures(hyper.n_clusters)
        self.s_layers = arch["cond_s" if conditional else "enc_s"]
        self.t_layers = arch["cond_t" if conditional else "enc_t"]
        self.prefix = "gmm.cond" if conditional else "gmm.enc"

    def params(self, x, c=None, want_grad=False):
        """Proposal NormalGamma parameters from neural statistics."""
        if self.conditional:
            if c is None:
                raise ValueError("conditional statistics net needs assignments")
            s, t = self._conditional_stats(x, c, want_grad)
        else:
            s = ad.mlp_forward(self.store, f"{self.prefix}_s", self.s_layers, x)
            t = ad.mlp_forward(self.store, f"{self.prefix}_t", self.t_layers, x)
            if not want_grad:
                s, t = ad.value_of(s), ad.value_of(t)
        counts, sum1, sum2 = ad.weighted_stat_sums(t, s)
        h = self.hyper
        return ef.normal_gamma_posterior_arrays(
            h.mu0, h.nu0, h.alpha0, h.beta0, counts, sum1, sum2)

    def _conditional_stats(self, x, c, want_grad):
        """Statistics net on (x_n, onehot(c_n)) with the input split into an
        x projection and an assignment-row lookup (same math, no concat)."""
        for i, layer in enumerate(self.s_layers):
            if isinstance(layer, Fc):
                self.store.ensure(f"{self.prefix}_s.{i}.W",
                                  (layer.fan_in, layer.fan_out),
                                  "zeros" if layer.zero_init else "glorot")
                self.store.ensure(f"{self.prefix}_s.{i}.b", (layer.fan_out,), "zeros")
        for i, layer in enumerate(self.t_layers):
            if isinstance(layer, Fc):
                self.store.ensure(f"{self.prefix}_t.{i}.W",
                                  (layer.fan_in, layer.fan_out),
                                  "zeros" if layer.zero_init else "glorot")
                self.store.ensure(f"{self.prefix}_t.{i}.b", (layer.fan_out,), "zeros")
        get = self.store.tensor if want_grad else self.store.get
        ws, bs = get(f"{self.prefix}_s.0.W"), get(f"{self.prefix}_s.0.b")
        wt, bt = get(f"{self.prefix}_t.0.W"), get(f"{self.prefix}_t.0.b")
        lead = (x.shape[0], 1, x.shape[1])
        sx = ad.reshape(ad.linear(x, ad.rows(ws, 0, DIM), bs), lead + (DIM,))
        tx = ad.reshape(ad.linear(x, ad.rows(wt, 0, DIM), bt),
                        lead + (self.hyper.n_clusters,))
        s = ad.add(sx, ad.take_rows(ad.rows(ws, DIM, DIM + self.hyper.n_clusters), c))
        t_logits = ad.add(tx, ad.take_rows(
            ad.rows(wt, DIM, DIM + self.hyper.n_clusters), c))
        return s, ad.softmax(t_logits, axis=-1)


class NeuralGlobalKernel(NeuralGlobalProposal):
    block = "globals"

    def __init__(self, store, hyper):
        super().__init__(store, hyper, conditional=True)

    def propose(self, x, state, rng, want_grad=False):
        from .smc import Proposal
        mu, nu, alpha, beta = self.params(x, state["c"], want_grad=want_grad)
        values = _sample_ng_block(rng, ad.value_of(mu), ad.value_of(nu),
                                  ad.value_of(alpha), ad.value_of(beta))
        lq = _ng_log_density(values, mu, nu, alpha, beta)
        np_params = tuple(ad.value_of(p) for p in (mu, nu, alpha, beta))
        scorer = lambda v: _ng_log_density(v, *np_params)  # noqa: E731
        if want_grad:
            return Proposal(values, lq.data, lq, scorer)
        return Proposal(values, lq, scorer=scorer)

    def log_density(self, x, state, values):
        mu, nu, alpha, beta = self.params(x, state["c"])
        return _ng_log_density(values, mu, nu, alpha, beta)

    def log_density_node(self, x, state, values):
        mu, nu, alpha, beta = self.params(x, state["c"], want_grad=True)
        return _ng_log_density(values, mu, nu, alpha, beta)


class NeuralLocalProposal:
    """Per-point categorical proposal: prior logits plus a per-cluster
    scalar statistic from a shared two-layer net.

    The net scores every (point, cluster) pair; since its input splits as
    [x_n | mu_m, tau_m], the first layer is applied to the two factors
    separately and the fused pair op combines them, which avoids
    materializing the (I, L, N, M, width) input grid.
    """

    def __init__(self, store: ad.ParamStore, hyper: GmmHyper):
        self.store = store
        self.hyper = hyper
        self.layers = architectures(hyper.n_clusters)["local"]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Fc):
                store.ensure(f"gmm.local.{i}.W", (layer.fan_in, layer.fan_out),
                             "zeros" if layer.zero_init else "glorot")
                store.ensure(f"gmm.local.{i}.b", (layer.fan_out,), "zeros")

    def logits(self, x, mu, tau, want_grad=False):
        # x (I, N, 2); mu/tau (I, L, M, 2) -> per-pair statistics (I, L, N, M)
        names = ["gmm.local.0.W", "gmm.local.0.b", "gmm.local.2.W", "gmm.local.2.b"]
        w1, b1, w2, b2 = (self.store.tensor(n) if want_grad else self.store.get(n)
                          for n in names)
        x_part = ad.linear(x, ad.rows(w1, 0, DIM), b1)            # (I, N, 32)
        cond = np.concatenate([mu, tau], axis=-1)                 # (I, L, M, 4)
        cond_part = ad.linear(cond, ad.rows(w1, DIM, 3 * DIM))    # (I, L, M, 32)
        return ad.pair_tanh_dot(x_part, cond_part, w2, b2)        # (I, L, N, M)

    def log_probs(self, x, mu, tau):
        logits = self.logits(x, mu, tau)
        return ad.log_softmax(logits + self.hyper.log_pi, axis=-1)


class NeuralLocalKernel(NeuralLocalProposal):
    block = "assign"

    def propose(self, x, state, rng, want_grad=False):
        from .smc import Proposal
        prior = np.full(self.hyper.n_clusters, self.hyper.log_pi)
        logits = self.logits(x, state["mu"], state["tau"], want_grad=want_grad)
        logits_np = ad.value_of(logits)
        # uniform prior logits shift every row equally: sample from the
        # statistics directly
        c = _sample_softmax_rows(rng, logits_np)
        scorer = lambda v: ad.categorical_block_score(  # noqa: E731
            logits_np, prior, v["c"])
        node = ad.categorical_block_score(logits, prior, c) if want_grad else None
        return Proposal({"c": c}, scorer({"c": c}), node, scorer)

    def log_density(self, x, state, values):
        logits = self.logits(x, state["mu"], state["tau"])
        prior = np.full(self.hyper.n_clusters, self.hyper.log_pi)
        return ad.categorical_block_score(logits, prior, values["c"])

    def log_density_node(self, x, state, values):
        logits = self.logits(x, state["mu"], state["tau"], want_grad=True)
        prior = np.full(self.hyper.n_clusters, self.hyper.log_pi)
        return ad.categorical_block_score(logits, prior, values["c"])


class NeuralEncoder:
    """One-shot proposal q(mu, tau | x) q(c | x, mu, tau).

    The global factor uses the unconditional statistics net; the assignment
    factor reuses the local block net at the freshly sampled globals.
    """

    def __init__(self, store: ad.ParamStore, hyper: GmmHyper):
        self.hyper = hyper
        self.global_prop = NeuralGlobalProposal(store, hyper, conditional=False)
        self.local_prop = NeuralLocalProposal(store, hyper)

    def propose(self, x, n_particles, rng, want_grad=False):
        mu_p, nu_p, alpha_p, beta_p = self.global_prop.params(
            x, want_grad=want_grad)
        # draw L particles from the shared per-instance proposal
        h = self.hyper
        lead = (x.shape[0], n_particles, h.n_clusters)
        mu_val, tau_val = ef.sample_normal_gamma(
            rng, np.broadcast_to(ad.value_of(mu_p)[:, None], lead + (DIM,)),
            np.broadcast_to(ad.value_of(nu_p)[:, None, :, None], lead + (1,)),
            np.broadcast_to(ad.value_of(alpha_p)[:, None, :, None], lead + (1,)),
            np.broadcast_to(ad.value_of(beta_p)[:, None], lead + (DIM,)))
        values = {"mu": mu_val, "tau": tau_val}
        mu_e = _expand_particle_axis(mu_p)
        nu_e = _expand_particle_axis(nu_p)
        alpha_e = _expand_particle_axis(alpha_p)
        beta_e = _expand_particle_axis(beta_p)
        lq_g = _ng_log_density(values, mu_e, nu_e, alpha_e, beta_e)
        logits = self.local_prop.logits(x, mu_val, tau_val, want_grad=want_grad)
        prior = np.full(h.n_clusters, h.log_pi)
        c = _sample_softmax_rows(rng, ad.value_of(logits))
        lq_l = ad.categorical_block_score(logits, prior, c)
        lq = ad.add(lq_g, lq_l)
        state = LatentState({"mu": mu_val, "tau": tau_val, "c": c})
        if want_grad:
            return state, lq.data, lq
        return state, lq, None


def _expand_particle_axis(p):
    """(I, ...) -> (I, 1, ...) for broadcasting against (I, L, ...) samples."""
    shape = ad.value_of(p).shape
    return ad.reshape(p, (shape[0], 1) + shape[1:])


class JointKernel:
    """Joint update of all latents within one weight update.

    Composes the conditional global proposal (given the incoming
    assignments) with the local proposal at the new globals; the reverse
    density evaluates the same composition from the proposed state back.
    Used by the block-strategy comparison.
    """

    block = "joint"

    def __init__(self, store: ad.ParamStore, hyper: GmmHyper):
        self.global_k = NeuralGlobalKernel(store, hyper)
        self.local_k = NeuralLocalKernel(store, hyper)
        self.hyper = hyper

    def propose(self, x, state, rng, want_grad=False):
        from .smc import Proposal
        gp = self.global_k.propose(x, state, rng, want_grad=want_grad)
        mid = state.replace(**gp.values)
        lp = self.local_k.propose(x, mid, rng, want_grad=want_grad)
        values = dict(gp.values)
        values.update(lp.values)
        lq = gp.log_q + lp.log_q
        node = ad.add(gp.node, lp.node) if want_grad else None
        return Proposal(values, lq, node)

    def log_density(self, x, state, values):
        # q(mu', tau' | c of the conditioning state) q(c' | mu', tau')
        lg = self.global_k.log_density(x, state, values)
        mid = state.replace(mu=values["mu"], tau=values["tau"])
        ll = self.local_k.log_density(x, mid, values)
        return lg + ll


class JointGmmModel(GmmModel):
    """GmmModel with the single joint block (block-strategy comparison)."""
    block_order = ("joint",)
    block_keys = {"joint": ("mu", "tau", "c")}


# ---------------------------------------------------------------------------
# encoder + HMC baseline
# ---------------------------------------------------------------------------


class MarginalTarget:
    """log p(x, mu, tau) with assignments summed out, in (mu, log tau)
    coordinates (log-transform Jacobian included).  Rows are (instance,
    particle) pairs flattened to (R, M*4)."""

    def __init__(self, x, hyper: GmmHyper, n_particles: int,
                 model: Model | None = None):
        self.x = x
        self.hyper = hyper
        self.n_particles = n_particles
        self.model = model
        self.m = hyper.n_clusters

    def flatten(self, mu, tau):
        lead = mu.shape[:-2]
        return np.concatenate([mu.reshape(lead + (-1,)),
                               np.log(tau).reshape(lead + (-1,))],
                              axis=-1).reshape(-1, 4 * self.m)

    def unflatten(self, q):
        n_i = self.x.shape[0]
        half = 2 * self.m
        mu = q[:, :half].reshape(n_i, self.n_particles, self.m, DIM)
        u = q[:, half:].reshape(n_i, self.n_particles, self.m, DIM)
        return mu, u

    def __call__(self, q):
        mu, u = self.unflatten(q)
        with np.errstate(all="ignore"):   # extreme rows become divergences
            tau = np.exp(u)
            logp = marginal_log_joint(self.x, mu, tau, self.hyper,
                                      model=self.model)
            logp = logp + u.sum(axis=(-2, -1))
            d_mu, d_tau = marginal_grad(self.x, mu, tau, self.hyper)
            d_u = d_tau * tau + 1.0
        lead = mu.shape[:-2]
        grad = np.concatenate([d_mu.reshape(lead + (-1,)),
                               d_u.reshape(lead + (-1,))], axis=-1)
        return logp.ravel(), grad.reshape(q.shape)


def hmc_rws_baseline(x, store, hyper: GmmHyper, n_updates: int,
                     n_particles: int, leapfrog_steps: int,
                     rng: np.random.Generator, model: Model | None = None,
                     step_size: float = 0.05, adapt: bool = True):
    """Encoder proposals refined by HMC on the marginal, then exact
    assignment refresh.

    Importance weights are taken at the initial samples against the
    marginal target and stay valid through the posterior-invariant updates;
    the returned per-sweep metrics mirror the population-sampler output.
    `n_updates` = 0 reduces to the plain one-shot baseline.
    """
    from . import hmc as hmc_mod
    from .smc import ParticleSystem, sweep_metrics

    n_inst = x.shape[0]
    prop = NeuralGlobalProposal(store, hyper, conditional=False)
    mu_p, nu_p, alpha_p, beta_p = prop.params(x)
    lead = (n_inst, n_particles, hyper.n_clusters)
    mu0 = np.broadcast_to(mu_p[:, None], lead + (DIM,))
    nu0 = np.broadcast_to(nu_p[:, None, :, None], lead + (1,))
    alpha0 = np.broadcast_to(alpha_p[:, None, :, None], lead + (1,))
    beta0 = np.broadcast_to(beta_p[:, None], lead + (DIM,))
    mu_v, tau_v = ef.sample_normal_gamma(rng, mu0, nu0, alpha0, beta0)
    lq = _ng_log_density({"mu": mu_v, "tau": tau_v},
                         mu_p[:, None], nu_p[:, None], alpha_p[:, None],
                         beta_p[:, None])
    target = MarginalTarget(x, hyper, n_particles, model=model)
    log_w = marginal_log_joint(x, mu_v, tau_v, hyper, model=model) - lq

    metrics = []
    diag = {"accept": [], "step_size": step_size}
    q = target.flatten(mu_v, tau_v)
    if n_updates > 0:
        cfg = hmc_mod.HmcConfig(step_size=step_size,
                                leapfrog_steps=leapfrog_steps, adapt=adapt)
        q, info = hmc_mod.run_chain(target, q, n_updates, cfg, rng)
        diag["accept"] = info["accept"]
        diag["step_size"] = info["final_step"]
    mu_f, u_f = target.unflatten(q)
    tau_f = np.exp(u_f)
    probs = exact_local_conditional(x, mu_f, tau_f, hyper)
    c = ef.sample_categorical(rng, probs)
    state = LatentState({"mu": mu_f, "tau": tau_f, "c": c})
    model_eval = model if model is not None else GmmModel(hyper)
    lj = model_eval.log_joint(x, state)
    metrics.append(sweep_metrics(1 + n_updates, log_w, lj))
    return ParticleSystem(state, log_w, sweep=1 + n_updates), metrics, diag


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def kl_to_exact(x, state, store: ad.ParamStore, hyper: GmmHyper):
    """Analytic inclusive KL(exact conditional || neural proposal).

    Global part: per-cluster NormalGamma KL (summed over coordinates,
    averaged over clusters) at the state's assignments.  Local part:
    per-point categorical KL averaged over points, at the state's globals.
    Returns arrays shaped like the leading state dims.
    """
    mu_e, nu_e, alpha_e, beta_e = exact_global_conditional(x, state["c"], hyper)
    cond = NeuralGlobalProposal(store, hyper, conditional=True)
    mu_q, nu_q, alpha_q, beta_q = cond.params(x, state["c"])
    kl_g = ef.normal_gamma_kl(mu_e, nu_e[..., None], alpha_e[..., None], beta_e,
                              mu_q, nu_q[..., None], alpha_q[..., None], beta_q)
    kl_global = kl_g.sum(axis=-1).mean(axis=-1)
    exact_p = exact_local_conditional(x, state["mu"], state["tau"], hyper)
    local = NeuralLocalProposal(store, hyper)
    logq = local.log_probs(x, state["mu"], state["tau"])
    kl_l = np.sum(np.where(exact_p > 0,
                           exact_p * (np.log(np.where(exact_p > 0, exact_p, 1.0))
                                      - logq), 0.0), axis=-1)
    kl_local = kl_l.mean(axis=-1)
    return kl_global, kl_local


def init_network_params(store: ad.ParamStore, hyper: GmmHyper) -> None:
    """Touch every network once so parameter creation order is fixed."""
    n, m = 4, hyper.n_clusters
    x = np.zeros((1, n, DIM))
    state = LatentState({
        "mu": np.zeros((1, 1, m, DIM)), "tau": np.ones((1, 1, m, DIM)),
        "c": np.zeros((1, 1, n), dtype=np.int64)})
    NeuralEncoder(store, hyper).propose(x, 1, np.random.default_rng(0))
    NeuralGlobalKernel(store, hyper).log_density(
        x, state, {"mu": state["mu"], "tau": state["tau"]})
