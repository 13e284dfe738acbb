"""Exponential-family distributions: densities, sampling, sufficient
statistics, conjugate updates and closed-form KL divergences.

Canonical parameter layouts (fixed per family, `D` = dimensionality):

========== ==========================================================
DiagNormal ``[mu (D), sigma (D)]`` with sigma the per-coordinate std
NormalGamma``[mu (D), beta (D), nu, alpha]`` - one independent
           NormalGamma per coordinate (diagonal precision): shared
           pseudo-count nu and shape alpha, per-coordinate location
           mu_d and rate beta_d; values are ``[mu_val (D), tau (D)]``
Gamma      ``[alpha (D), beta (D)]`` shape/rate, elementwise
Categorical``[pi (M)]`` probabilities summing to 1
Beta       ``[alpha (D), beta (D)]`` elementwise
Bernoulli  ``[p (D)]``
========== ==========================================================

Natural parameters: DiagNormal ``(mu/sigma^2, -1/(2 sigma^2))``;
NormalGamma ``(nu*mu, -beta - nu*mu^2/2, -nu/2, alpha - 1/2)`` laid out
``[nu*mu (D), -beta-nu*mu^2/2 (D), -nu/2, alpha-1/2]``; Gamma
``(alpha-1, -beta)``; Categorical ``log pi``; Beta ``(alpha-1, beta-1)``;
Bernoulli ``logit p``.

The array-level density helpers accept plain ndarrays or autodiff Tensors
for their *parameter* arguments (values are always constants), so the same
formulas back both weight computation and score gradients.  All weight
arithmetic stays in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special as sp_special

from . import autodiff as ad

LOG_2PI = float(np.log(2.0 * np.pi))


class DomainError(ValueError):
    """Value outside the support of the requested family."""


class FamilyMismatchError(ValueError):
    """Operation across two different families."""


class Family(Enum):
    DIAG_NORMAL = "diag_normal"
    NORMAL_GAMMA = "normal_gamma"
    GAMMA = "gamma"
    CATEGORICAL = "categorical"
    BETA = "beta"
    BERNOULLI = "bernoulli"


# ---------------------------------------------------------------------------
# array-level densities (AD-compatible in the parameters)
# ---------------------------------------------------------------------------


def diag_normal_log_prob(x, mu, sigma):
    """Elementwise Gaussian log-density; callers sum over coordinates."""
    z = ad.div(ad.sub(x, mu), sigma)
    return ad.sub(ad.mul(ad.add(ad.square(z), LOG_2PI), -0.5), ad.log(sigma))


def diag_normal_log_prob_logvar(x, mu, logvar):
    """Gaussian log-density parameterized by log variance."""
    var = ad.exp(logvar)
    quad = ad.div(ad.square(ad.sub(x, mu)), var)
    return ad.mul(ad.add(ad.add(quad, logvar), LOG_2PI), -0.5)


def gamma_log_prob(x, alpha, beta):
    """Gamma(shape, rate) log-density, elementwise."""
    t1 = ad.sub(ad.mul(alpha, ad.log(beta)), ad.lgamma(alpha))
    t2 = ad.mul(ad.sub(alpha, 1.0), np.log(ad.value_of(x)))
    return ad.add(t1, ad.sub(t2, ad.mul(beta, x)))


def beta_log_prob(x, alpha, beta):
    """Beta log-density on (0,1), elementwise."""
    xv = ad.value_of(x)
    lognorm = ad.sub(ad.add(ad.lgamma(alpha), ad.lgamma(beta)),
                     ad.lgamma(ad.add(alpha, beta)))
    t = ad.add(ad.mul(ad.sub(alpha, 1.0), np.log(xv)),
               ad.mul(ad.sub(beta, 1.0), np.log1p(-xv)))
    return ad.sub(t, lognorm)


def normal_gamma_log_prob(mu_val, tau_val, mu, nu, alpha, beta,
                          log_tau_val=None):
    """Per-coordinate NormalGamma log-density at (mu_val, tau_val).

    tau ~ Gamma(alpha, beta); mu | tau ~ Normal(mu, 1/(nu tau)).
    All arguments broadcast; parameters may be Tensors.  `log_tau_val` may
    be supplied when the caller already has it.
    """
    tau = ad.value_of(tau_val)
    muv = ad.value_of(mu_val)
    log_tau = np.log(tau) if log_tau_val is None else log_tau_val
    t_gamma = ad.add(ad.sub(ad.mul(alpha, ad.log(beta)), ad.lgamma(alpha)),
                     ad.sub(ad.mul(ad.sub(alpha, 0.5), log_tau),
                            ad.mul(beta, tau)))
    quad = ad.mul(ad.mul(nu, tau), ad.square(ad.sub(muv, mu)))
    t_normal = ad.mul(ad.sub(ad.sub(ad.log(nu), LOG_2PI), quad), 0.5)
    return ad.add(t_gamma, t_normal)


def normal_gamma_log_normalizer(nu, alpha, beta):
    """log of the NG normalizer Z = Gamma(alpha) beta^-alpha sqrt(2 pi / nu)."""
    return (sp_special.gammaln(alpha) - alpha * np.log(beta)
            + 0.5 * (LOG_2PI - np.log(nu)))


def categorical_log_prob(c, probs):
    """log probs[..., c]; numpy only (AD paths keep the full log-prob table)."""
    p = np.take_along_axis(np.asarray(probs), np.asarray(c)[..., None], axis=-1)
    return np.log(p[..., 0])


def bernoulli_log_prob(x, p):
    xv = ad.value_of(x)
    return ad.add(ad.mul(ad.log(p), xv), ad.mul(ad.log(ad.sub(1.0, p)), 1.0 - xv))


# -- closed-form KL divergences ---------------------------------------------


def categorical_kl(p, q, axis=-1):
    """KL(p || q) between categorical rows along `axis`."""
    pv, qv = ad.value_of(p), ad.value_of(q)
    safe = np.where(pv > 0.0, pv, 1.0)
    return np.sum(np.where(pv > 0.0, pv * (np.log(safe) - np.log(qv)), 0.0),
                  axis=axis)


def gamma_kl(a1, b1, a2, b2):
    """KL(Gamma(a1,b1) || Gamma(a2,b2)), elementwise."""
    return ((a1 - a2) * sp_special.digamma(a1) - sp_special.gammaln(a1)
            + sp_special.gammaln(a2) + a2 * (np.log(b1) - np.log(b2))
            + a1 * (b2 - b1) / b1)


def diag_normal_kl(m1, s1, m2, s2):
    """KL between Gaussians with std parameterization, elementwise."""
    r = (s1 / s2) ** 2
    return 0.5 * (r + ((m1 - m2) / s2) ** 2 - 1.0 - np.log(r))


def beta_kl(a1, b1, a2, b2):
    lb = (sp_special.gammaln(a1 + b1) - sp_special.gammaln(a1) - sp_special.gammaln(b1)
          - sp_special.gammaln(a2 + b2) + sp_special.gammaln(a2) + sp_special.gammaln(b2))
    dga, dgb, dgab = (sp_special.digamma(a1), sp_special.digamma(b1),
                      sp_special.digamma(a1 + b1))
    return lb + (a1 - a2) * (dga - dgab) + (b1 - b2) * (dgb - dgab)


def normal_gamma_kl(mu1, nu1, a1, b1, mu2, nu2, a2, b2):
    """KL(NG_1 || NG_2) per coordinate.

    Decomposes as KL between the Gamma marginals on tau plus the expected
    KL between the conditional Gaussians on mu, with E_1[tau] = a1/b1.
    """
    kl_tau = gamma_kl(a1, b1, a2, b2)
    e_tau = a1 / b1
    kl_mu = 0.5 * (np.log(nu1 / nu2) + nu2 / nu1
                   + nu2 * e_tau * (mu1 - mu2) ** 2 - 1.0)
    return kl_tau + kl_mu


def bernoulli_kl(p1, p2):
    t1 = np.where(p1 > 0, p1 * (np.log(np.where(p1 > 0, p1, 1.0)) - np.log(p2)), 0.0)
    q1, q2 = 1.0 - p1, 1.0 - p2
    t2 = np.where(q1 > 0, q1 * (np.log(np.where(q1 > 0, q1, 1.0)) - np.log(q2)), 0.0)
    return t1 + t2


# -- samplers (explicit rng, vectorized over leading dims) -------------------


def sample_diag_normal(rng, mu, sigma, size=None):
    mu, sigma = np.asarray(mu), np.asarray(sigma)
    shape = np.broadcast_shapes(mu.shape, sigma.shape)
    if size is not None:
        shape = tuple(size) + shape
    return mu + sigma * rng.standard_normal(shape)

def sample_gamma(rng, alpha, beta, size=None):
    """Gamma(shape, rate) draws (numpy's squeeze/rejection sampler)."""
    alpha, beta = np.asarray(alpha), np.asarray(beta)
    shape = np.broadcast_shapes(alpha.shape, beta.shape)
    if size is not None:
        shape = tuple(size) + shape
    return rng.gamma(np.broadcast_to(alpha, shape)) / np.broadcast_to(beta, shape)


def sample_beta(rng, alpha, beta, size=None):
    alpha, beta = np.asarray(alpha), np.asarray(beta)
    shape = np.broadcast_shapes(alpha.shape, beta.shape)
    if size is not None:
        shape = tuple(size) + shape
    draw = rng.beta(np.broadcast_to(alpha, shape), np.broadcast_to(beta, shape))
    # keep strictly inside (0,1); downstream Beta densities need the open interval
    eps = 1e-12
    return np.clip(draw, eps, 1.0 - eps)


def sample_normal_gamma(rng, mu, nu, alpha, beta, size=None):
    """Sample (mu_val, tau) elementwise; broadcasts scalar nu/alpha."""
    mu, beta = np.asarray(mu, dtype=float), np.asarray(beta, dtype=float)
    nu, alpha = np.asarray(nu, dtype=float), np.asarray(alpha, dtype=float)
    shape = np.broadcast_shapes(mu.shape, beta.shape, nu.shape, alpha.shape)
    if size is not None:
        shape = tuple(size) + shape
    tau = rng.gamma(np.broadcast_to(alpha, shape)) / np.broadcast_to(beta, shape)
    tau = np.maximum(tau, 1e-300)
    sd = 1.0 / np.sqrt(np.broadcast_to(nu, shape) * tau)
    mu_val = np.broadcast_to(mu, shape) + sd * rng.standard_normal(shape)
    return mu_val, tau


def sample_categorical(rng, probs, size=None):
    """Inverse-CDF categorical draws over the last axis of `probs`."""
    probs = np.asarray(probs)
    lead = probs.shape[:-1]
    if size is not None:
        lead = tuple(size) + lead
    cum = np.cumsum(np.broadcast_to(probs, lead + probs.shape[-1:]), axis=-1)
    u = rng.random(lead + (1,))
    return np.sum(u > cum, axis=-1).astype(np.int64)


# ---------------------------------------------------------------------------
# sufficient statistics
# ---------------------------------------------------------------------------


def assignment_statistics(x, c, n_clusters: int):
    """Pointwise statistics of an (x, assignment) pair for mixture updates.

    Layout: ``[indicator block (M), first-moment block (M*D, flattened
    row-major by cluster), second-moment block (M*D)]`` where the moment
    slots of cluster m hold ``I[c=m] * x`` and ``I[c=m] * x^2``.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(c)
    d = x.shape[-1]
    onehot = np.eye(n_clusters)[c]                        # (..., M)
    first = onehot[..., :, None] * x[..., None, :]        # (..., M, D)
    second = onehot[..., :, None] * (x[..., None, :] ** 2)
    lead = onehot.shape[:-1]
    return np.concatenate([onehot,
                           first.reshape(lead + (n_clusters * d,)),
                           second.reshape(lead + (n_clusters * d,))], axis=-1)


def assignment_counts(x, c, n_clusters: int, points_axis: int = -2):
    """Aggregate assignment statistics over the points axis.

    Returns ``(counts (..., M), sum1 (..., M, D), sum2 (..., M, D))``, the
    quantities the conjugate update consumes.
    """
    x = np.asarray(x, dtype=float)
    onehot = np.eye(n_clusters)[np.asarray(c)]            # (..., N, M)
    counts = onehot.sum(axis=points_axis)
    sum1 = np.einsum("...nm,...nd->...md", onehot, x)
    sum2 = np.einsum("...nm,...nd->...md", onehot, x ** 2)
    return counts, sum1, sum2


def sufficient_statistics(family: Family, value, n_classes: int | None = None):
    """Generic per-family statistics vector T(value)."""
    v = np.asarray(value, dtype=float)
    if family is Family.DIAG_NORMAL:
        return np.concatenate([v, v ** 2], axis=-1)
    if family is Family.GAMMA:
        return np.concatenate([np.log(v), v], axis=-1)
    if family is Family.BETA:
        return np.concatenate([np.log(v), np.log1p(-v)], axis=-1)
    if family is Family.BERNOULLI:
        return v.copy()
    if family is Family.CATEGORICAL:
        if n_classes is None:
            raise ValueError("categorical statistics need n_classes")
        return np.eye(n_classes)[np.asarray(value, dtype=int)]
    if family is Family.NORMAL_GAMMA:
        d = v.shape[-1] // 2
        mu_val, tau = v[..., :d], v[..., d:]
        return np.concatenate([np.log(tau), tau, tau * mu_val,
                               tau * mu_val ** 2], axis=-1)
    raise FamilyMismatchError(f"unknown family {family}")


# ---------------------------------------------------------------------------
# conjugate NormalGamma update
# ---------------------------------------------------------------------------

_EMPTY_CLUSTER_EPS = 1e-8


@dataclass(frozen=True)
class NormalGammaParams:
    """Elementwise NormalGamma over a D-vector: diagonal precision."""
    mu: np.ndarray        # (D,) location
    nu: float             # pseudo-count
    alpha: float          # shape
    beta: np.ndarray      # (D,) rate

    def __post_init__(self):
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, float)))
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, float)))
        if self.nu <= 0 or self.alpha <= 0 or np.any(self.beta <= 0):
            raise DomainError("NormalGamma requires nu, alpha, beta > 0")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def normal_gamma_posterior(prior: NormalGammaParams, counts, sum1, sum2):
    """Closed-form conjugate update from (pseudo-)counts and moment sums.

    counts may be fractional (soft statistics).  The rate update divides by
    the count, so counts below 1e-8 return the prior (its continuous limit).
    """
    n = float(counts)
    if n < 0:
        raise ValueError(f"negative count {n}")
    s1 = np.broadcast_to(np.asarray(sum1, float), prior.mu.shape)
    s2 = np.broadcast_to(np.asarray(sum2, float), prior.mu.shape)
    if n < _EMPTY_CLUSTER_EPS:
        return NormalGammaParams(prior.mu.copy(), prior.nu, prior.alpha,
                                 prior.beta.copy())
    alpha = prior.alpha + n / 2.0
    nu = prior.nu + n
    mu = (prior.mu * prior.nu + s1) / (prior.nu + n)
    beta = (prior.beta + 0.5 * (s2 - s1 ** 2 / n)
            + (n * prior.nu / (n + prior.nu)) * (s1 / n - prior.mu) ** 2 / 2.0)
    return NormalGammaParams(mu, nu, alpha, beta)


def normal_gamma_posterior_arrays(mu0, nu0, alpha0, beta0, counts, sum1, sum2):
    """Vectorized conjugate update: counts (..., M), sums (..., M, D).

    Returns (mu (...,M,D), nu (...,M), alpha (...,M), beta (...,M,D)).
    Accepts Tensors for counts/sums (the neural-statistics path); plain
    ndarrays take the exact empty-cluster branch.
    """
    if ad.is_tensor(counts) or ad.is_tensor(sum1) or ad.is_tensor(sum2):
        n = ad.clip_min(counts, _EMPTY_CLUSTER_EPS)
        n_e = ad.reshape(n, ad.value_of(n).shape + (1,))
        alpha = ad.add(alpha0, ad.mul(n, 0.5))
        nu = ad.add(nu0, n)
        mu = ad.div(ad.add(mu0 * nu0, sum1), ad.add(nu0, n_e))
        xbar = ad.div(sum1, n_e)
        ss = ad.sub(sum2, ad.div(ad.square(sum1), n_e))
        shrink = ad.div(ad.mul(n_e, nu0), ad.add(n_e, nu0))
        beta = ad.add(beta0, ad.add(ad.mul(ss, 0.5),
                                    ad.mul(shrink, ad.mul(ad.square(ad.sub(xbar, mu0)), 0.5))))
        return mu, nu, alpha, beta
    counts = np.asarray(counts, float)
    sum1 = np.asarray(sum1, float)
    sum2 = np.asarray(sum2, float)
    n = counts[..., None]
    empty = n < _EMPTY_CLUSTER_EPS
    n_safe = np.where(empty, 1.0, n)
    alpha = alpha0 + counts / 2.0
    nu = nu0 + counts
    mu = (mu0 * nu0 + sum1) / (nu0 + n)
    ss = sum2 - sum1 ** 2 / n_safe
    shrink = n * nu0 / (n + nu0)
    beta = beta0 + 0.5 * ss + shrink * (sum1 / n_safe - mu0) ** 2 / 2.0
    mu = np.where(empty, mu0, mu)
    beta = np.where(empty, beta0, beta)
    alpha = np.where(empty[..., 0], alpha0, alpha)
    nu = np.where(empty[..., 0], nu0, nu)
    return mu, nu, alpha, beta


def normal_gamma_marginal_loglik(prior: NormalGammaParams, counts, sum1, sum2):
    """log of the marginal likelihood of data summarized by the statistics.

    For the conjugate pair this is the ratio of posterior to prior
    normalizers times (2 pi)^(-n/2) per coordinate.
    """
    post = normal_gamma_posterior(prior, counts, sum1, sum2)
    lz_post = normal_gamma_log_normalizer(post.nu, post.alpha, post.beta)
    lz_prior = normal_gamma_log_normalizer(prior.nu, prior.alpha, prior.beta)
    return float(np.sum(lz_post - lz_prior) - prior.dim * counts / 2.0 * LOG_2PI)


# ---------------------------------------------------------------------------
# generic parameter container with natural/canonical duality
# ---------------------------------------------------------------------------


@dataclass
class ExpFamParams:
    """One distribution: family tag + canonical vector (natural cached)."""
    family: Family
    canonical: np.ndarray
    _natural: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.canonical = np.asarray(self.canonical, dtype=float).ravel()
        self.validate()

    # -- layout helpers -------------------------------------------------

    @property
    def dim(self) -> int:
        n = self.canonical.shape[0]
        if self.family in (Family.DIAG_NORMAL, Family.GAMMA, Family.BETA):
            return n // 2
        if self.family is Family.NORMAL_GAMMA:
            return (n - 2) // 2
        return n

    def split(self):
        c, d = self.canonical, self.dim
        if self.family is Family.DIAG_NORMAL:
            return c[:d], c[d:]
        if self.family in (Family.GAMMA, Family.BETA):
            return c[:d], c[d:]
        if self.family is Family.NORMAL_GAMMA:
            return c[:d], c[d:2 * d], c[2 * d], c[2 * d + 1]
        return (c,)

    def validate(self):
        c = self.canonical
        if not np.all(np.isfinite(c)):
            raise DomainError(f"{self.family}: non-finite canonical parameters")
        if self.family is Family.DIAG_NORMAL:
            _, sigma = self.split()
            if np.any(sigma <= 0):
                raise DomainError("DiagNormal: sigma must be positive")
        elif self.family in (Family.GAMMA, Family.BETA):
            a, b = self.split()
            if np.any(a <= 0) or np.any(b <= 0):
                raise DomainError(f"{self.family}: shapes must be positive")
        elif self.family is Family.NORMAL_GAMMA:
            _, beta, nu, alpha = self.split()
            if nu <= 0 or alpha <= 0 or np.any(beta <= 0):
                raise DomainError("NormalGamma: nu, alpha, beta must be positive")
        elif self.family is Family.CATEGORICAL:
            if np.any(c < 0) or abs(c.sum() - 1.0) > 1e-12:
                raise DomainError("Categorical: probabilities must be >= 0 and sum to 1")
        elif self.family is Family.BERNOULLI:
            if np.any(c <= 0) or np.any(c >= 1):
                raise DomainError("Bernoulli: p must lie in (0,1)")

    # -- natural <-> canonical -------------------------------------------

    @property
    def natural(self) -> np.ndarray:
        if self._natural is None:
            self._natural = canonical_to_natural(self.family, self.canonical)
        return self._natural


def canonical_to_natural(family: Family, canonical) -> np.ndarray:
    c = np.asarray(canonical, dtype=float).ravel()
    if family is Family.DIAG_NORMAL:
        d = c.shape[0] // 2
        mu, sigma = c[:d], c[d:]
        return np.concatenate([mu / sigma ** 2, -0.5 / sigma ** 2])
    if family is Family.GAMMA:
        d = c.shape[0] // 2
        return np.concatenate([c[:d] - 1.0, -c[d:]])
    if family is Family.BETA:
        d = c.shape[0] // 2
        return np.concatenate([c[:d] - 1.0, c[d:] - 1.0])
    if family is Family.CATEGORICAL:
        return np.log(c)
    if family is Family.BERNOULLI:
        return np.log(c) - np.log1p(-c)
    if family is Family.NORMAL_GAMMA:
        d = (c.shape[0] - 2) // 2
        mu, beta, nu, alpha = c[:d], c[d:2 * d], c[2 * d], c[2 * d + 1]
        return np.concatenate([nu * mu, -beta - nu * mu ** 2 / 2.0,
                               [-nu / 2.0, alpha - 0.5]])
    raise FamilyMismatchError(f"unknown family {family}")


def natural_to_canonical(family: Family, natural) -> np.ndarray:
    n = np.asarray(natural, dtype=float).ravel()
    if family is Family.DIAG_NORMAL:
        d = n.shape[0] // 2
        sigma2 = -0.5 / n[d:]
        return np.concatenate([n[:d] * sigma2, np.sqrt(sigma2)])
    if family is Family.GAMMA:
        d = n.shape[0] // 2
        return np.concatenate([n[:d] + 1.0, -n[d:]])
    if family is Family.BETA:
        d = n.shape[0] // 2
        return np.concatenate([n[:d] + 1.0, n[d:] + 1.0])
    if family is Family.CATEGORICAL:
        e = np.exp(n - n.max())
        return e / e.sum()
    if family is Family.BERNOULLI:
        return sp_special.expit(n)
    if family is Family.NORMAL_GAMMA:
        d = (n.shape[0] - 2) // 2
        nu = -2.0 * n[2 * d]
        alpha = n[2 * d + 1] + 0.5
        mu = n[:d] / nu
        beta = -n[d:2 * d] - nu * mu ** 2 / 2.0
        return np.concatenate([mu, beta, [nu, alpha]])
    raise FamilyMismatchError(f"unknown family {family}")


def from_natural(family: Family, natural) -> ExpFamParams:
    return ExpFamParams(family, natural_to_canonical(family, natural))


# ---------------------------------------------------------------------------
# the single-distribution operations
# ---------------------------------------------------------------------------


def log_prob(params: ExpFamParams, value) -> float:
    """Exact log-density of `value` under `params` (sums coordinates)."""
    f = params.family
    if f is Family.CATEGORICAL:
        k = int(np.asarray(value).item() if np.ndim(value) else value)
        pi = params.canonical
        if not 0 <= k < pi.shape[0]:
            raise DomainError(f"class {k} outside 0..{pi.shape[0] - 1}")
        return float(np.log(pi[k]))
    v = np.asarray(value, dtype=float).ravel()
    if f is Family.DIAG_NORMAL:
        mu, sigma = params.split()
        return float(np.sum(diag_normal_log_prob(v, mu, sigma)))
    if f is Family.GAMMA:
        a, b = params.split()
        if np.any(v <= 0):
            raise DomainError("Gamma support is (0, inf)")
        return float(np.sum(gamma_log_prob(v, a, b)))
    if f is Family.BETA:
        a, b = params.split()
        if np.any(v <= 0) or np.any(v >= 1):
            raise DomainError("Beta support is (0, 1)")
        return float(np.sum(beta_log_prob(v, a, b)))
    if f is Family.BERNOULLI:
        if not np.all((v == 0) | (v == 1)):
            raise DomainError("Bernoulli support is {0, 1}")
        return float(np.sum(bernoulli_log_prob(v, params.canonical)))
    if f is Family.NORMAL_GAMMA:
        mu, beta, nu, alpha = params.split()
        d = params.dim
        mu_val, tau = v[:d], v[d:]
        if np.any(tau <= 0):
            raise DomainError("NormalGamma precision must be positive")
        return float(np.sum(normal_gamma_log_prob(mu_val, tau, mu, nu, alpha, beta)))
    raise FamilyMismatchError(f"unknown family {f}")


def sample(params: ExpFamParams, rng: np.random.Generator):
    """Draw one value (same layout as `log_prob` expects)."""
    f = params.family
    if f is Family.DIAG_NORMAL:
        mu, sigma = params.split()
        return sample_diag_normal(rng, mu, sigma)
    if f is Family.GAMMA:
        a, b = params.split()
        return sample_gamma(rng, a, b)
    if f is Family.BETA:
        a, b = params.split()
        return sample_beta(rng, a, b)
    if f is Family.CATEGORICAL:
        return int(sample_categorical(rng, params.canonical))
    if f is Family.BERNOULLI:
        return (rng.random(params.canonical.shape) < params.canonical).astype(float)
    if f is Family.NORMAL_GAMMA:
        mu, beta, nu, alpha = params.split()
        mu_val, tau = sample_normal_gamma(rng, mu, nu, alpha, beta)
        return np.concatenate([mu_val, tau])
    raise FamilyMismatchError(f"unknown family {f}")


def kl_divergence(p: ExpFamParams, q: ExpFamParams) -> float:
    """Closed-form KL(p || q); requires matching family and dimension."""
    if p.family is not q.family:
        raise FamilyMismatchError(f"KL across families {p.family} vs {q.family}")
    if p.canonical.shape != q.canonical.shape:
        raise FamilyMismatchError("KL across mismatched dimensions")
    f = p.family
    if f is Family.CATEGORICAL:
        return float(categorical_kl(p.canonical, q.canonical))
    if f is Family.DIAG_NORMAL:
        m1, s1 = p.split()
        m2, s2 = q.split()
        return float(np.sum(diag_normal_kl(m1, s1, m2, s2)))
    if f is Family.GAMMA:
        a1, b1 = p.split()
        a2, b2 = q.split()
        return float(np.sum(gamma_kl(a1, b1, a2, b2)))
    if f is Family.BETA:
        a1, b1 = p.split()
        a2, b2 = q.split()
        return float(np.sum(beta_kl(a1, b1, a2, b2)))
    if f is Family.BERNOULLI:
        return float(np.sum(bernoulli_kl(p.canonical, q.canonical)))
    if f is Family.NORMAL_GAMMA:
        mu1, beta1, nu1, alpha1 = p.split()
        mu2, beta2, nu2, alpha2 = q.split()
        return float(np.sum(normal_gamma_kl(mu1, nu1, alpha1, beta1,
                                            mu2, nu2, alpha2, beta2)))
    raise FamilyMismatchError(f"unknown family {f}")
