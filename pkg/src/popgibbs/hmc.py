"""Hamiltonian Monte Carlo with leapfrog integration.

Powers the encoder-plus-HMC baseline: particles proposed by a one-shot
encoder are refined by K Metropolis-adjusted HMC updates on the continuous
blocks (in unconstrained coordinates), with discrete blocks refreshed from
their exact conditionals where the model provides them.

Chains are vectorized over rows: positions are (R, D) flat arrays and the
target returns per-row log-densities and gradients.  Step sizes default to
dual-averaging warmup toward a 0.65 acceptance rate, frozen after warmup.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class HmcConfig:
    step_size: float = 0.1
    leapfrog_steps: int = 5
    mass: float = 1.0
    adapt: bool = True
    target_accept: float = 0.65
    warmup_fraction: float = 0.5

    def __post_init__(self):
        if self.step_size <= 0 or self.leapfrog_steps < 1 or self.mass <= 0:
            raise ValueError("need step_size > 0, leapfrog_steps >= 1, mass > 0")


class DualAveraging:
    """Nesterov dual averaging on log step size (standard constants)."""

    def __init__(self, step0: float, target: float = 0.65, gamma: float = 0.05,
                 t0: float = 10.0, kappa: float = 0.75):
        self.mu = np.log(10.0 * step0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.t = 0
        self.h_bar = 0.0
        self.log_step_bar = np.log(step0)
        self.log_step = np.log(step0)

    def update(self, accept_rate: float) -> float:
        self.t += 1
        frac = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - frac) * self.h_bar + frac * (self.target - accept_rate)
        self.log_step = self.mu - np.sqrt(self.t) / self.gamma * self.h_bar
        eta = self.t ** (-self.kappa)
        self.log_step_bar = eta * self.log_step + (1 - eta) * self.log_step_bar
        return float(np.exp(self.log_step))

    @property
    def frozen_step(self) -> float:
        return float(np.exp(self.log_step_bar))


def leapfrog(logp_and_grad, q, p, step_size: float, n_steps: int,
             mass: float = 1.0, grad=None):
    """n_steps of the leapfrog integrator; volume-preserving and reversible.

    q, p are (R, D); `grad` may carry the gradient at q to avoid one
    evaluation.  Returns (q', p', logp', grad', diverged).  A non-finite
    gradient at the *entry* position is a caller error and raises; rows
    that blow up *during* integration are frozen and flagged so the accept
    step can reject them (standard divergence handling).
    """
    if grad is None:
        _, grad = logp_and_grad(q)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient entering leapfrog")
    q0 = q
    q = q.copy()
    diverged = np.zeros(q.shape[0], dtype=bool)
    p = p + 0.5 * step_size * grad
    logp = np.full(q.shape[0], -np.inf)
    for i in range(n_steps):
        q += step_size * p / mass
        bad = ~np.isfinite(q).all(axis=1)
        q[bad] = q0[bad]
        logp, grad = logp_and_grad(q)
        bad |= ~np.isfinite(grad).all(axis=1) | ~np.isfinite(logp)
        diverged |= bad
        if np.any(diverged):
            q[diverged] = q0[diverged]
            p[diverged] = 0.0
            grad[diverged] = 0.0
        p = p + (0.5 if i == n_steps - 1 else 1.0) * step_size * grad
    logp = np.where(diverged, -np.inf, logp)
    return q, p, logp, grad, diverged


def hmc_step(logp_and_grad, q, logp, grad, config: HmcConfig,
             rng: np.random.Generator):
    """One momentum refresh + leapfrog + Metropolis accept/reject per row.

    Returns (q, logp, grad, accept_fraction)."""
    n_rows, dim = q.shape
    p0 = rng.standard_normal((n_rows, dim)) * np.sqrt(config.mass)
    q1, p1, logp1, grad1 = leapfrog(logp_and_grad, q, p0, config.step_size,
                                    config.leapfrog_steps, config.mass,
                                    grad)[:4]
    h0 = -logp + 0.5 * (p0 * p0).sum(axis=1) / config.mass
    h1 = -logp1 + 0.5 * (p1 * p1).sum(axis=1) / config.mass
    log_accept = np.minimum(0.0, h0 - h1)       # -inf for diverged rows
    accept = np.log(rng.random(n_rows)) < log_accept
    q = np.where(accept[:, None], q1, q)
    logp = np.where(accept, logp1, logp)
    grad = np.where(accept[:, None], grad1, grad)
    return q, logp, grad, float(accept.mean())


def run_chain(logp_and_grad, q0, n_steps: int, config: HmcConfig,
              rng: np.random.Generator):
    """K HMC updates with optional dual-averaging warmup.

    Returns (q, diagnostics) where diagnostics records per-step acceptance
    and the realized step size."""
    q = np.array(q0, dtype=float)
    logp, grad = logp_and_grad(q)
    cfg = HmcConfig(config.step_size, config.leapfrog_steps, config.mass,
                    config.adapt, config.target_accept, config.warmup_fraction)
    adapter = DualAveraging(cfg.step_size, cfg.target_accept) if cfg.adapt else None
    n_warm = int(np.ceil(cfg.warmup_fraction * n_steps)) if cfg.adapt else 0
    accepts = []
    steps = []
    for k in range(n_steps):
        q, logp, grad, acc = hmc_step(logp_and_grad, q, logp, grad, cfg, rng)
        accepts.append(acc)
        steps.append(cfg.step_size)
        if adapter is not None:
            if k < n_warm:
                cfg.step_size = adapter.update(acc)
            elif k == n_warm:
                cfg.step_size = adapter.frozen_step
    return q, {"accept": np.array(accepts), "step_size": np.array(steps),
               "final_step": cfg.step_size}
