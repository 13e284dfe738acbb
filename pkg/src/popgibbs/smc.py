"""Model-agnostic population-sampler machinery.

Particle systems over blocked latent states, log-weight algebra, effective
sample size, multinomial resampling, incremental weights for forward/reverse
kernel moves, and the sweep loop that iterates conditional block proposals.

Shape conventions: every latent array carries two leading axes ``(I, L)`` for
the instance batch and the particle population; log-weights are ``(I, L)``.
All weight arithmetic is done in log space (weight products over many sweeps
underflow linear space).  Resampling draws ancestors with a single sorted
uniform batch per call, so runs are deterministic given the generator.

Per-particle proposals are embarrassingly parallel; this implementation is
single-process and keeps determinism by doing every reduction in fixed index
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateWeightsError(ValueError):
    """Every particle in some row carries zero weight."""


def gather_particles(arr: np.ndarray, ancestors: np.ndarray) -> np.ndarray:
    """arr (I, L, ...) indexed along axis 1 by ancestors (I, L).

    Flat row indexing: one contiguous copy per output row, cheaper than a
    broadcast take_along_axis."""
    n_i, n_l = ancestors.shape
    flat = arr.reshape((n_i * n_l,) + arr.shape[2:])
    idx = (ancestors + (np.arange(n_i) * n_l)[:, None]).ravel()
    return flat[idx].reshape(arr.shape)


# ---------------------------------------------------------------------------
# log-weight algebra
# ---------------------------------------------------------------------------


def log_sum_exp(lw, axis=-1, keepdims=False):
    lw = np.asarray(lw, dtype=float)
    m = np.max(lw, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(lw - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def log_mean_exp(lw, axis=-1, keepdims=False):
    lw = np.asarray(lw, dtype=float)
    n = lw.shape[axis]
    return log_sum_exp(lw, axis=axis, keepdims=keepdims) - np.log(n)


def normalized_weights(lw, axis=-1):
    """softmax of log-weights along `axis`."""
    lw = np.asarray(lw, dtype=float)
    m = np.max(lw, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(lw - m)
    return e / e.sum(axis=axis, keepdims=True)


def ess(log_weights, axis=-1):
    """Effective sample size (sum w)^2 / sum w^2, in [1, L].

    Computed in log space via log-sum-exp.
    """
    lw = np.asarray(log_weights, dtype=float)
    if np.any(np.all(np.isneginf(lw), axis=axis)):
        raise DegenerateWeightsError("all log-weights are -inf")
    return np.exp(2.0 * log_sum_exp(lw, axis=axis) - log_sum_exp(2.0 * lw, axis=axis))


# ---------------------------------------------------------------------------
# latent states and particle systems
# ---------------------------------------------------------------------------


class LatentState:
    """Blocked latent assignment as a dict of named arrays.

    Each array has leading axes (I, L); block membership of the keys is
    defined by the model (`block_keys`).  States are value-semantic:
    mutating ops return new instances sharing unchanged arrays.
    """

    __slots__ = ("values",)

    def __init__(self, values: dict):
        self.values = dict(values)

    def __getitem__(self, key):
        return self.values[key]

    def __contains__(self, key):
        return key in self.values

    def keys(self):
        return self.values.keys()

    def replace(self, **updates) -> "LatentState":
        new = dict(self.values)
        new.update(updates)
        return LatentState(new)

    def gather(self, ancestors: np.ndarray) -> "LatentState":
        """Select particles by (I, L) ancestor indices along axis 1."""
        return LatentState({k: gather_particles(v, ancestors)
                            for k, v in self.values.items()})

    def copy(self) -> "LatentState":
        return LatentState({k: v.copy() for k, v in self.values.items()})


@dataclass
class ParticleSystem:
    """L weighted latent states per instance, conditioned on one batch."""
    state: LatentState
    log_weight: np.ndarray            # (I, L)
    sweep: int = 1
    ancestry: list = field(default_factory=list)   # ancestor index arrays

    @property
    def n_particles(self) -> int:
        return self.log_weight.shape[1]

    def ess(self):
        return ess(self.log_weight)


class Model:
    """Base for generative models: bookkeeping for log-joint evaluations.

    Subclasses implement `log_joint(x, state) -> (I, L)` and declare
    `block_order` / `block_keys`.  Models with learnable parameters also
    implement `log_joint_node` returning an autodiff Tensor.
    """

    block_order: tuple = ()
    block_keys: dict = {}
    has_theta: bool = False

    def __init__(self):
        self.eval_rows = 0   # cumulative (instance, particle) log-joint evaluations

    def count(self, log_weight_shape):
        self.eval_rows += int(np.prod(log_weight_shape))

    def log_joint(self, x, state):  # pragma: no cover - interface
        raise NotImplementedError

    def log_joint_node(self, x, state):
        return None


# ---------------------------------------------------------------------------
# resampling (multinomial, Algorithm style: unconditional, mean re-weigh)
# ---------------------------------------------------------------------------


def multinomial_ancestors(log_weight: np.ndarray, rng: np.random.Generator):
    """Draw (I, L) ancestor indices with probability proportional to weight.

    Inverse-CDF with one sorted uniform batch per row: O(L log L) and
    deterministic given the generator.  The returned indices are sorted per
    row; the multinomial law of ancestor counts is unchanged.
    """
    lw = np.atleast_2d(np.asarray(log_weight, dtype=float))
    if np.any(np.all(np.isneginf(lw), axis=-1)):
        raise DegenerateWeightsError("cannot resample: all weights zero")
    n_rows, L = lw.shape
    w = normalized_weights(lw)
    cum = np.cumsum(w, axis=-1)
    cum[:, -1] = 1.0
    u = np.sort(rng.random((n_rows, L)), axis=-1)
    # flatten rows onto a strictly increasing global axis, then one searchsorted
    offs = 2.0 * np.arange(n_rows)[:, None]
    idx = np.searchsorted(np.ravel(cum + offs), np.ravel(u + offs))
    anc = idx.reshape(n_rows, L) - np.arange(n_rows)[:, None] * L
    return np.minimum(anc, L - 1).astype(np.int64).reshape(np.shape(log_weight))


def multinomial_resample(system: ParticleSystem, rng: np.random.Generator,
                         extras: list | None = None) -> ParticleSystem:
    """Select L ancestors proportionally to weight; set every new weight to
    the mean incoming weight (log-mean-exp in log space).

    `extras` is an optional list of (I, L) arrays to permute consistently
    (cached log-joints and the like); permuted copies are returned via the
    same list.
    """
    anc = multinomial_ancestors(system.log_weight, rng)
    new_state = system.state.gather(anc)
    new_lw = np.broadcast_to(
        log_mean_exp(system.log_weight, axis=-1, keepdims=True),
        system.log_weight.shape).copy()
    if extras is not None:
        for i, arr in enumerate(extras):
            extras[i] = gather_particles(arr, anc)
    out = ParticleSystem(new_state, new_lw, system.sweep,
                         system.ancestry + [anc])
    return out


# ---------------------------------------------------------------------------
# kernel moves
# ---------------------------------------------------------------------------


@dataclass
class Proposal:
    """One block proposal: new values, their log-density, optional AD node.

    `scorer`, when set, evaluates the proposal density of other values under
    the same conditioning without recomputing it (kernels whose conditioning
    set is untouched by their own update can always provide one)."""
    values: dict
    log_q: np.ndarray
    node: object = None
    scorer: object = None


def incremental_log_weight(model: Model, x, state: LatentState, kernel,
                           old_values: dict, new_values: dict,
                           log_q_new=None, log_joints=None):
    """log v for a forward/reverse move of one block.

    v = p(x, z'_b, z_-b) q(z_b | x, z_-b) / [p(x, z_b, z_-b) q(z'_b | x, z_-b)]

    computed entirely in log space.  `log_q_new` and `log_joints` (a pair
    (lj_old, lj_new)) can be supplied to reuse cached evaluations; when
    omitted everything is recomputed.
    """
    state_old = state.replace(**old_values)
    state_new = state.replace(**new_values)
    if log_joints is None:
        lj_old = model.log_joint(x, state_old)
        lj_new = model.log_joint(x, state_new)
    else:
        lj_old, lj_new = log_joints
    if np.any(np.isneginf(lj_old) & np.isneginf(lj_new)):
        raise DegenerateWeightsError("log-joint is -inf for both endpoints of a move")
    lq_old = kernel.log_density(x, state_new, old_values)
    lq_new = kernel.log_density(x, state_old, new_values) if log_q_new is None \
        else log_q_new
    return (lj_new - lj_old) + (lq_old - lq_new)


def apg_sweep(x, system: ParticleSystem, model: Model, kernels: dict,
              rng: np.random.Generator, grad_sink=None, resample: str = "always",
              ess_threshold: float = 0.5, cached_lj=None, trace=None):
    """One sweep of conditional block updates (resample, propose, re-weigh).

    `kernels` maps block name -> kernel; blocks run in `model.block_order`.
    If `grad_sink` is given, the proposal-score and model-score estimators
    are accumulated after each block from the post-update weights.
    `resample` is "always" (default), "never", or "ess" (threshold on
    ESS/L).  Returns (system, cached log-joint of the final state).
    """
    lj = model.log_joint(x, system.state) if cached_lj is None else cached_lj
    for block in model.block_order:
        kernel = kernels[block]
        do_resample = resample == "always" or (
            resample == "ess" and np.any(ess(system.log_weight) <
                                         ess_threshold * system.n_particles))
        if do_resample:
            extras = [lj]
            system = multinomial_resample(system, rng, extras)
            lj = extras[0]
        state = system.state
        prop = kernel.propose(x, state, rng, want_grad=grad_sink is not None)
        new_state = state.replace(**prop.values)
        lj_new = model.log_joint(x, new_state)
        # reverse kernel conditions on the post-update state (identical for
        # plain conditional kernels; required for joint-block kernels)
        old_values = {k: state[k] for k in prop.values}
        lq_old = prop.scorer(old_values) if prop.scorer is not None \
            else kernel.log_density(x, new_state, old_values)
        log_v = (lj_new - lj) + (lq_old - prop.log_q)
        if trace is not None:
            trace.append({"kind": "block", "block": block,
                          "state_before": state, "values_new": dict(prop.values),
                          "log_v": log_v.copy()})
        system = ParticleSystem(new_state, system.log_weight + log_v,
                                system.sweep, system.ancestry)
        lj = lj_new
        if grad_sink is not None:
            grad_sink.add_phi(prop.node, system.log_weight)
            if model.has_theta:
                grad_sink.add_theta(model.log_joint_node(x, new_state),
                                    system.log_weight)
    system.sweep += 1
    return system, lj


def apg_run(x, model: Model, encoder, kernels: dict, n_sweeps: int,
            n_particles: int, rng: np.random.Generator, grad_sink=None,
            resample: str = "always", trace=None, extra_metric=None):
    """Full sampler: one-shot encoder proposal, then n_sweeps - 1 sweeps.

    Sweep 1 is plain importance sampling from the encoder with
    w = p(x, z) / q(z | x); subsequent sweeps apply the block kernels.
    Returns (system, metrics) where metrics has one row per sweep with the
    self-normalized log-joint estimate and ESS per instance; `extra_metric`
    (system -> dict of per-instance arrays) extends each row.
    """
    if n_sweeps < 1 or n_particles < 1:
        raise ValueError("need n_sweeps >= 1 and n_particles >= 1")
    state, log_q, node = encoder.propose(x, n_particles, rng,
                                         want_grad=grad_sink is not None)
    lj = model.log_joint(x, state)
    log_w = lj - log_q
    system = ParticleSystem(state, log_w, sweep=1)
    if trace is not None:
        trace.append({"kind": "init", "state": state, "log_q": log_q.copy(),
                      "log_joint": lj.copy()})
    if grad_sink is not None:
        grad_sink.add_phi(node, log_w)
        if model.has_theta:
            grad_sink.add_theta(model.log_joint_node(x, state), log_w)
    metrics = [sweep_metrics(1, log_w, lj, system, extra_metric)]
    for _ in range(2, n_sweeps + 1):
        system, lj = apg_sweep(x, system, model, kernels, rng,
                               grad_sink=grad_sink, resample=resample,
                               cached_lj=lj, trace=trace)
        metrics.append(sweep_metrics(system.sweep, system.log_weight, lj,
                                     system, extra_metric))
    return system, metrics


def sweep_metrics(sweep: int, log_weight, log_joint, system=None,
                  extra_metric=None):
    wbar = normalized_weights(log_weight)
    row = {"sweep": sweep,
           "log_joint": np.sum(wbar * log_joint, axis=-1),
           "ess": ess(log_weight)}
    if extra_metric is not None and system is not None:
        row.update(extra_metric(system))
    return row
