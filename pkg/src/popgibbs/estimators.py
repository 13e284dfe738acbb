"""Self-normalized gradient estimators and expectations.

The proposal-parameter estimator weights per-particle score terms
``grad log q(z_b | x, z_-b)`` by softmax-normalized importance weights; the
model-parameter estimator does the same with ``grad log p(x, z)``.  Weights
enter as constants (score-function form): they are computed in plain numpy
and never appear in the autodiff graph.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .smc import DegenerateWeightsError, normalized_weights


def snis_expectation(log_weights, values, axis=-1):
    """Self-normalized importance-sampling estimate sum(softmax(lw) * f)."""
    lw = np.asarray(log_weights, dtype=float)
    if np.any(np.all(np.isneginf(lw), axis=axis)):
        raise DegenerateWeightsError("degenerate weights in SNIS estimate")
    return np.sum(normalized_weights(lw, axis=axis) * np.asarray(values), axis=axis)


class GradSink:
    """Accumulates score-function gradients into the two parameter stores.

    Each `add_*` call backpropagates the batch-mean of per-instance weighted
    score sums; the parameter tensors' grad buffers do the accumulation, in
    call order, so results are deterministic given the seed.  `n_batches`
    counts optimizer-step batches for optional downstream averaging.
    """

    def __init__(self, phi_store=None, theta_store=None):
        self.phi_store = phi_store
        self.theta_store = theta_store
        self.phi_terms = 0
        self.theta_terms = 0

    def _weighted_scalar(self, node, log_weights):
        # negated: optimizer steps subtract gradients, while the objectives
        # (inclusive KL for the proposals, marginal likelihood for the model)
        # are driven by ascending the weighted score
        wbar = normalized_weights(np.asarray(log_weights, dtype=float))
        assert isinstance(wbar, np.ndarray)  # weights stay out of the graph
        n_instances = wbar.shape[0] if wbar.ndim > 1 else 1
        return ad.div(ad.sum(ad.mul(node, wbar)), -float(n_instances))

    def add_phi(self, node, log_weights):
        """Accumulate sum_l wbar^l grad_phi log q(z^l_b | x, z^l_-b)."""
        if node is None:
            return
        ad.backward(self._weighted_scalar(node, log_weights), 1.0)
        self.phi_terms += 1

    def add_theta(self, node, log_weights):
        """Accumulate sum_l wbar^l grad_theta log p(x, z^l)."""
        if node is None:
            return
        ad.backward(self._weighted_scalar(node, log_weights), 1.0)
        self.theta_terms += 1


def rws_grad_phi(encoder, model, x, n_particles, rng, sink: GradSink):
    """One-shot-proposal score estimator (the standard reweighted objective).

    Draws L particles from the encoder, weighs them by p(x,z)/q(z|x), and
    accumulates the weighted encoder score into the sink.  Returns the
    weighted samples for reuse.
    """
    state, log_q, node = encoder.propose(x, n_particles, rng, want_grad=True)
    log_w = model.log_joint(x, state) - log_q
    sink.add_phi(node, log_w)
    return state, log_w


def apg_grad_phi_block(kernel, x, state, values, log_weights, sink: GradSink):
    """Score estimator for one block kernel at given (post-update) weights."""
    node = kernel.log_density_node(x, state, values)
    sink.add_phi(node, log_weights)


def grad_theta(model, x, state, log_weights, sink: GradSink):
    """Model-score estimator; no-op for models without learnable parameters."""
    node = model.log_joint_node(x, state)
    if node is None:
        return
    sink.add_theta(node, log_weights)
