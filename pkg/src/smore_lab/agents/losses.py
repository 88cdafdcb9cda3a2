"""Loss functions returning ``(loss, parameter_grads)`` for a single network.

Every function takes the network being trained plus a batch of precomputed
inputs and stop-gradient targets, so each can be checked in isolation with
:func:`smore_lab.nn.gradient_check`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import DenseNet, backward, forward

AWR_WEIGHT_CLIP = 100.0
REWARD_CLIP = 10.0


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def awr_weights(advantage, temperature: float, clip: float = AWR_WEIGHT_CLIP) -> np.ndarray:
    """``min(exp(temperature * advantage), clip)``."""
    adv = np.asarray(advantage, dtype=np.float64)
    return np.minimum(np.exp(np.minimum(temperature * adv, np.log(clip) + 1.0)), clip)


def weighted_log_likelihood_loss(net: DenseNet, batch):
    """``-mean(w * log pi(a|x))``; ``batch = (x, actions, weights)``.

    With unit weights this is behavior cloning; with advantage weights it is
    the policy-extraction step of advantage-weighted regression.
    """
    x, actions, weights = batch
    logits, cache = forward(net, x, keep_cache=True)
    logp = log_softmax(logits)
    n = len(actions)
    rows = np.arange(n)
    w = np.asarray(weights, dtype=net.dtype)
    loss = -float(np.mean(w * logp[rows, actions]))
    probs = np.exp(logp)
    upstream = probs * w[:, None]
    upstream[rows, actions] -= w
    grads, _ = backward(net, cache, upstream / n)
    return loss, grads


def expectile_loss(net: DenseNet, batch):
    """Asymmetric square loss fitting the upper ``tau``-expectile of ``targets``.

    ``batch = (x, targets, tau)``. Residuals ``targets - net(x)`` above zero are
    weighted by ``tau``, the rest by ``1 - tau``.
    """
    x, targets, tau = batch
    out, cache = forward(net, x, keep_cache=True)
    diff = np.asarray(targets, dtype=net.dtype).reshape(-1) - out[:, 0]
    weight = np.where(diff > 0, tau, 1.0 - tau).astype(net.dtype)
    loss = float(np.mean(weight * diff * diff))
    upstream = (-2.0 * weight * diff / len(diff))[:, None]
    grads, _ = backward(net, cache, upstream)
    return loss, grads


def regression_loss(net: DenseNet, batch):
    """``mean((net(x) - y)^2)`` on a scalar head; ``batch = (x, y)``."""
    x, y = batch
    out, cache = forward(net, x, keep_cache=True)
    diff = out[:, 0] - np.asarray(y, dtype=net.dtype).reshape(-1)
    grads, _ = backward(net, cache, (2.0 * diff / len(diff))[:, None])
    return float(np.mean(diff * diff)), grads


def logistic_loss(net: DenseNet, batch):
    """Binary cross-entropy on logits; ``batch = (x, labels)`` with labels in {0, 1}."""
    x, labels = batch
    logits, cache = forward(net, x, keep_cache=True)
    z = logits[:, 0]
    y = np.asarray(labels, dtype=net.dtype)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    grads, _ = backward(net, cache, ((sig - y) / len(z))[:, None])
    return loss, grads


@dataclass
class ScoreBatch:
    """Inputs for the score update.

    ``x_init``  dataset ``(s, pi(s), g)`` rows (dataset states act as ``d0``)
    ``x_next``  goal-transition ``(s', pi(s'), g)`` rows
    ``x_q``     goal-transition ``(s, a, g)`` rows
    ``x_rho``   dataset ``(s, a, g)`` rows
    ``target_q`` / ``target_rho``  stop-gradient ``gamma * M(s', g)`` for the two batches
    """

    x_init: np.ndarray
    x_next: np.ndarray
    x_q: np.ndarray
    x_rho: np.ndarray
    target_q: np.ndarray
    target_rho: np.ndarray
    beta: float
    gamma: float


def score_loss(net: DenseNet, batch: ScoreBatch):
    """Contrastive score objective with a unit-weight Bellman regularizer.

    ``beta (1-gamma) E_rho[S(s,pi,g)] + beta gamma E_q[S(s',pi,g)] - beta E_q[S(s,a,g)]
    + beta E_q[(gamma M - S)^2] + (1-beta) E_rho[(gamma M - S)^2]``
    """
    parts = (batch.x_init, batch.x_next, batch.x_q, batch.x_rho)
    sizes = [len(p) for p in parts]
    out, cache = forward(net, np.concatenate(parts), keep_cache=True)
    o_init, o_next, o_q, o_rho = np.split(out[:, 0], np.cumsum(sizes)[:-1])
    beta, gamma = batch.beta, batch.gamma
    r_q = batch.target_q - o_q
    r_rho = batch.target_rho - o_rho
    loss = (beta * (1.0 - gamma) * o_init.mean() + beta * gamma * o_next.mean()
            - beta * o_q.mean() + beta * np.mean(r_q * r_q) + (1.0 - beta) * np.mean(r_rho * r_rho))
    upstream = np.concatenate([
        np.full(sizes[0], beta * (1.0 - gamma) / sizes[0]),
        np.full(sizes[1], beta * gamma / sizes[1]),
        -beta / sizes[2] - 2.0 * beta * r_q / sizes[2],
        -2.0 * (1.0 - beta) * r_rho / sizes[3],
    ]).astype(net.dtype)
    grads, _ = backward(net, cache, upstream[:, None])
    return float(loss), grads


def chi2_positive_conjugate(y):
    """``max_{w>=0} w y - (w-1)^2``: ``y + y^2/4`` for ``y >= -2`` and ``-1`` below."""
    y = np.asarray(y)
    return np.where(y >= -2.0, y + 0.25 * y * y, -1.0)


@dataclass
class ValueBatch:
    """Inputs for the discriminator-reward value update (all rows ``(s, g)`` encoded)."""

    x_init: np.ndarray
    x_s: np.ndarray
    x_next: np.ndarray
    reward: np.ndarray
    gamma: float


def dual_value_loss(net: DenseNet, batch: ValueBatch):
    """``(1-gamma) E[V(s0,g)] + E[f*_+(R + gamma V(s',g) - V(s,g))]`` with full gradients."""
    parts = (batch.x_init, batch.x_s, batch.x_next)
    sizes = [len(p) for p in parts]
    out, cache = forward(net, np.concatenate(parts), keep_cache=True)
    v_init, v_s, v_next = np.split(out[:, 0], np.cumsum(sizes)[:-1])
    gamma = batch.gamma
    y = batch.reward + gamma * v_next - v_s
    loss = (1.0 - gamma) * v_init.mean() + np.mean(chi2_positive_conjugate(y))
    weight = np.maximum(0.0, y / 2.0 + 1.0)  # derivative of the conjugate
    n = sizes[1]
    upstream = np.concatenate([
        np.full(sizes[0], (1.0 - gamma) / sizes[0]),
        -weight / n,
        gamma * weight / n,
    ]).astype(net.dtype)
    grads, _ = backward(net, cache, upstream[:, None])
    return float(loss), grads
