"""Reconstructed baselines: hindsight behavior cloning, sparse-reward IQL, GoFAR-lite."""

from __future__ import annotations

import numpy as np

from .._validation import ValidationError
from ..data import sample_goal_transition, sample_transitions
from .base import GoalConditionedAgent, register
from .losses import (REWARD_CLIP, ValueBatch, awr_weights, dual_value_loss, expectile_loss,
                     logistic_loss, regression_loss, weighted_log_likelihood_loss)


class BaselineAgent(GoalConditionedAgent):
    """Common hyperparameters of the baselines; ``variant`` names the method."""

    variant = ""


@register
class GCSLAgent(BaselineAgent):
    """Maximum-likelihood behavior cloning on hindsight-relabeled goals."""

    variant = "gcsl"

    def __init__(self, her_ratio=0.8, gamma=0.99, batch_size=512, total_steps=50_000,
                 base_lr=3e-4, hidden=(256, 256), log_every=1000, seed=None):
        self.her_ratio = her_ratio
        self.gamma = gamma
        self.batch_size = batch_size
        self.total_steps = total_steps
        self.base_lr = base_lr
        self.hidden = hidden
        self.log_every = log_every
        self.seed = seed

    def _build_nets(self) -> dict:
        return {"policy": self._new_net(self.n_states_ + self.n_goals_, self.n_actions_)}

    def _train_step(self, step: int) -> dict:
        b = sample_transitions(self.dataset_, self.her_ratio, self.batch_size, self.rng_)
        batch = (self._sg(b.s, b.g), b.a, np.ones(len(b.a), dtype=np.float32))
        return {"policy_loss": self._update("policy", weighted_log_likelihood_loss, batch, step)}


@register
class IQLSparseAgent(BaselineAgent):
    """Implicit Q-learning on the sparse reward ``1[phi(s') == g]`` with HER goals.

    ``V(s,g)`` fits the upper expectile of a slowly tracking target copy of
    ``Q``; ``Q`` regresses onto ``r + gamma V(s', g)``; the policy is extracted
    by advantage-weighted regression on ``Q - V``.
    """

    variant = "iql_sparse"

    def __init__(self, expectile=0.8, awr_temperature=3.0, target_update=0.005, her_ratio=0.8,
                 gamma=0.99, batch_size=512, total_steps=50_000, base_lr=3e-4,
                 hidden=(256, 256), log_every=1000, seed=None):
        self.expectile = expectile
        self.awr_temperature = awr_temperature
        self.target_update = target_update
        self.her_ratio = her_ratio
        self.gamma = gamma
        self.batch_size = batch_size
        self.total_steps = total_steps
        self.base_lr = base_lr
        self.hidden = hidden
        self.log_every = log_every
        self.seed = seed

    def _check_params(self) -> None:
        super()._check_params()
        if not 0.0 < self.expectile < 1.0:
            raise ValidationError(f"expectile must lie in (0, 1), got {self.expectile}")
        if not 0.0 < self.target_update <= 1.0:
            raise ValidationError("target_update must lie in (0, 1]")

    def _build_nets(self) -> dict:
        nS, nA, nG = self.n_states_, self.n_actions_, self.n_goals_
        nets = {"q": self._new_net(nS + nA + nG, 1), "v": self._new_net(nS + nG, 1),
                "policy": self._new_net(nS + nG, nA)}
        self.target_q_ = nets["q"].copy()
        return nets

    def _train_step(self, step: int) -> dict:
        b = sample_transitions(self.dataset_, self.her_ratio, self.batch_size, self.rng_)
        x_sag, x_sg = self._sag(b.s, b.a, b.g), self._sg(b.s, b.g)
        q_target = self.target_q_(x_sag)[:, 0]
        v_loss = self._update("v", expectile_loss, (x_sg, q_target, float(self.expectile)), step)

        reward = (self.dataset_["achieved_goal"][b.index] == b.g).astype(np.float32)
        backup = reward + np.float32(self.gamma) * self._scalar("v", self._sg(b.s_next, b.g))
        q_loss = self._update("q", regression_loss, (x_sag, backup), step)
        tau = self.target_update
        for tp, p in zip(self.target_q_.params, self.nets_["q"].params):
            tp += tau * (p - tp)

        adv = q_target - self._scalar("v", x_sg)
        weights = awr_weights(adv, self.awr_temperature).astype(np.float32)
        pi_loss = self._update("policy", weighted_log_likelihood_loss, (x_sg, b.a, weights), step)
        return {"v_loss": v_loss, "q_loss": q_loss, "policy_loss": pi_loss}


@register
class GoFARLiteAgent(BaselineAgent):
    """Discriminator-reward dual value learning with closed-form policy weights.

    A logistic classifier ``c(s, g)`` separates goal-achieving pairs from
    dataset pairs for ``disc_steps`` steps; its clipped logit becomes the
    reward of a chi-square dual value problem, and the policy regresses onto
    dataset actions weighted by ``max(0, y / 2 + 1)``.
    """

    variant = "gofar_lite"

    def __init__(self, disc_steps=10_000, her_ratio=0.8, gamma=0.99, batch_size=512,
                 total_steps=50_000, base_lr=3e-4, hidden=(256, 256), log_every=1000,
                 seed=None):
        self.disc_steps = disc_steps
        self.her_ratio = her_ratio
        self.gamma = gamma
        self.batch_size = batch_size
        self.total_steps = total_steps
        self.base_lr = base_lr
        self.hidden = hidden
        self.log_every = log_every
        self.seed = seed

    def _check_params(self) -> None:
        super()._check_params()
        if int(self.disc_steps) < 0:
            raise ValidationError("disc_steps must be >= 0")

    def _build_nets(self) -> dict:
        nS, nA, nG = self.n_states_, self.n_actions_, self.n_goals_
        return {"discriminator": self._new_net(nS + nG, 1), "v": self._new_net(nS + nG, 1),
                "policy": self._new_net(nS + nG, nA)}

    def _schedule_steps(self) -> dict:
        return {"discriminator": int(self.disc_steps), "v": int(self.total_steps),
                "policy": int(self.total_steps)}

    def _total_iterations(self) -> int:
        return int(self.disc_steps) + int(self.total_steps)

    def reward(self, s, g) -> np.ndarray:
        """Clipped discriminator logit ``log(c / (1 - c))``."""
        return np.clip(self._scalar("discriminator", self._sg(s, g)), -REWARD_CLIP, REWARD_CLIP)

    def _train_step(self, step: int) -> dict:
        rho = sample_transitions(self.dataset_, self.her_ratio, self.batch_size, self.rng_)
        if step < self.disc_steps:
            pos = sample_goal_transition(self.dataset_, self.her_ratio, self.batch_size, self.rng_)
            x = np.concatenate([self._sg(pos.s_next, pos.g), self._sg(rho.s, rho.g)])
            labels = np.r_[np.ones(len(pos.g)), np.zeros(len(rho.g))].astype(np.float32)
            return {"disc_loss": self._update("discriminator", logistic_loss, (x, labels), step)}

        x_s, x_next = self._sg(rho.s, rho.g), self._sg(rho.s_next, rho.g)
        reward = self.reward(rho.s, rho.g).astype(np.float32)
        batch = ValueBatch(x_init=x_s, x_s=x_s, x_next=x_next, reward=reward,
                           gamma=float(self.gamma))
        v_loss = self._update("v", dual_value_loss, batch, step)
        y = reward + np.float32(self.gamma) * self._scalar("v", x_next) - self._scalar("v", x_s)
        weights = np.maximum(0.0, y / 2.0 + 1.0).astype(np.float32)
        pi_loss = self._update("policy", weighted_log_likelihood_loss, (x_s, rho.a, weights), step)
        return {"v_loss": v_loss, "policy_loss": pi_loss}


def gcsl_train(dataset, config: dict | None = None, seed=None) -> GCSLAgent:
    return GCSLAgent(**(config or {}), seed=seed).fit(dataset)


def iql_sparse_train(dataset, config: dict | None = None, seed=None) -> IQLSparseAgent:
    return IQLSparseAgent(**(config or {}), seed=seed).fit(dataset)


def gofar_lite_train(dataset, config: dict | None = None, seed=None) -> GoFARLiteAgent:
    return GoFARLiteAgent(**(config or {}), seed=seed).fit(dataset)
