"""The practical SMORe agent: score net S(s,a,g), expectile net M(s,g), AWR policy."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .._validation import ValidationError
from ..data import sample_goal_transition, sample_transitions
from .base import GoalConditionedAgent, register
from .losses import (ScoreBatch, awr_weights, expectile_loss, score_loss,
                     weighted_log_likelihood_loss)


@dataclass(frozen=True)
class SmoreConfig:
    """Hyperparameters; defaults follow the grid-task setting."""

    beta: float = 0.5
    awr_temperature: float = 3.0
    expectile: float = 0.8
    her_ratio: float = 0.8
    gamma: float = 0.99
    batch_size: int = 512
    total_steps: int = 50_000
    base_lr: float = 3e-4
    hidden: tuple = (256, 256)
    log_every: int = 1000


@register
class SmoreAgent(GoalConditionedAgent):
    """Offline goal-conditioned agent trained by mixture occupancy matching.

    Each iteration draws a HER-relabeled dataset batch and a goal-transition
    batch, then updates S (contrastive score objective), M (upper expectile
    of S over dataset actions) and the policy (advantage-weighted regression
    on ``S - M``).
    """

    def __init__(self, beta=0.5, awr_temperature=3.0, expectile=0.8, her_ratio=0.8,
                 gamma=0.99, batch_size=512, total_steps=50_000, base_lr=3e-4,
                 hidden=(256, 256), log_every=1000, seed=None):
        self.beta = beta
        self.awr_temperature = awr_temperature
        self.expectile = expectile
        self.her_ratio = her_ratio
        self.gamma = gamma
        self.batch_size = batch_size
        self.total_steps = total_steps
        self.base_lr = base_lr
        self.hidden = hidden
        self.log_every = log_every
        self.seed = seed

    @classmethod
    def from_config(cls, config: SmoreConfig, seed=None) -> "SmoreAgent":
        return cls(**asdict(config), seed=seed)

    def _check_params(self) -> None:
        super()._check_params()
        if not 0.0 < self.beta <= 1.0:
            raise ValidationError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0.5 < self.expectile < 1.0:
            raise ValidationError(f"expectile must lie in (0.5, 1), got {self.expectile}")
        if self.awr_temperature <= 0:
            raise ValidationError("awr_temperature must be positive")

    def _build_nets(self) -> dict:
        nS, nA, nG = self.n_states_, self.n_actions_, self.n_goals_
        return {"score": self._new_net(nS + nA + nG, 1),
                "expectile": self._new_net(nS + nG, 1),
                "policy": self._new_net(nS + nG, nA)}

    def _train_step(self, step: int) -> dict:
        rho = sample_transitions(self.dataset_, self.her_ratio, self.batch_size, self.rng_)
        q = sample_goal_transition(self.dataset_, self.her_ratio, self.batch_size, self.rng_)
        return {"score_loss": smore_update_s(self, rho, q, step),
                "expectile_loss": smore_update_m(self, rho, step),
                "policy_loss": smore_update_policy(self, rho, step)}

    def score_batch(self, rho, q) -> ScoreBatch:
        """Assemble the score-update inputs; policy actions are sampled from the current net."""
        n = len(rho.s)
        states, goals = np.r_[rho.s, q.s_next], np.r_[rho.g, q.g]
        actions = self._sample_policy(states, goals, self.rng_)
        targets = np.float32(self.gamma) * self._scalar(
            "expectile", self._sg(np.r_[q.s_next, rho.s_next], np.r_[q.g, rho.g]))
        return ScoreBatch(
            x_init=self._sag(rho.s, actions[:n], rho.g),
            x_next=self._sag(q.s_next, actions[n:], q.g),
            x_q=self._sag(q.s, q.a, q.g),
            x_rho=self._sag(rho.s, rho.a, rho.g),
            target_q=targets[:len(q.s)],
            target_rho=targets[len(q.s):],
            beta=float(self.beta), gamma=float(self.gamma))

    def advantage(self, s, a, g) -> np.ndarray:
        """``S(s,a,g) - M(s,g)``."""
        return self._scalar("score", self._sag(s, a, g)) - self._scalar("expectile", self._sg(s, g))


def smore_update_s(agent: SmoreAgent, batch_rho, batch_q, step: int = 0) -> float:
    return agent._update("score", score_loss, agent.score_batch(batch_rho, batch_q), step)


def smore_update_m(agent: SmoreAgent, batch_rho, step: int = 0) -> float:
    targets = agent._scalar("score", agent._sag(batch_rho.s, batch_rho.a, batch_rho.g))
    batch = (agent._sg(batch_rho.s, batch_rho.g), targets, float(agent.expectile))
    return agent._update("expectile", expectile_loss, batch, step)


def smore_update_policy(agent: SmoreAgent, batch_rho, step: int = 0) -> float:
    adv = agent.advantage(batch_rho.s, batch_rho.a, batch_rho.g)
    weights = awr_weights(adv, agent.awr_temperature).astype(np.float32)
    batch = (agent._sg(batch_rho.s, batch_rho.g), batch_rho.a, weights)
    return agent._update("policy", weighted_log_likelihood_loss, batch, step)


def smore_train(dataset, config: SmoreConfig | None = None, seed=None) -> SmoreAgent:
    return SmoreAgent.from_config(config or SmoreConfig(), seed=seed).fit(dataset)
