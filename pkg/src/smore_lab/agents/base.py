"""Estimator plumbing shared by every offline goal-conditioned agent."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .._validation import ValidationError, rng_from
from ..data import OfflineDataset
from ..nn import (AdamState, CosineSchedule, DenseNet, TrainingDivergedError, adam_step,
                  cosine_lr, forward, load_checkpoint, save_checkpoint)
from .features import state_action_goal, state_goal
from .losses import log_softmax


class NotFittedError(ValidationError):
    """Raised when an agent is queried before ``fit``."""


def _child_seeds(seed, n: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n)]


class GoalConditionedAgent(BaseEstimator):
    """Base class: subclasses declare hyperparameters in ``__init__`` and
    implement ``_build_nets`` and ``_train_step``.

    ``fit`` consumes an :class:`OfflineDataset`; ``predict`` maps an integer
    array of ``(state, goal)`` rows to greedy actions.
    """

    policy_key = "policy"

    # ------------------------------------------------------------------
    # subclass hooks

    def _build_nets(self) -> dict:
        raise NotImplementedError

    def _train_step(self, step: int) -> dict:
        raise NotImplementedError

    def _schedule_steps(self) -> dict:
        """Number of optimizer steps each net will take (for its cosine schedule)."""
        return {name: self.total_steps for name in self.nets_}

    def _check_params(self) -> None:
        if int(self.total_steps) < 0:
            raise ValidationError("total_steps must be >= 0")
        if int(self.batch_size) < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0.0 <= self.her_ratio <= 1.0:
            raise ValidationError("her_ratio must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError("gamma must lie in (0, 1)")
        if self.base_lr <= 0:
            raise ValidationError("base_lr must be positive")

    # ------------------------------------------------------------------
    # training

    def fit(self, dataset: OfflineDataset, y=None):
        if not isinstance(dataset, OfflineDataset):
            raise ValidationError(f"expected an OfflineDataset, got {type(dataset).__name__}")
        if len(dataset) == 0:
            raise ValidationError("dataset is empty")
        self._check_params()
        self.n_states_ = dataset.n_states
        self.n_actions_ = dataset.n_actions
        self.n_goals_ = dataset.n_goals
        net_seed, batch_seed = _child_seeds(self.seed, 2)
        self._net_seeds = iter(_child_seeds(net_seed, 16))
        self.dataset_ = dataset
        self.rng_ = rng_from(batch_seed)
        self.nets_ = self._build_nets()
        steps = self._schedule_steps()
        self.optimizers_ = {name: AdamState.for_params(net.params, base_lr=self.base_lr)
                            for name, net in self.nets_.items()}
        self.schedules_ = {name: CosineSchedule(max(1, steps.get(name, 1)))
                           for name in self.nets_}
        self.training_log_ = []
        last: dict = {}
        for step in range(self._total_iterations()):
            last = self._train_step(step)
            if step % self.log_every == 0 or step == self._total_iterations() - 1:
                self.training_log_.append({"step": step, **last})
        self.n_steps_ = self._total_iterations()
        return self

    def _total_iterations(self) -> int:
        return int(self.total_steps)

    def _new_net(self, in_dim: int, out_dim: int) -> DenseNet:
        return DenseNet([in_dim, *self.hidden, out_dim], seed=next(self._net_seeds))

    def _update(self, name: str, loss_fn, batch, step: int) -> float:
        net = self.nets_[name]
        loss, grads = loss_fn(net, batch)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"{type(self).__name__}: {name} loss became {loss} "
                                        f"at step {step}")
        lr = cosine_lr(self.schedules_[name], self.base_lr, self.optimizers_[name].step)
        try:
            adam_step(self.optimizers_[name], net.params, grads, lr_now=lr)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"{type(self).__name__}: {name} net, {exc}") from None
        return loss

    # ------------------------------------------------------------------
    # feature helpers

    def _sg(self, s, g) -> np.ndarray:
        return state_goal(s, g, self.n_states_, self.n_goals_)

    def _sag(self, s, a, g) -> np.ndarray:
        return state_action_goal(s, a, g, self.n_states_, self.n_actions_, self.n_goals_)

    def _scalar(self, name: str, x) -> np.ndarray:
        return forward(self.nets_[name], x)[:, 0]

    def _sample_policy(self, s, g, rng) -> np.ndarray:
        probs = np.exp(log_softmax(forward(self.nets_[self.policy_key], self._sg(s, g))))
        u = rng.random(len(probs))[:, None]
        return np.minimum((probs.cumsum(axis=1) < u).sum(axis=1), self.n_actions_ - 1)

    # ------------------------------------------------------------------
    # inference

    def _check_fitted(self) -> None:
        if not hasattr(self, "nets_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def _check_rows(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValidationError(f"expected rows of (state, goal), got shape {X.shape}")
        s, g = X[:, 0].astype(np.int64), X[:, 1].astype(np.int64)
        if len(X) and (s.min() < 0 or s.max() >= self.n_states_
                       or g.min() < 0 or g.max() >= self.n_goals_):
            raise IndexError("state or goal index out of range")
        return s, g

    def decision_function(self, X) -> np.ndarray:
        """Action logits ``[n, n_actions]`` for rows of ``(state, goal)``."""
        self._check_fitted()
        s, g = self._check_rows(X)
        return forward(self.nets_[self.policy_key], self._sg(s, g)).astype(np.float64)

    def predict_proba(self, X) -> np.ndarray:
        return np.exp(log_softmax(self.decision_function(X)))

    def predict(self, X) -> np.ndarray:
        """Greedy actions; ties go to the lowest action index."""
        return self.decision_function(X).argmax(axis=1)

    def act(self, s, g, greedy: bool = True, rng=None):
        """Action(s) for state(s) ``s`` under goal(s) ``g``; scalars in, scalar out."""
        scalar = np.ndim(s) == 0 and np.ndim(g) == 0
        s, g = np.broadcast_arrays(np.atleast_1d(s), np.atleast_1d(g))
        X = np.stack([s, g], axis=1)
        if greedy:
            actions = self.predict(X)
        else:
            probs = self.predict_proba(X)
            u = rng_from(rng).random(len(probs))[:, None]
            actions = np.minimum((probs.cumsum(axis=1) < u).sum(axis=1), self.n_actions_ - 1)
        return int(actions[0]) if scalar else actions

    def policy_table(self, greedy: bool = True) -> np.ndarray:
        """The policy as a ``[n_goals, n_states, n_actions]`` table."""
        self._check_fitted()
        g, s = np.meshgrid(np.arange(self.n_goals_), np.arange(self.n_states_), indexing="ij")
        X = np.stack([s.ravel(), g.ravel()], axis=1)
        if greedy:
            table = np.eye(self.n_actions_)[self.predict(X)]
        else:
            table = self.predict_proba(X)
        return table.reshape(self.n_goals_, self.n_states_, self.n_actions_)

    # ------------------------------------------------------------------
    # persistence

    def save(self, path) -> None:
        """Parameters via the checkpoint format, hyperparameters in ``<path>.json``."""
        self._check_fitted()
        meta = {"class": type(self).__name__,
                "dims": [self.n_states_, self.n_actions_, self.n_goals_],
                "n_steps": self.n_steps_}
        save_checkpoint(path, self.nets_, meta)
        config = {"class": type(self).__name__, "params": _jsonable(self.get_params())}
        Path(str(path) + ".json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


def _jsonable(params: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


AGENT_CLASSES: dict = {}


def register(cls):
    AGENT_CLASSES[cls.__name__] = cls
    return cls


def load_agent(path) -> GoalConditionedAgent:
    """Rebuild an agent saved with :meth:`GoalConditionedAgent.save`."""
    nets, meta = load_checkpoint(path)
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise ValidationError(f"{path}: missing config sidecar {sidecar.name}")
    config = json.loads(sidecar.read_text())
    if config.get("class") != meta.get("class") or meta.get("class") not in AGENT_CLASSES:
        raise ValidationError(f"{path}: unknown or mismatched agent class {meta.get('class')}")
    params = dict(config["params"])
    if "hidden" in params:
        params["hidden"] = tuple(params["hidden"])
    agent = AGENT_CLASSES[meta["class"]](**params)
    agent.n_states_, agent.n_actions_, agent.n_goals_ = meta["dims"]
    agent.n_steps_ = meta["n_steps"]
    agent.nets_ = nets
    return agent
