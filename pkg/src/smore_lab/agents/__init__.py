"""Offline goal-conditioned agents with a scikit-learn style interface."""

from .base import AGENT_CLASSES, GoalConditionedAgent, NotFittedError, load_agent
from .baselines import (BaselineAgent, GCSLAgent, GoFARLiteAgent, IQLSparseAgent, gcsl_train,
                        gofar_lite_train, iql_sparse_train)
from .smore import (SmoreAgent, SmoreConfig, smore_train, smore_update_m, smore_update_policy,
                    smore_update_s)

AGENTS = {"smore": SmoreAgent, "gcsl": GCSLAgent, "iql_sparse": IQLSparseAgent,
          "gofar_lite": GoFARLiteAgent}


def make_agent(name: str, **params) -> GoalConditionedAgent:
    if name not in AGENTS:
        raise KeyError(f"unknown agent {name!r}; choose from {sorted(AGENTS)}")
    return AGENTS[name](**params)


__all__ = [
    "AGENTS", "AGENT_CLASSES", "BaselineAgent", "GCSLAgent", "GoFARLiteAgent",
    "GoalConditionedAgent", "IQLSparseAgent", "NotFittedError", "SmoreAgent", "SmoreConfig",
    "gcsl_train", "gofar_lite_train", "iql_sparse_train", "load_agent", "make_agent",
    "smore_train", "smore_update_m", "smore_update_policy", "smore_update_s",
]
