"""Offline goal-conditioned RL as mixture occupancy matching, with exact tabular certificates."""

__version__ = "0.1.0"
