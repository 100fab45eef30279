"""Collective frequency response of leader-follower consensus networks."""

__version__ = "0.1.0"
