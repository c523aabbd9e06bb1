"""Constrained reinforcement learning for fronthaul compression control."""

__version__ = "0.1.0"
