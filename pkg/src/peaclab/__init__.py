"""Tabular cross-embodiment unsupervised RL: exact CE-MDP machinery, PEAC
intrinsic rewards and agents, and brute-force verification oracles."""

__version__ = "0.1.0"
