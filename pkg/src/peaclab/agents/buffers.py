from __future__ import annotations

import numpy as np

from ..mdp import ModelError, Trajectory


class ReplayBuffer:
    """Ring buffer of fixed-horizon trajectories of one embodiment.

    Alongside states and actions it stores each trajectory's encoded
    discriminator windows so sampling a training batch is one fancy index.
    """

    def __init__(self, embodiment_id: int, capacity: int, horizon: int, history: int):
        if capacity < 1:
            raise ModelError("buffer capacity must be positive")
        self.embodiment_id = embodiment_id
        self.capacity = capacity
        self.horizon = horizon
        self.states = np.zeros((capacity, horizon + 1), dtype=np.int64)
        self.actions = np.zeros((capacity, horizon), dtype=np.int64)
        self.skills = np.full(capacity, -1, dtype=np.int64)
        self.windows = np.full((capacity, horizon + 1, history), -1, dtype=np.int64)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, traj: Trajectory, windows: np.ndarray) -> None:
        if traj.length != self.horizon:
            raise ModelError(f"expected horizon {self.horizon}, got {traj.length}")
        i = self.head
        self.states[i], self.actions[i], self.windows[i] = traj.states, traj.actions, windows
        self.skills[i] = -1 if traj.skill_id is None else traj.skill_id
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_windows(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Windows ending at ``states[t]`` for uniform (trajectory, t >= 1)."""
        rows = rng.integers(0, self.size, size=count)
        times = rng.integers(1, self.horizon + 1, size=count)
        return self.windows[rows, times]

    def trajectories(self) -> list:
        order = [(self.head - self.size + k) % self.capacity for k in range(self.size)]
        return [
            Trajectory(self.embodiment_id, self.states[i], self.actions[i],
                       None if self.skills[i] < 0 else int(self.skills[i]))
            for i in order
        ]

    def state_dict(self) -> dict:
        return {"states": self.states.copy(), "actions": self.actions.copy(), "skills": self.skills.copy(),
                "windows": self.windows.copy(), "size": self.size, "head": self.head}

    def load_state_dict(self, state: dict) -> None:
        self.states = np.array(state["states"], dtype=np.int64)
        self.actions = np.array(state["actions"], dtype=np.int64)
        self.skills = np.array(state["skills"], dtype=np.int64)
        self.windows = np.array(state["windows"], dtype=np.int64)
        self.size, self.head = int(state["size"]), int(state["head"])
