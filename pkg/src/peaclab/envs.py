"""Built-in embodiment families and downstream rewards.

Grid families use five unified actions: up, down, left, right, stay. States
are cells in row-major order; wall cells stay in the index space but are
never entered and carry no initial mass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mdp import Embodiment, EmbodimentSet, ModelError, RewardTable

UP, DOWN, LEFT, RIGHT, STAY = range(5)
ACTION_NAMES = ("up", "down", "left", "right", "stay")
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1), STAY: (0, 0)}

FAMILIES = ("appendix-a1", "confusion-rooms", "grid-disabled", "grid-slip", "grid-permuted")
LAYOUTS = ("open", "four-rooms")
TASKS = ("goal", "corridor", "anti-goal")

# Right-room move permutations for confusion-rooms, one per embodiment.
CONFUSION_PERMUTATIONS = (
    (UP, DOWN, LEFT, RIGHT),
    (DOWN, UP, RIGHT, LEFT),
    (LEFT, RIGHT, DOWN, UP),
    (RIGHT, LEFT, UP, DOWN),
)

DEFAULT_LEVELS = {
    "appendix-a1": (),
    "confusion-rooms": (0, 1),
    "grid-disabled": (UP, DOWN, LEFT, RIGHT),
    "grid-slip": (0.0, 0.1, 0.2, 0.3, 0.4),
    "grid-permuted": ((0, 1, 2, 3), (1, 0, 2, 3), (0, 1, 3, 2), (1, 0, 3, 2)),
}


@dataclass(frozen=True)
class EnvSpec:
    """Which family to build and its per-embodiment parameters.

    ``levels`` holds one parameter per embodiment: the disabled unified
    action (grid-disabled), the slip probability (grid-slip), a permutation
    of the four moves (grid-permuted) or a right-room permutation index
    (confusion-rooms).
    """

    family: str
    rows: int = 5
    cols: int = 5
    layout: str = "open"
    levels: tuple | None = None
    prior: tuple | None = None
    start: str = "uniform"
    discount: float = 0.99
    task: str = "goal"
    goal: tuple | None = None
    first_id: int = 0

    def resolved_levels(self) -> tuple:
        return DEFAULT_LEVELS[self.family] if self.levels is None else tuple(self.levels)


def _validate(spec: EnvSpec) -> None:
    if spec.family not in FAMILIES:
        raise ModelError(f"unknown family {spec.family!r}; expected one of {FAMILIES}")
    if spec.layout not in LAYOUTS:
        raise ModelError(f"unknown layout {spec.layout!r}")
    if spec.task not in TASKS:
        raise ModelError(f"unknown task {spec.task!r}")
    if spec.family in ("appendix-a1", "confusion-rooms"):
        return
    if spec.rows < 2 or spec.cols < 2:
        raise ModelError("grids need at least 2 rows and 2 columns")
    if spec.layout == "four-rooms" and (spec.rows < 5 or spec.cols < 5):
        raise ModelError("the four-rooms layout needs at least a 5x5 grid")
    levels = spec.resolved_levels()
    if not levels:
        raise ModelError(f"{spec.family} needs at least one embodiment level")
    if spec.family == "grid-disabled":
        if any(int(a) not in (UP, DOWN, LEFT, RIGHT) for a in levels):
            raise ModelError("grid-disabled levels must be move actions 0..3")
    elif spec.family == "grid-slip":
        if any(not 0.0 <= float(p) <= 1.0 for p in levels):
            raise ModelError("slip probabilities must lie in [0, 1]")
    elif spec.family == "grid-permuted":
        if any(sorted(int(x) for x in perm) != [0, 1, 2, 3] for perm in levels):
            raise ModelError("grid-permuted levels must be permutations of 0..3")


class Grid:
    """Cell geometry: free cells, wall cells and blocked edges."""

    def __init__(self, rows: int, cols: int, walls=(), blocked_edges=()):
        self.rows, self.cols = rows, cols
        self.walls = frozenset(walls)
        self.blocked = frozenset(frozenset(edge) for edge in blocked_edges)

    @property
    def num_states(self) -> int:
        return self.rows * self.cols

    def index(self, cell) -> int:
        return cell[0] * self.cols + cell[1]

    def cell(self, index: int):
        return divmod(index, self.cols)

    def free_cells(self):
        return [(r, c) for r in range(self.rows) for c in range(self.cols) if (r, c) not in self.walls]

    def step(self, cell, move: int):
        dr, dc = MOVES[move]
        target = (cell[0] + dr, cell[1] + dc)
        if not (0 <= target[0] < self.rows and 0 <= target[1] < self.cols):
            return cell
        if target in self.walls or frozenset((cell, target)) in self.blocked:
            return cell
        return target

    def kernel(self, move_map=None, slip: float = 0.0, move_map_cells=None) -> np.ndarray:
        """Transition tensor (S, 5, S).

        ``move_map`` relabels the four moves (applied only to cells in
        ``move_map_cells`` when given); ``slip`` replaces a move by a
        uniformly random move with that probability.
        """
        n = self.num_states
        kernel = np.zeros((n, 5, n))
        for r in range(self.rows):
            for c in range(self.cols):
                s = self.index((r, c))
                if (r, c) in self.walls:
                    kernel[s, :, s] = 1.0
                    continue
                remap = move_map is not None and (move_map_cells is None or (r, c) in move_map_cells)
                for a in range(5):
                    move = move_map[a] if remap and a != STAY else a
                    if a == STAY or slip == 0.0:
                        kernel[s, a, self.index(self.step((r, c), move))] += 1.0
                        continue
                    kernel[s, a, self.index(self.step((r, c), move))] += 1.0 - slip
                    for m in (UP, DOWN, LEFT, RIGHT):
                        kernel[s, a, self.index(self.step((r, c), m))] += slip / 4.0
        return kernel

    def initial(self, start: str) -> np.ndarray:
        mu = np.zeros(self.num_states)
        if start == "uniform":
            for cell in self.free_cells():
                mu[self.index(cell)] = 1.0
        else:
            r, c = (int(x) for x in start.split(","))
            if (r, c) in self.walls:
                raise ModelError(f"start cell {(r, c)} is a wall")
            mu[self.index((r, c))] = 1.0
        return mu / mu.sum()


def four_rooms_walls(rows: int, cols: int):
    """Wall cross through the middle row/column with one door per arm."""
    mr, mc = rows // 2, cols // 2
    walls = {(mr, c) for c in range(cols)} | {(r, mc) for r in range(rows)}
    doors = {(mr // 2, mc), ((mr + rows) // 2, mc), (mr, mc // 2), (mr, (mc + cols) // 2)}
    return walls - doors


def grid_for(spec: EnvSpec) -> Grid:
    if spec.family == "confusion-rooms":
        return confusion_grid()
    walls = four_rooms_walls(spec.rows, spec.cols) if spec.layout == "four-rooms" else ()
    return Grid(spec.rows, spec.cols, walls)


def confusion_grid() -> Grid:
    # 2x4: left room = columns 0-1, right room = columns 2-3, one doorway on row 0.
    return Grid(2, 4, blocked_edges=[((1, 1), (1, 2))])


def confusion_right_room():
    return {(r, c) for r in range(2) for c in (2, 3)}


def _prior(spec: EnvSpec, count: int) -> np.ndarray:
    if spec.prior is None:
        return np.full(count, 1.0 / count)
    prior = np.asarray(spec.prior, dtype=float)
    if prior.shape != (count,):
        raise ModelError(f"prior needs {count} entries, got {prior.size}")
    return prior / prior.sum()


def appendix_a1(discount: float = 0.9) -> EmbodimentSet:
    """Two embodiments, two states, two actions; each embodiment's actions
    do the opposite of the other's."""
    e1 = np.zeros((2, 2, 2))
    e1[0, 0, 0] = e1[0, 1, 1] = e1[1, 0, 1] = e1[1, 1, 0] = 1.0
    e2 = np.zeros((2, 2, 2))
    e2[0, 0, 1] = e2[0, 1, 0] = e2[1, 0, 0] = e2[1, 1, 1] = 1.0
    mu0 = np.array([0.5, 0.5])
    embodiments = (
        Embodiment(0, e1, mu0, np.array([0, 1])),
        Embodiment(1, e2, mu0, np.array([0, 1])),
    )
    return EmbodimentSet(embodiments, np.array([0.5, 0.5]), 2, discount)


def build_env(spec: EnvSpec) -> EmbodimentSet:
    """Deterministically construct the embodiment set described by ``spec``."""
    _validate(spec)
    if spec.family == "appendix-a1":
        return appendix_a1(spec.discount)
    levels = spec.resolved_levels()
    grid = grid_for(spec)
    mu0 = grid.initial(spec.start)
    identity = np.arange(5)
    embodiments = []
    for k, level in enumerate(levels):
        eid = spec.first_id + k
        if spec.family == "confusion-rooms":
            perm = CONFUSION_PERMUTATIONS[int(level)] + (STAY,)
            kernel = grid.kernel(move_map=perm, move_map_cells=confusion_right_room())
            embodiments.append(Embodiment(eid, kernel, mu0, identity))
        elif spec.family == "grid-disabled":
            projector = identity.copy()
            projector[int(level)] = STAY
            embodiments.append(Embodiment(eid, grid.kernel(), mu0, projector))
        elif spec.family == "grid-slip":
            embodiments.append(Embodiment(eid, grid.kernel(slip=float(level)), mu0, identity))
        else:
            projector = np.array(tuple(int(x) for x in level) + (STAY,))
            embodiments.append(Embodiment(eid, grid.kernel(), mu0, projector))
    return EmbodimentSet(tuple(embodiments), _prior(spec, len(levels)), 5, spec.discount)


def downstream_reward(spec: EnvSpec, task: str | None = None) -> RewardTable:
    """State reward for a downstream task.

    ``goal`` pays 1 at the goal cell, ``corridor`` pays 1 on the free cells
    of the middle row, ``anti-goal`` pays -1 at the goal cell.
    """
    task = spec.task if task is None else task
    if task not in TASKS:
        raise ModelError(f"unknown task {task!r}")
    if spec.family == "appendix-a1":
        values = {"goal": [1.0, 0.0], "corridor": [0.0, 1.0], "anti-goal": [-1.0, 0.0]}[task]
        return RewardTable(np.array(values), task)
    grid = grid_for(spec)
    goal = tuple(spec.goal) if spec.goal is not None else (grid.rows - 1, grid.cols - 1)
    values = np.zeros(grid.num_states)
    if task == "goal":
        values[grid.index(goal)] = 1.0
    elif task == "anti-goal":
        values[grid.index(goal)] = -1.0
    else:
        mid = grid.rows // 2
        for c in range(grid.cols):
            if (mid, c) not in grid.walls:
                values[grid.index((mid, c))] = 1.0
    return RewardTable(values, task)


def train_test_split(spec: EnvSpec, seed=None):
    """Interleaved split of the sorted embodiment levels.

    Even positions train, odd positions are held out; ``seed`` is accepted
    for interface symmetry and does not affect the split.
    """
    _validate(spec)
    levels = spec.resolved_levels()
    if spec.family == "appendix-a1" or len(levels) < 3:
        raise ModelError("a split needs at least 3 embodiment levels")
    ordered = sorted(levels)
    train = tuple(ordered[0::2])
    heldout = tuple(ordered[1::2])
    train_spec = replace(spec, levels=train, prior=None, first_id=0)
    heldout_spec = replace(spec, levels=heldout, prior=None, first_id=len(train))
    return build_env(train_spec), build_env(heldout_spec)
