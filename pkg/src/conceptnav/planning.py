"""Exact trajectory inference on a grid by dynamic programming.

The planner maximizes the sum of per-step log emissions over all state sequences
that an action set can realize from a start cell in ``T`` steps. Transitions are
deterministic one-cell moves, so they contribute only a constant and the map
factor lives inside the emission field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from conceptnav.concepts import SpatialConceptModel, as_instruction, emission_log_field
from conceptnav.errors import BudgetExceededError, PlanningError, ValidationError
from conceptnav.gridmap import Cell, CostMap

BRUTE_FORCE_BUDGET = 10 ** 7

_NAMED_MOVES = {
    "stay": (0, 0),
    "up": (0, 1),
    "down": (0, -1),
    "left": (-1, 0),
    "right": (1, 0),
    "up-left": (-1, 1),
    "up-right": (1, 1),
    "down-left": (-1, -1),
    "down-right": (1, -1),
}


@dataclass(frozen=True)
class ActionSet:
    """Ordered one-cell moves as ``(dcol, drow)``; order is the tie-break order."""

    offsets: Tuple[Tuple[int, int], ...]
    names: Tuple[str, ...] = ()

    def __post_init__(self):
        offsets = tuple((int(dc), int(dr)) for dc, dr in self.offsets)
        if not offsets:
            raise ValidationError("action set is empty")
        if len(set(offsets)) != len(offsets):
            raise ValidationError("action offsets must be distinct")
        if any(abs(dc) > 1 or abs(dr) > 1 for dc, dr in offsets):
            raise ValidationError("action offsets must move at most one cell per axis")
        if len(offsets) > 255:
            raise ValidationError("at most 255 actions are supported")
        names = tuple(self.names) or tuple(_name_of(o) for o in offsets)
        if len(names) != len(offsets):
            raise ValidationError("names and offsets differ in length")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "names", names)

    @classmethod
    def von_neumann(cls, include_stay: bool = True) -> "ActionSet":
        names = ["stay", "up", "down", "left", "right"]
        if not include_stay:
            names = names[1:]
        return cls.from_names(names)

    @classmethod
    def moore(cls, include_stay: bool = True) -> "ActionSet":
        names = ["stay", "up", "down", "left", "right",
                 "up-left", "up-right", "down-left", "down-right"]
        if not include_stay:
            names = names[1:]
        return cls.from_names(names)

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "ActionSet":
        try:
            return cls(tuple(_NAMED_MOVES[n] for n in names), tuple(names))
        except KeyError as exc:
            raise ValidationError(f"unknown action name {exc.args[0]!r}") from None

    def __len__(self):
        return len(self.offsets)

    @property
    def include_stay(self) -> bool:
        return (0, 0) in self.offsets

    @property
    def include_diagonals(self) -> bool:
        return any(dc and dr for dc, dr in self.offsets)

    @property
    def moves(self) -> List[Tuple[int, Tuple[int, int]]]:
        """(index, offset) pairs excluding stay."""
        return [(a, o) for a, o in enumerate(self.offsets) if o != (0, 0)]

    def index_of(self, offset: Tuple[int, int]) -> int:
        try:
            return self.offsets.index(tuple(offset))
        except ValueError:
            raise ValidationError(f"offset {offset} is not in the action set") from None

    def lower_bound_steps(self, a: Cell, b: Cell) -> int:
        """Fewest moves between two cells on an open grid."""
        dc, dr = abs(a[0] - b[0]), abs(a[1] - b[1])
        return max(dc, dr) if self.include_diagonals else dc + dr


def _name_of(offset):
    for name, o in _NAMED_MOVES.items():
        if o == offset:
            return name
    return f"{offset[0]:+d},{offset[1]:+d}"


@dataclass(frozen=True)
class PlanRequest:
    start: Cell
    horizon: int
    instruction: object
    actions: ActionSet = field(default_factory=ActionSet.von_neumann)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        object.__setattr__(self, "start", (int(self.start[0]), int(self.start[1])))
        object.__setattr__(self, "instruction", as_instruction(self.instruction))


@dataclass(eq=False)
class Trajectory:
    """States ``x_0..x_T'``, action indices ``u_1..u_T'`` and per-step log emissions."""

    states: List[Cell]
    actions: List[int]
    step_log_likelihoods: np.ndarray
    method: str = ""
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = [(int(c), int(r)) for c, r in self.states]
        self.actions = [int(a) for a in self.actions]
        self.step_log_likelihoods = np.asarray(self.step_log_likelihoods, dtype=float)
        if len(self.states) != len(self.actions) + 1:
            raise ValidationError("a trajectory needs exactly one more state than actions")
        if self.step_log_likelihoods.shape != (len(self.actions),):
            raise ValidationError("one log-likelihood per step is required")

    @property
    def cumulative_log_likelihood(self) -> float:
        return float(np.sum(self.step_log_likelihoods))

    @property
    def final_state(self) -> Cell:
        return self.states[-1]

    def __len__(self):
        return len(self.actions)

    def path_length(self, actions: ActionSet) -> int:
        """Number of non-stay moves."""
        return sum(1 for a in self.actions if actions.offsets[a] != (0, 0))

    def to_dict(self, costmap: CostMap, actions: ActionSet) -> dict:
        grid = costmap.grid
        return {
            "method": self.method,
            "states": [
                {"col": c, "row": r, "x": grid.cell_to_world((c, r))[0], "y": grid.cell_to_world((c, r))[1]}
                for c, r in self.states
            ],
            "actions": [actions.names[a] for a in self.actions],
            "step_log_likelihoods": self.step_log_likelihoods.tolist(),
            "cumulative_log_likelihood": self.cumulative_log_likelihood,
            "path_length": self.path_length(actions),
            "provenance": self.provenance,
        }


def check_trajectory(traj: Trajectory, actions: ActionSet, costmap: CostMap) -> None:
    """Raise ValidationError unless every state is traversable and every step matches its action."""
    for state in traj.states:
        if not costmap.traversable(state):
            raise ValidationError(f"state {state} is off the grid or has zero cost-map value")
    for t, a in enumerate(traj.actions):
        if not 0 <= a < len(actions):
            raise ValidationError(f"action index {a} at step {t + 1} not in action set")
        (c0, r0), (c1, r1) = traj.states[t], traj.states[t + 1]
        if (c1 - c0, r1 - r0) != actions.offsets[a]:
            raise ValidationError(f"step {t + 1} does not match action {actions.names[a]}")


def actions_from_path(path: Sequence[Cell], actions: ActionSet) -> List[int]:
    return [actions.index_of((b[0] - a[0], b[1] - a[1])) for a, b in zip(path, path[1:])]


def _shifted(values: np.ndarray, dc: int, dr: int, fill=-np.inf) -> np.ndarray:
    """out[r, c] = values[r + dr, c + dc], ``fill`` outside the grid."""
    h, w = values.shape
    padded = np.full((h + 2, w + 2), fill, dtype=values.dtype)
    padded[1:-1, 1:-1] = values
    return padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]


def _check_start(field_values: np.ndarray, start: Cell) -> None:
    col, row = start
    h, w = field_values.shape
    if not (0 <= col < w and 0 <= row < h):
        raise ValidationError(f"start {start} is outside the grid")
    if not np.isfinite(field_values[row, col]):
        raise ValidationError(f"start {start} lies on a zero-probability cell")


def viterbi_on_field(field_values: np.ndarray, start: Cell, horizon: int,
                     actions: ActionSet) -> Trajectory:
    """Maximize sum_{t=1..T} field(x_t) over action sequences from ``start``.

    Runs the max-sum recursion backwards as a value-to-go, storing the arg-max action
    per (t, cell) in a uint8 table, then rolls the policy forward from the start. Taking
    the first action in declared order on ties makes the result the lexicographically
    smallest optimal action sequence.
    """
    field_values = np.asarray(field_values, dtype=float)
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    _check_start(field_values, start)
    h, w = field_values.shape
    policy = np.zeros((horizon, h, w), dtype=np.uint8)
    value = np.zeros((h, w))
    for t in range(horizon - 1, -1, -1):
        gain = field_values + value
        best = np.full((h, w), -np.inf)
        choice = policy[t]
        for a, (dc, dr) in enumerate(actions.offsets):
            cand = _shifted(gain, dc, dr)
            better = cand > best
            best[better] = cand[better]
            choice[better] = a
        value = best
    col, row = start
    if not np.isfinite(value[row, col]):
        raise PlanningError(f"no {horizon}-step trajectory from {start} stays on traversable cells")
    states = [start]
    chosen = []
    for t in range(horizon):
        a = int(policy[t, row, col])
        dc, dr = actions.offsets[a]
        col, row = col + dc, row + dr
        chosen.append(a)
        states.append((col, row))
    steps = np.array([field_values[r, c] for c, r in states[1:]])
    return Trajectory(states, chosen, steps, method="viterbi")


def brute_force_on_field(field_values: np.ndarray, start: Cell, horizon: int,
                         actions: ActionSet, budget: int = BRUTE_FORCE_BUDGET) -> Trajectory:
    """Exhaustive search over every action sequence; keeps the first strict maximum."""
    field_values = np.asarray(field_values, dtype=float)
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    if len(actions) ** horizon > budget:
        raise BudgetExceededError(
            f"{len(actions)}^{horizon} sequences exceed the enumeration budget of {budget}"
        )
    _check_start(field_values, start)
    h, w = field_values.shape
    grid = field_values.tolist()
    best_score = -math.inf
    best_seq: Optional[List[int]] = None
    seq: List[int] = []

    def visit(col, row, depth, score):
        nonlocal best_score, best_seq
        if depth == horizon:
            if score > best_score:
                best_score, best_seq = score, list(seq)
            return
        for a, (dc, dr) in enumerate(actions.offsets):
            c, r = col + dc, row + dr
            if 0 <= c < w and 0 <= r < h and grid[r][c] != -math.inf:
                seq.append(a)
                visit(c, r, depth + 1, score + grid[r][c])
                seq.pop()

    visit(start[0], start[1], 0, 0.0)
    if best_seq is None:
        raise PlanningError(f"no {horizon}-step trajectory from {start} stays on traversable cells")
    states = [tuple(start)]
    for a in best_seq:
        dc, dr = actions.offsets[a]
        states.append((states[-1][0] + dc, states[-1][1] + dr))
    steps = np.array([field_values[r, c] for c, r in states[1:]])
    return Trajectory(states, best_seq, steps, method="brute-force")


def _request_field(request: PlanRequest, model: SpatialConceptModel, costmap: CostMap) -> np.ndarray:
    if not costmap.traversable(request.start):
        raise ValidationError(f"start {request.start} is not a traversable cell")
    return emission_log_field(model, costmap, request.instruction)


def viterbi_plan(request: PlanRequest, model: SpatialConceptModel, costmap: CostMap) -> Trajectory:
    field_values = _request_field(request, model, costmap)
    return viterbi_on_field(field_values, request.start, request.horizon, request.actions)


def brute_force_plan(request: PlanRequest, model: SpatialConceptModel, costmap: CostMap,
                     budget: int = BRUTE_FORCE_BUDGET) -> Trajectory:
    if len(request.actions) ** request.horizon > budget:
        raise BudgetExceededError(
            f"{len(request.actions)}^{request.horizon} sequences exceed the budget of {budget}"
        )
    field_values = _request_field(request, model, costmap)
    return brute_force_on_field(field_values, request.start, request.horizon, request.actions, budget)


def score_on_field(states: Sequence[Cell], field_values: np.ndarray,
                   horizon: Optional[int] = None) -> Tuple[np.ndarray, float]:
    """Per-step log emissions over ``horizon`` steps and their total.

    Longer trajectories are cut at the horizon; shorter ones repeat the final
    state's value (the robot stays put once it arrives).
    """
    h, w = field_values.shape
    for col, row in states:
        if not (0 <= col < w and 0 <= row < h):
            raise ValidationError(f"trajectory leaves the grid at {(col, row)}")
        if not np.isfinite(field_values[row, col]):
            raise ValidationError(f"trajectory enters a zero-probability cell at {(col, row)}")
    if horizon is None:
        horizon = len(states) - 1
    visited = [field_values[r, c] for c, r in states[1:horizon + 1]]
    final = states[min(horizon, len(states) - 1)]
    visited += [field_values[final[1], final[0]]] * (horizon - len(visited))
    steps = np.array(visited, dtype=float)
    return steps, float(np.sum(steps))


def score_trajectory(traj: Trajectory, model: SpatialConceptModel, costmap: CostMap,
                     instruction, horizon: Optional[int] = None) -> Tuple[np.ndarray, float]:
    return score_on_field(traj.states, emission_log_field(model, costmap, instruction), horizon)
