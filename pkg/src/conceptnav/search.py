"""Goal-directed planners: A* toward goal candidates and the goal-setting baselines.

Method ids follow the evaluation table: A exact Viterbi (see :mod:`planning`),
B A* toward the best of J concept means, C A* toward the single most likely
mean, D A* toward a random matching training position, E A* toward any random
training position.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from conceptnav.concepts import SpatialConceptModel, as_instruction, concept_log_likelihood, emission_log_field
from conceptnav.dataset import TrainingRecord
from conceptnav.errors import GoalInfeasibleError, NoPathError, PlanningError, ValidationError
from conceptnav.gridmap import Cell, CostMap
from conceptnav.planning import ActionSet, PlanRequest, Trajectory, actions_from_path

NEG_LOG_EMISSION = "neg_log_emission"
UNIT_PLUS_COSTMAP = "unit_plus_costmap"
SCALED_MANHATTAN = "scaled_manhattan"
MANHATTAN = "manhattan"


@dataclass(frozen=True)
class GoalCandidate:
    cell: Cell
    score: float
    position_index: int
    relocated: bool = False

    def to_dict(self) -> dict:
        return {"cell": list(self.cell), "score": self.score,
                "position_index": self.position_index, "relocated": self.relocated}


@dataclass(frozen=True)
class AStarConfig:
    cost_model: str = NEG_LOG_EMISSION
    heuristic: str = SCALED_MANHATTAN
    actions: ActionSet = field(default_factory=ActionSet.von_neumann)
    costmap_weight: float = 1.0

    def __post_init__(self):
        if self.cost_model not in (NEG_LOG_EMISSION, UNIT_PLUS_COSTMAP):
            raise ValidationError(f"unknown cost model {self.cost_model!r}")
        if self.heuristic not in (SCALED_MANHATTAN, MANHATTAN):
            raise ValidationError(f"unknown heuristic {self.heuristic!r}")
        if self.costmap_weight < 0:
            raise ValidationError("costmap_weight must be >= 0")
        if not self.actions.moves:
            raise ValidationError("A* needs at least one non-stay move")

    @classmethod
    def approximate(cls, actions: ActionSet) -> "AStarConfig":
        return cls(NEG_LOG_EMISSION, SCALED_MANHATTAN, actions)

    @classmethod
    def baseline(cls, actions: ActionSet, costmap_weight: float = 1.0) -> "AStarConfig":
        return cls(UNIT_PLUS_COSTMAP, MANHATTAN, actions, costmap_weight)


def nearest_traversable(costmap: CostMap, point) -> Cell:
    """Traversable cell whose center is closest to a world point; ties go to row-major order."""
    mask = costmap.values > 0
    if not mask.any():
        raise PlanningError("cost map has no traversable cell")
    centers = costmap.grid.cell_centers()
    d2 = ((centers - np.asarray(point, dtype=float)) ** 2).sum(axis=-1)
    d2[~mask] = np.inf
    row, col = np.unravel_index(int(np.argmin(d2)), d2.shape)
    return (int(col), int(row))


def goal_candidates(model: SpatialConceptModel, costmap: CostMap, instruction, J: int = 10,
                    relocate: bool = True) -> List[GoalCandidate]:
    """Rank the cells holding each position-distribution mean by log p(S | x).

    With ``relocate`` a mean on a non-traversable or off-grid cell moves to the nearest
    traversable cell; without it the raw cell is returned as-is.
    """
    if J < 1:
        raise ValidationError("J must be >= 1")
    instruction = as_instruction(instruction)
    grid = costmap.grid
    if relocate and not (costmap.values > 0).any():
        raise PlanningError("cost map has no traversable cell")
    found = []
    for k in range(model.n_positions):
        mean = model.means[k]
        cell = grid.world_to_cell(*mean)
        moved = False
        if relocate and not costmap.traversable(cell):
            cell, moved = nearest_traversable(costmap, mean), True
        point = grid.cell_to_world(cell) if grid.in_bounds(cell) else mean
        score = float(concept_log_likelihood(model, np.asarray(point), instruction))
        found.append(GoalCandidate(cell, score, k, moved))
    found.sort(key=lambda g: (-g.score, g.position_index))
    return found[:J]


def step_costs(costmap: CostMap, field_values: Optional[np.ndarray], config: AStarConfig) -> np.ndarray:
    """Cost of entering each cell; ``inf`` marks cells that may not be entered."""
    if config.cost_model == NEG_LOG_EMISSION:
        if field_values is None:
            raise ValidationError("the neg_log_emission cost model needs an emission field")
        finite = np.isfinite(field_values)
        if not finite.any():
            raise PlanningError("emission field has no finite cell")
        shift = field_values[finite].max()
        costs = np.where(finite, shift - np.where(finite, field_values, 0.0), np.inf)
    else:
        costs = 1.0 + config.costmap_weight * (1.0 - costmap.values)
        costs[costmap.values <= 0] = np.inf
    return costs


def astar_plan(start: Cell, goal: Cell, costmap: CostMap, field_values: Optional[np.ndarray],
               config: AStarConfig) -> Trajectory:
    """A* from ``start`` to ``goal``; open-set ties go to smaller g, then row-major cell order."""
    start, goal = tuple(start), tuple(goal)
    for label, cell in (("start", start), ("goal", goal)):
        if not costmap.traversable(cell):
            raise GoalInfeasibleError(f"{label} {cell} is not a traversable cell")
    costs = step_costs(costmap, field_values, config)
    if not np.isfinite(costs[start[1], start[0]]) or not np.isfinite(costs[goal[1], goal[0]]):
        raise GoalInfeasibleError("start or goal has zero emission probability")

    finite_costs = costs[np.isfinite(costs)]
    cap_engaged = False
    if config.heuristic == SCALED_MANHATTAN:
        scale = math.log(len(config.actions))
        floor = float(finite_costs.min())
        if scale > floor:
            scale, cap_engaged = floor, True
    else:
        scale = 1.0

    actions = config.actions
    moves = [o for _, o in actions.moves]
    h, w = costs.shape
    cost_rows = costs.tolist()
    g_best = {start: 0.0}
    parent = {start: None}
    closed = set()
    heap = [(scale * actions.lower_bound_steps(start, goal), 0.0, start[1], start[0])]
    while heap:
        _, g, row, col = heapq.heappop(heap)
        node = (col, row)
        if node in closed:
            continue
        if node == goal:
            break
        closed.add(node)
        for dc, dr in moves:
            c, r = col + dc, row + dr
            if not (0 <= c < w and 0 <= r < h):
                continue
            step = cost_rows[r][c]
            if step == math.inf or (c, r) in closed:
                continue
            ng = g + step
            if ng < g_best.get((c, r), math.inf):
                g_best[(c, r)] = ng
                parent[(c, r)] = node
                f = ng + scale * actions.lower_bound_steps((c, r), goal)
                heapq.heappush(heap, (f, ng, r, c))
    else:
        raise NoPathError(f"goal {goal} is not in the connected component of start {start}")

    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()
    if field_values is not None:
        steps = np.array([field_values[r, c] for c, r in path[1:]])
    else:
        steps = np.zeros(len(path) - 1)
    return Trajectory(
        path, actions_from_path(path, actions), steps, method="astar",
        provenance={"goal": list(goal), "cost": g_best[goal], "heuristic_scale": scale,
                    "heuristic_cap_engaged": cap_engaged},
    )


def horizon_cost(path_steps: np.ndarray, shift: float, horizon: int) -> float:
    """Cumulative shifted cost over exactly ``horizon`` steps: cut longer paths, and
    repeat the final step's cost for the stay steps after arrival."""
    steps = list(path_steps[:horizon])
    if len(steps) < horizon:
        steps += [steps[-1] if steps else 0.0] * (horizon - len(steps))
    return float(sum(shift - v for v in steps))


def approx_plan(request: PlanRequest, model: SpatialConceptModel, costmap: CostMap,
                J: int = 10) -> Trajectory:
    """A* toward each of the top-J candidates, then keep the candidate trajectory with the
    least cumulative cost over the planning horizon (ties: better-ranked candidate)."""
    if not costmap.traversable(request.start):
        raise ValidationError(f"start {request.start} is not a traversable cell")
    field_values = emission_log_field(model, costmap, request.instruction)
    shift = float(field_values[np.isfinite(field_values)].max())
    start_value = float(field_values[request.start[1], request.start[0]])
    candidates = goal_candidates(model, costmap, request.instruction, J)
    config = AStarConfig.approximate(request.actions)
    best = None
    summary = []
    for rank, cand in enumerate(candidates):
        entry = dict(cand.to_dict(), path_cost=None, horizon_cost=None)
        summary.append(entry)
        try:
            traj = astar_plan(request.start, cand.cell, costmap, field_values, config)
        except PlanningError:
            continue
        steps = traj.step_log_likelihoods if len(traj) else np.array([start_value])
        cost = horizon_cost(steps, shift, request.horizon)
        entry.update(path_cost=traj.provenance["cost"], horizon_cost=cost)
        if best is None or cost < best[2]:
            best = (rank, traj, cost)
    if best is None:
        raise NoPathError("no goal candidate is reachable from the start")
    rank, traj, _ = best
    traj.method = "B"
    traj.provenance.update({"method": "B", "candidates": summary, "selected": rank})
    return traj


def baseline_spatial_concept(request: PlanRequest, model: SpatialConceptModel, costmap: CostMap,
                             costmap_weight: float = 1.0) -> Trajectory:
    """Goal = the most likely mean's cell, unrelocated; A* with unit-plus-cost-map costs."""
    best = goal_candidates(model, costmap, request.instruction, J=1, relocate=False)[0]
    if not costmap.traversable(best.cell):
        raise GoalInfeasibleError(f"most likely mean lies on non-traversable cell {best.cell}")
    field_values = emission_log_field(model, costmap, request.instruction)
    traj = astar_plan(request.start, best.cell, costmap, field_values,
                      AStarConfig.baseline(request.actions, costmap_weight))
    traj.method = "C"
    traj.provenance.update({"method": "C", "candidates": [best.to_dict()]})
    return traj


def _goal_from_records(records: Sequence[TrainingRecord], costmap: CostMap, seed: int, method: str):
    rng = np.random.default_rng(seed)
    pick = int(rng.integers(len(records)))
    rec = records[pick]
    cell = costmap.grid.world_to_cell(*rec.position)
    if not costmap.traversable(cell):
        raise GoalInfeasibleError(
            f"sampled training position {rec.position} maps to non-traversable cell {cell}"
        )
    return pick, cell


def _record_baseline(request, records, costmap, seed, method, field_values, costmap_weight):
    if not costmap.traversable(request.start):
        raise ValidationError(f"start {request.start} is not a traversable cell")
    pick, cell = _goal_from_records(records, costmap, seed, method)
    traj = astar_plan(request.start, cell, costmap, field_values,
                      AStarConfig.baseline(request.actions, costmap_weight))
    traj.method = method
    traj.provenance.update({"method": method, "seed": seed, "record": pick})
    return traj


def baseline_database(request: PlanRequest, training: Sequence[TrainingRecord], costmap: CostMap,
                      seed: int, field_values: Optional[np.ndarray] = None,
                      costmap_weight: float = 1.0) -> Trajectory:
    """Goal = position of a uniformly drawn training record sharing a word with the instruction."""
    words = set(request.instruction.counts)
    matches = [r for r in training if words.intersection(r.words)]
    if not matches:
        raise GoalInfeasibleError("no training record contains an instruction word")
    return _record_baseline(request, matches, costmap, seed, "D", field_values, costmap_weight)


def baseline_random(request: PlanRequest, training: Sequence[TrainingRecord], costmap: CostMap,
                    seed: int, field_values: Optional[np.ndarray] = None,
                    costmap_weight: float = 1.0) -> Trajectory:
    """Goal = position of a uniformly drawn training record (chance level)."""
    if not training:
        raise GoalInfeasibleError("training set is empty")
    return _record_baseline(request, list(training), costmap, seed, "E", field_values, costmap_weight)
