"""Synthetic home environments, trial execution and navigation metrics.

Metrics per method over a batch of trials:

* NSR       successes / trials, where success means the final state lies in a
            region named by the instruction;
* Near-NSR  successes that ended in the named region closest to the start
            (breadth-first path distance to the region anchor) / trials;
* PL        mean number of non-stay moves over successful trials.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from conceptnav.concepts import Instruction, SpatialConceptModel, as_instruction, emission_log_field
from conceptnav.dataset import TrainingRecord, has_assignments
from conceptnav.errors import ConceptNavError, ValidationError
from conceptnav.fitting import Hyperparameters, fit_fixed_assignments, fit_gibbs
from conceptnav.gridmap import (
    DEFAULT_INFLATION_RADIUS,
    DEFAULT_ROBOT_RADIUS,
    Cell,
    CellState,
    CostMap,
    OccupancyGrid,
    build_costmap,
)
from conceptnav.planning import ActionSet, PlanRequest, Trajectory, score_on_field, viterbi_on_field
from conceptnav.search import (
    approx_plan,
    baseline_database,
    baseline_random,
    baseline_spatial_concept,
)

METHODS = ("A", "B", "C", "D", "E")
METHOD_ALIASES = {"viterbi": "A", "astar": "B", "sc": "C", "db": "D", "random": "E"}
METHOD_LABELS = {
    "A": "Viterbi (exact)",
    "B": "A* (approx.)",
    "C": "Baseline (spatial concept)",
    "D": "Baseline (database)",
    "E": "Baseline (random)",
}
_SIDES = ("north", "south", "east", "west")


def method_id(name: str) -> str:
    key = METHOD_ALIASES.get(name, name.upper())
    if key not in METHODS:
        raise ValidationError(f"unknown method {name!r}")
    return key


Rect = Tuple[float, float, float, float]


@dataclass(frozen=True)
class RoomSpec:
    names: Tuple[str, ...]
    rect: Rect
    weight: float = 1.0
    door: Optional[str] = None

    def __post_init__(self):
        names = (self.names,) if isinstance(self.names, str) else tuple(self.names)
        if not names:
            raise ValidationError("a room needs at least one name")
        x0, y0, x1, y1 = (float(v) for v in self.rect)
        if not (x1 > x0 and y1 > y0):
            raise ValidationError(f"room rect {self.rect} has no area")
        if self.weight <= 0:
            raise ValidationError("room usage weight must be positive")
        if self.door is not None and self.door not in _SIDES:
            raise ValidationError(f"door side must be one of {_SIDES}")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "rect", (x0, y0, x1, y1))

    @classmethod
    def from_dict(cls, doc: dict) -> "RoomSpec":
        names = doc.get("names", doc.get("name"))
        return cls(names, tuple(doc["rect"]), float(doc.get("weight", 1.0)), doc.get("door"))


@dataclass(frozen=True)
class PlaceRegion:
    name: str
    rect: Rect
    anchor: Tuple[float, float]
    place: int = -1

    def __post_init__(self):
        x0, y0, x1, y1 = self.rect
        if not (x1 > x0 and y1 > y0):
            raise ValidationError("region rect needs positive area")
        if not self.contains(*self.anchor):
            raise ValidationError("region anchor must lie inside its rect")

    def contains(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.rect
        return x0 <= x <= x1 and y0 <= y <= y1


def _rects_overlap(a: Rect, b: Rect) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _room_cells(rect: Rect, resolution: float) -> Tuple[int, int, int, int]:
    x0, y0, x1, y1 = rect
    return (int(math.floor(x0 / resolution + 1e-9)), int(math.floor(y0 / resolution + 1e-9)),
            int(math.ceil(x1 / resolution - 1e-9)) - 1, int(math.ceil(y1 / resolution - 1e-9)) - 1)


def _default_door(rect: Rect, size: Tuple[float, float]) -> str:
    cx, cy = (rect[0] + rect[2]) / 2, (rect[1] + rect[3]) / 2
    dx, dy = size[0] / 2 - cx, size[1] / 2 - cy
    if abs(dx) > abs(dy):
        return "east" if dx > 0 else "west"
    return "north" if dy > 0 else "south"


def draw_house(rooms: Sequence[RoomSpec], size: Tuple[float, float], resolution: float,
               door_width: float = 1.2) -> OccupancyGrid:
    """Outer walls plus one walled rectangle per room, each with a centered door gap."""
    width = int(round(size[0] / resolution))
    height = int(round(size[1] / resolution))
    cells = np.full((height, width), CellState.FREE, dtype=np.int8)
    cells[[0, -1], :] = CellState.OCCUPIED
    cells[:, [0, -1]] = CellState.OCCUPIED
    for n, room in enumerate(rooms):
        x0, y0, x1, y1 = room.rect
        if x0 < 0 or y0 < 0 or x1 > size[0] + 1e-9 or y1 > size[1] + 1e-9:
            raise ValidationError(f"room {room.names[0]!r} lies outside the map")
        for other in rooms[:n]:
            if _rects_overlap(room.rect, other.rect):
                raise ValidationError(f"rooms {other.names[0]!r} and {room.names[0]!r} overlap")
        c0, r0, c1, r1 = _room_cells(room.rect, resolution)
        c1, r1 = min(c1, width - 1), min(r1, height - 1)
        cells[r0:r1 + 1, [c0, c1]] = CellState.OCCUPIED
        cells[[r0, r1], c0:c1 + 1] = CellState.OCCUPIED
        side = room.door or _default_door(room.rect, size)
        gap = max(1, int(math.ceil(door_width / resolution - 1e-9)))
        if side in ("north", "south"):
            row = r1 if side == "north" else r0
            span = (c0 + 1, c1 - 1)
            on_border = row in (0, height - 1)
        else:
            row = None
            col = c1 if side == "east" else c0
            span = (r0 + 1, r1 - 1)
            on_border = col in (0, width - 1)
        length = span[1] - span[0] + 1
        if on_border or gap > length:
            raise ValidationError(f"cannot place a {side} door in room {room.names[0]!r}")
        lo = span[0] + (length - gap) // 2
        if row is not None:
            cells[row, lo:lo + gap] = CellState.FREE
        else:
            cells[lo:lo + gap, col] = CellState.FREE
    return OccupancyGrid.from_array(cells, resolution, (0.0, 0.0))


def place_regions(rooms: Sequence[RoomSpec]) -> List[PlaceRegion]:
    regions = []
    for n, room in enumerate(rooms):
        x0, y0, x1, y1 = room.rect
        for name in room.names:
            regions.append(PlaceRegion(name, room.rect, ((x0 + x1) / 2, (y0 + y1) / 2), n))
    return regions


def sample_training(rooms: Sequence[RoomSpec], seed: int, samples_per_place: int = 15,
                    margin: float = 0.5, noise: float = 0.0) -> List[TrainingRecord]:
    """Per room, ``round(samples_per_place * weight)`` positions from a Gaussian centered in
    the room (sd a quarter of each side) truncated to the interior shrunk by ``margin``;
    every sample carries all the room's names. ``noise`` adds localization error."""
    rng = np.random.default_rng(seed)
    records = []
    for n, room in enumerate(rooms):
        x0, y0, x1, y1 = room.rect
        lo = np.array([x0 + margin, y0 + margin])
        hi = np.array([x1 - margin, y1 - margin])
        if np.any(hi <= lo):
            raise ValidationError(f"room {room.names[0]!r} is too small for the sampling margin")
        center = (lo + hi) / 2
        sd = np.array([x1 - x0, y1 - y0]) / 4
        count = max(1, int(round(samples_per_place * room.weight)))
        for _ in range(count):
            while True:
                p = rng.normal(center, sd)
                if np.all(p >= lo) and np.all(p <= hi):
                    break
            if noise > 0:
                p = p + rng.normal(0.0, noise, size=2)
            records.append(TrainingRecord((float(p[0]), float(p[1])), room.names, n, n))
    return records


def generate_environment(rooms: Sequence[RoomSpec], size: Tuple[float, float] = (20.0, 20.0),
                         resolution: float = 0.1, seed: int = 0, samples_per_place: int = 15,
                         door_width: float = 1.2, noise: float = 0.0):
    """Returns ``(grid, training records, regions)``; deterministic for a seed."""
    rooms = [r if isinstance(r, RoomSpec) else RoomSpec.from_dict(r) for r in rooms]
    grid = draw_house(rooms, size, resolution, door_width)
    training = sample_training(rooms, seed, samples_per_place, noise=noise)
    return grid, training, place_regions(rooms)


# --------------------------------------------------------------------------- trials


@dataclass
class Scenario:
    costmap: CostMap
    start: Cell
    instruction: Instruction
    regions: List[PlaceRegion]
    horizon: int = 200
    methods: Tuple[str, ...] = METHODS
    seed: int = 0
    training: Optional[List[TrainingRecord]] = None
    model: Optional[SpatialConceptModel] = None
    actions: ActionSet = field(default_factory=ActionSet.von_neumann)
    candidates: int = 10
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    gibbs_iters: int = 100
    trial: int = 0

    def __post_init__(self):
        self.instruction = as_instruction(self.instruction)
        self.methods = tuple(method_id(m) for m in self.methods)
        if self.model is None and not self.training:
            raise ValidationError("a scenario needs a model or training data")
        if any(m in ("D", "E") for m in self.methods) and not self.training:
            raise ValidationError("methods D and E need training data")
        named = {r.name for r in self.regions}
        missing = [w for w in self.instruction.counts if w not in named]
        if missing:
            raise ValidationError(f"instruction words without a region: {missing}")
        if not self.costmap.traversable(self.start):
            raise ValidationError(f"start {self.start} is not traversable")

    def fitted_model(self) -> SpatialConceptModel:
        if self.model is not None:
            return self.model
        if has_assignments(self.training):
            return fit_fixed_assignments(self.training, self.hyper)
        n = len({r.words for r in self.training})
        return fit_gibbs(self.training, self.hyper, n, n, self.gibbs_iters, self.seed)


@dataclass
class TrialResult:
    method: str
    success: bool
    nearest_success: bool
    path_length: int
    cumulative_log_likelihood: float
    step_log_likelihoods: np.ndarray
    reason: str = ""
    trial: int = 0
    final_state: Optional[Cell] = None
    trajectory: Optional[Trajectory] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "trial": self.trial,
            "method": self.method,
            "success": self.success,
            "nearest_success": self.nearest_success,
            "path_length": self.path_length,
            "cumulative_log_likelihood": self.cumulative_log_likelihood,
            "final_state": None if self.final_state is None else list(self.final_state),
            "reason": self.reason,
        }


def bfs_distances(costmap: CostMap, start: Cell, actions: ActionSet) -> np.ndarray:
    """Move counts from ``start`` over traversable cells; ``-1`` where unreachable."""
    passable = costmap.values > 0
    h, w = passable.shape
    dist = np.full((h, w), -1, dtype=np.int64)
    dist[start[1], start[0]] = 0
    queue = deque([start])
    moves = [o for _, o in actions.moves]
    while queue:
        col, row = queue.popleft()
        d = dist[row, col] + 1
        for dc, dr in moves:
            c, r = col + dc, row + dr
            if 0 <= c < w and 0 <= r < h and passable[r, c] and dist[r, c] < 0:
                dist[r, c] = d
                queue.append((c, r))
    return dist


def target_regions(regions: Sequence[PlaceRegion], instruction: Instruction) -> List[PlaceRegion]:
    return [r for r in regions if r.name in instruction.counts]


def nearest_region(regions: Sequence[PlaceRegion], costmap: CostMap, start: Cell,
                   actions: ActionSet) -> Optional[PlaceRegion]:
    """Target region whose anchor is fewest moves from the start (unreachable anchors last)."""
    dist = bfs_distances(costmap, start, actions)
    best, best_d = None, math.inf
    for region in regions:
        col, row = costmap.grid.world_to_cell(*region.anchor)
        d = math.inf
        if costmap.grid.in_bounds((col, row)) and dist[row, col] >= 0:
            d = float(dist[row, col])
        if best is None or d < best_d:
            best, best_d = region, d
    return best


def _plan(method: str, scenario: Scenario, model: SpatialConceptModel, field_values) -> Trajectory:
    request = PlanRequest(scenario.start, scenario.horizon, scenario.instruction, scenario.actions)
    if method == "A":
        traj = viterbi_on_field(field_values, request.start, request.horizon, request.actions)
        traj.method = "A"
        return traj
    if method == "B":
        return approx_plan(request, model, scenario.costmap, scenario.candidates)
    if method == "C":
        return baseline_spatial_concept(request, model, scenario.costmap)
    if method == "D":
        return baseline_database(request, scenario.training, scenario.costmap,
                                 scenario.seed, field_values)
    return baseline_random(request, scenario.training, scenario.costmap, scenario.seed, field_values)


def evaluate_trajectory(method: str, traj: Trajectory, scenario: Scenario, field_values,
                        nearest: Optional[PlaceRegion]) -> TrialResult:
    steps, total = score_on_field(traj.states, field_values, scenario.horizon)
    x, y = scenario.costmap.grid.cell_to_world(traj.final_state)
    entered = [r for r in target_regions(scenario.regions, scenario.instruction) if r.contains(x, y)]
    success = bool(entered)
    near = success and nearest is not None and any(r.rect == nearest.rect for r in entered)
    return TrialResult(method, success, near, traj.path_length(scenario.actions), total, steps,
                       trial=scenario.trial, final_state=traj.final_state, trajectory=traj)


def run_scenario(scenario: Scenario) -> List[TrialResult]:
    """Fit (if needed), plan with every requested method and score each outcome.

    Planner failures become unsuccessful results with a reason; they never abort the batch.
    """
    model = scenario.fitted_model()
    field_values = emission_log_field(model, scenario.costmap, scenario.instruction)
    targets = target_regions(scenario.regions, scenario.instruction)
    nearest = nearest_region(targets, scenario.costmap, scenario.start, scenario.actions)
    results = []
    for method in scenario.methods:
        try:
            traj = _plan(method, scenario, model, field_values)
        except ConceptNavError as exc:
            reason = getattr(exc, "reason", type(exc).__name__)
            results.append(TrialResult(method, False, False, 0, -math.inf,
                                       np.full(scenario.horizon, -math.inf), reason, scenario.trial))
            continue
        results.append(evaluate_trajectory(method, traj, scenario, field_values, nearest))
    return results


# --------------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class MethodMetrics:
    method: str
    trials: int
    nsr: float
    near_nsr: float
    path_length: Optional[float]

    def row(self) -> dict:
        return {
            "method": self.method,
            "label": METHOD_LABELS.get(self.method, self.method),
            "trials": self.trials,
            "NSR": self.nsr,
            "Near-NSR": self.near_nsr,
            "PL": self.path_length,
        }


def aggregate(results: Sequence[TrialResult]) -> List[MethodMetrics]:
    by_method: Dict[str, List[TrialResult]] = {}
    for r in results:
        by_method.setdefault(r.method, []).append(r)
    order = sorted(by_method, key=lambda m: (METHODS.index(m) if m in METHODS else len(METHODS), m))
    table = []
    for m in order:
        rs = by_method[m]
        ok = [r.path_length for r in rs if r.success]
        table.append(MethodMetrics(
            m, len(rs),
            sum(r.success for r in rs) / len(rs),
            sum(r.nearest_success for r in rs) / len(rs),
            (sum(ok) / len(ok)) if ok else None,
        ))
    return table


def _fmt(value: Optional[float], digits: int = 2) -> str:
    return "N/A" if value is None else f"{value:.{digits}f}"


def format_table(table: Sequence[MethodMetrics]) -> str:
    lines = [f"{'Method':<32}{'NSR':>6}{'Near-NSR':>10}{'PL':>9}"]
    for m in table:
        label = f"({m.method}) {METHOD_LABELS.get(m.method, m.method)}"
        lines.append(f"{label:<32}{_fmt(m.nsr):>6}{_fmt(m.near_nsr):>10}{_fmt(m.path_length):>9}")
    return "\n".join(lines) + "\n"


def table_csv(table: Sequence[MethodMetrics]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "trials", "NSR", "Near-NSR", "PL"])
    for m in table:
        writer.writerow([m.method, m.trials, repr(m.nsr), repr(m.near_nsr),
                         "N/A" if m.path_length is None else repr(m.path_length)])
    return buf.getvalue()


def loglik_series(results: Sequence[TrialResult], horizon: int) -> str:
    """CSV ``method,step,value,cumulative`` with exactly ``horizon`` rows per method.

    Values are averaged over the method's trials that produced a trajectory.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "step", "value", "cumulative"])
    by_method: Dict[str, List[np.ndarray]] = {}
    for r in results:
        if r.trajectory is not None:
            by_method.setdefault(r.method, []).append(np.asarray(r.step_log_likelihoods)[:horizon])
    for m in sorted(by_method, key=lambda k: (METHODS.index(k) if k in METHODS else 99, k)):
        mean = np.mean(np.stack(by_method[m]), axis=0)
        cumulative = np.cumsum(mean)
        for t in range(horizon):
            writer.writerow([m, t + 1, repr(float(mean[t])), repr(float(cumulative[t]))])
    return buf.getvalue()


# --------------------------------------------------------------------------- experiments


@dataclass
class ExperimentSpec:
    """A multi-trial experiment on one synthetic home; each trial redraws the
    training data and (unless fixed) the start from ``seed + trial``."""

    rooms: List[RoomSpec]
    instruction: Tuple[str, ...]
    size: Tuple[float, float] = (20.0, 20.0)
    resolution: float = 0.2
    horizon: int = 200
    methods: Tuple[str, ...] = METHODS
    seed: int = 0
    trials: int = 20
    start: Optional[Tuple[float, float]] = None
    candidates: int = 10
    samples_per_place: int = 15
    noise: float = 0.0
    door_width: float = 1.2
    robot_radius: float = DEFAULT_ROBOT_RADIUS
    inflation_radius: float = DEFAULT_INFLATION_RADIUS
    actions: str = "vonneumann"
    stay: bool = True

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        if not isinstance(doc, dict) or "rooms" not in doc or "instruction" not in doc:
            raise ValidationError("scenario needs 'rooms' and 'instruction'")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")
        kw = dict(doc)
        try:
            kw["rooms"] = [RoomSpec.from_dict(r) for r in doc["rooms"]]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad room entry: {exc!r}") from None
        instr = doc["instruction"]
        kw["instruction"] = tuple(instr.split() if isinstance(instr, str) else instr)
        for key in ("size", "start"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        if "methods" in kw:
            kw["methods"] = tuple(kw["methods"])
        spec = cls(**kw)
        if spec.trials < 1 or spec.horizon < 1:
            raise ValidationError("trials and horizon must be >= 1")
        return spec

    def action_set(self) -> ActionSet:
        if self.actions == "moore":
            return ActionSet.moore(self.stay)
        if self.actions == "vonneumann":
            return ActionSet.von_neumann(self.stay)
        raise ValidationError(f"unknown action set {self.actions!r}")


def hallway_cells(costmap: CostMap, rooms: Sequence[RoomSpec]) -> List[Cell]:
    """Traversable cells outside every room rectangle, row-major."""
    centers = costmap.grid.cell_centers()
    mask = costmap.values > 0
    for room in rooms:
        x0, y0, x1, y1 = room.rect
        inside = ((centers[..., 0] >= x0) & (centers[..., 0] <= x1)
                  & (centers[..., 1] >= y0) & (centers[..., 1] <= y1))
        mask &= ~inside
    rows, cols = np.nonzero(mask)
    return [(int(c), int(r)) for r, c in zip(rows, cols)]


def build_trials(spec: ExperimentSpec) -> List[Scenario]:
    grid = draw_house(spec.rooms, spec.size, spec.resolution, spec.door_width)
    costmap = build_costmap(grid, spec.robot_radius, spec.inflation_radius)
    regions = place_regions(spec.rooms)
    actions = spec.action_set()
    starts = hallway_cells(costmap, spec.rooms)
    if spec.start is None and not starts:
        raise ValidationError("no traversable hallway cell to start from")
    scenarios = []
    for t in range(spec.trials):
        seed = spec.seed + t
        training = sample_training(spec.rooms, seed, spec.samples_per_place, noise=spec.noise)
        if spec.start is not None:
            start = grid.world_to_cell(*spec.start)
        else:
            start = starts[int(np.random.default_rng([seed, 1]).integers(len(starts)))]
        scenarios.append(Scenario(costmap, start, Instruction.from_words(spec.instruction), regions,
                                  spec.horizon, spec.methods, seed, training, actions=actions,
                                  candidates=spec.candidates, trial=t))
    return scenarios


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> List[TrialResult]:
    scenarios = build_trials(spec)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            batches = list(pool.map(run_scenario, scenarios))
    else:
        batches = [run_scenario(s) for s in scenarios]
    return [r for batch in batches for r in batch]


def load_experiment(path) -> ExperimentSpec:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"scenario file is not valid JSON: {exc}") from None
    return ExperimentSpec.from_dict(doc)


def with_trials(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    return replace(spec, **changes)
