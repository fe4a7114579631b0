import csv
import io

import numpy as np
import pytest

from conceptnav.concepts import Instruction, emission_log_field
from conceptnav.errors import ValidationError
from conceptnav.harness import (
    ExperimentSpec,
    RoomSpec,
    Scenario,
    TrialResult,
    aggregate,
    build_trials,
    draw_house,
    format_table,
    generate_environment,
    loglik_series,
    method_id,
    run_scenario,
    table_csv,
)
from conceptnav.gridmap import build_costmap

ROOMS = [
    RoomSpec(("bedroom",), (0, 6, 5, 10), door="south"),
    RoomSpec(("bedroom",), (7, 6, 12, 10), door="south"),
    RoomSpec(("bedroom",), (14, 6, 19, 10), door="south"),
    RoomSpec(("kitchen",), (0, 0, 6, 3.5), door="north"),
]


def scenario(start_xy=(2.5, 4.75), methods="ABCDE", seed=0, rooms=ROOMS, instruction="bedroom", horizon=80):
    grid, training, regions = generate_environment(rooms, (20, 10), 0.25, seed)
    cm = build_costmap(grid)
    return Scenario(cm, grid.world_to_cell(*start_xy), Instruction.from_words(instruction.split()), regions,
                    horizon, tuple(methods), seed, training)


def test_three_bedrooms_equal_weights():
    _, training, regions = generate_environment(ROOMS[:3], (20, 10), 0.25, 0)
    assert [r.name for r in regions] == ["bedroom"] * 3
    assert np.bincount([r.concept_id for r in training]).tolist() == [15, 15, 15]
    for rec in training:
        assert regions[rec.concept_id].contains(*rec.position)


def test_usage_weights_scale_observations():
    rooms = [RoomSpec(r.names, r.rect, w, r.door) for r, w in zip(ROOMS[:3], (1, 1, 4))]
    _, training, _ = generate_environment(rooms, (20, 10), 0.25, 0)
    counts = np.bincount([r.concept_id for r in training])
    assert counts.tolist() == [15, 15, 60]


def test_synonyms_on_one_room():
    rooms = [RoomSpec(("living-room", "front-of-the-TV"), (0, 0, 6, 5), door="east")]
    _, training, regions = generate_environment(rooms, (10, 10), 0.25, 0)
    assert {r.name for r in regions} == {"living-room", "front-of-the-TV"}
    assert all(rec.words == ("living-room", "front-of-the-TV") for rec in training)


def test_generator_is_deterministic():
    a = generate_environment(ROOMS, (20, 10), 0.25, 5)
    b = generate_environment(ROOMS, (20, 10), 0.25, 5)
    assert a[0] == b[0] and a[1] == b[1]


@pytest.mark.parametrize("rooms", [
    [RoomSpec("a", (0, 0, 5, 5)), RoomSpec("b", (4, 4, 8, 8))],
    [RoomSpec("a", (0, 0, 25, 5))],
    [RoomSpec("a", (0, 0, 1, 1), door="north")],
    [RoomSpec("a", (0, 0, 5, 5), door="south")],
])
def test_bad_layouts(rooms):
    with pytest.raises(ValidationError):
        draw_house(rooms, (20, 10), 0.25, door_width=1.2)


def test_doors_connect_every_room():
    from conceptnav.harness import bfs_distances
    from conceptnav.planning import ActionSet

    grid, _, regions = generate_environment(ROOMS, (20, 10), 0.25, 0)
    cm = build_costmap(grid)
    dist = bfs_distances(cm, grid.world_to_cell(10, 4.75), ActionSet.von_neumann())
    for region in regions:
        col, row = grid.world_to_cell(*region.anchor)
        assert dist[row, col] > 0


def test_outcomes_near_far_and_infeasible():
    sc = scenario(start_xy=(2.5, 4.75))
    results = {r.method: r for r in run_scenario(sc)}
    assert results["A"].success and results["A"].nearest_success
    assert results["A"].path_length > 0
    # a trajectory ending in the far bedroom
    far = sc.costmap.grid.world_to_cell(16.5, 8)
    from conceptnav.search import AStarConfig, astar_plan
    from conceptnav.harness import evaluate_trajectory, nearest_region, target_regions

    traj = astar_plan(sc.start, far, sc.costmap, None, AStarConfig.baseline(sc.actions))
    field = emission_log_field(sc.fitted_model(), sc.costmap, sc.instruction)
    near = nearest_region(target_regions(sc.regions, sc.instruction), sc.costmap, sc.start, sc.actions)
    res = evaluate_trajectory("C", traj, sc, field, near)
    assert res.success and not res.nearest_success


def test_goal_infeasible_recorded_not_raised():
    rooms = [RoomSpec(r.names, r.rect, r.weight, r.door) for r in ROOMS]
    grid, training, regions = generate_environment(rooms, (20, 10), 0.25, 0)
    # shift every bedroom record onto the outer wall
    from conceptnav.dataset import TrainingRecord

    bad = [TrainingRecord((0.05, r.position[1]), r.words, r.concept_id, r.position_id)
           if "bedroom" in r.words else r for r in training]
    sc = Scenario(build_costmap(grid), grid.world_to_cell(10, 4.75), Instruction({"bedroom": 1}), regions,
                  40, ("D",), 0, bad)
    (res,) = run_scenario(sc)
    assert not res.success and res.reason == "goal-infeasible"


def test_run_scenario_is_deterministic():
    a = [r.to_dict() for r in run_scenario(scenario(seed=3))]
    b = [r.to_dict() for r in run_scenario(scenario(seed=3))]
    assert a == b


def _result(method, success, near, pl=10):
    return TrialResult(method, success, near, pl, -1.0, np.zeros(3))


def test_metrics_table_shape():
    rs = [_result("A", True, n < 15) for n in range(20)]
    (m,) = aggregate(rs)
    assert (m.nsr, m.near_nsr, m.path_length) == (1.0, 0.75, 10.0)


def test_zero_successes_give_na_path_length():
    (m,) = aggregate([_result("E", False, False)] * 4)
    assert m.nsr == 0 and m.path_length is None
    assert "N/A" in format_table([m]) and "N/A" in table_csv([m])


def test_near_nsr_never_exceeds_nsr():
    sc = scenario(start_xy=(10, 4.75), seed=1)
    for m in aggregate(run_scenario(sc)):
        assert m.near_nsr <= m.nsr


def test_loglik_series_rows_and_optimality():
    sc = scenario(start_xy=(10, 4.75), seed=2, horizon=60)
    text = loglik_series(run_scenario(sc), 60)
    rows = list(csv.DictReader(io.StringIO(text)))
    by = {}
    for row in rows:
        by.setdefault(row["method"], []).append(row)
    for method, series in by.items():
        assert len(series) == 60
    final = {m: float(s[-1]["cumulative"]) for m, s in by.items()}
    assert all(final["A"] >= v - 1e-9 for v in final.values())


def test_padding_repeats_final_value():
    res = [r for r in run_scenario(scenario(methods="B", horizon=200)) if r.method == "B"][0]
    traj = res.trajectory
    steps = res.step_log_likelihoods
    assert len(traj) < 200
    assert np.all(steps[len(traj):] == steps[len(traj) - 1])


def test_method_aliases():
    assert [method_id(n) for n in ("viterbi", "astar", "sc", "db", "random", "b")] == list("ABCDEB")
    with pytest.raises(ValidationError):
        method_id("Z")


def test_experiment_spec_validation():
    with pytest.raises(ValidationError):
        ExperimentSpec.from_dict({"rooms": []})
    with pytest.raises(ValidationError):
        ExperimentSpec.from_dict({"rooms": [], "instruction": "a", "bogus": 1})
    spec = ExperimentSpec.from_dict({"rooms": [{"name": "a", "rect": [1, 1, 5, 5]}], "instruction": "a",
                                     "size": [10, 10], "trials": 2, "resolution": 0.25})
    trials = build_trials(spec)
    assert [t.seed for t in trials] == [0, 1]


def test_scenario_requires_named_regions():
    grid, training, regions = generate_environment(ROOMS, (20, 10), 0.25, 0)
    with pytest.raises(ValidationError):
        Scenario(build_costmap(grid), grid.world_to_cell(10, 4.75), Instruction({"garage": 1}), regions,
                 40, ("A",), 0, training)


def test_edge_room_with_non_dividing_resolution():
    grid = draw_house([RoomSpec("a", (15, 0, 20, 5), door="west")], (20, 20), 0.175)
    assert grid.width == 114 and grid.height == 114
