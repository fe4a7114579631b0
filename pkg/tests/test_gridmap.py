import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptnav.errors import MapFormatError, ValidationError
from conceptnav.gridmap import (
    CellState,
    OccupancyGrid,
    build_costmap,
    export_field,
    load_map,
    read_pgm,
    save_map,
)

from conftest import open_grid
from oracles import brute_force_costmap

META = b"image: m.pgm\nresolution: 0.05\norigin: [-10.0, -10.0, 0.0]\nnegate: 0\noccupied_thresh: 0.65\nfree_thresh: 0.196\n"


def pgm(width, height, pixels):
    return f"P5\n{width} {height}\n255\n".encode() + bytes(pixels)


def test_threshold_mapping_of_2x2_image():
    grid = load_map(pgm(2, 2, [254, 0, 205, 128]), META)
    # Image rows are top-down, grid rows bottom-up.
    image_order = np.flipud(grid.cells).ravel().tolist()
    assert image_order == [CellState.FREE, CellState.OCCUPIED, CellState.UNKNOWN, CellState.UNKNOWN]


def test_ascii_pgm_with_comments():
    data = b"P2\n# a comment\n2 1\n255\n254 0\n"
    assert read_pgm(data).tolist() == [[254, 0]]


def test_negate_inverts_occupancy():
    meta = META.replace(b"negate: 0", b"negate: 1")
    grid = load_map(pgm(2, 1, [254, 0]), meta)
    assert grid.cells[0].tolist() == [CellState.OCCUPIED, CellState.FREE]


def test_cell_origin_maps_to_cell_center():
    grid = load_map(pgm(2, 2, [254] * 4), META)
    x, y = grid.cell_to_world((0, 0))
    assert x == pytest.approx(-9.975, abs=1e-12)
    assert y == pytest.approx(-9.975, abs=1e-12)
    assert grid.world_to_cell(x, y) == (0, 0)


def test_all_free_200x200_round_trip_is_bit_identical():
    grid = load_map(pgm(200, 200, [254] * 40000), META)
    image, meta = save_map(grid, "m.pgm")
    again = load_map(image, meta)
    assert again == grid
    assert save_map(again, "m.pgm") == (image, meta)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.data())
def test_round_trip_random_grids(width, height, data):
    states = data.draw(st.lists(st.sampled_from([0, 100, -1]), min_size=width * height,
                                max_size=width * height))
    cells = np.array(states, dtype=np.int8).reshape(height, width)
    grid = OccupancyGrid.from_array(cells, 0.1, (1.5, -2.0))
    assert load_map(*save_map(grid)) == grid


@pytest.mark.parametrize("missing", ["resolution", "origin", "occupied_thresh", "free_thresh", "negate"])
def test_missing_metadata_key_is_named(missing):
    meta = b"\n".join(l for l in META.splitlines() if not l.startswith(missing.encode()))
    with pytest.raises(MapFormatError, match=missing):
        load_map(pgm(1, 1, [254]), meta)


@pytest.mark.parametrize("data", [b"P6\n1 1\n255\n\x00", b"P5\n2 2\n255\n\x00", b"P5\n1", b"P5\nx 1\n255\n\x00"])
def test_malformed_pgm(data):
    with pytest.raises(MapFormatError):
        load_map(data, META)


def test_degenerate_inflation_single_obstacle():
    cells = np.zeros((5, 5), dtype=np.int8)
    cells[2, 3] = CellState.OCCUPIED
    cm = build_costmap(OccupancyGrid.from_array(cells), 0.0, 0.0)
    expected = np.ones((5, 5))
    expected[2, 3] = 0.0
    np.testing.assert_array_equal(cm.values, expected)


def test_corridor_ramp():
    cells = np.zeros((1, 6), dtype=np.int8)
    cells[0, 0] = CellState.OCCUPIED
    cm = build_costmap(OccupancyGrid.from_array(cells, 1.0), 0.5, 2.5)
    # (d - 0.5) / 2 clamped: d = 0, 1, 2, 3, 4, 5
    assert cm.values[0].tolist() == [0.0, 0.25, 0.75, 1.0, 1.0, 1.0]


def test_all_free_map_is_all_ones():
    cm = build_costmap(open_grid(7, 4, 0.05))
    assert np.all(cm.values == 1.0)


def test_unknown_cells_are_zero():
    cells = np.zeros((3, 3), dtype=np.int8)
    cells[1, 1] = CellState.UNKNOWN
    cm = build_costmap(OccupancyGrid.from_array(cells), 0.0, 0.0)
    assert cm.values[1, 1] == 0.0 and cm.values.sum() == 8.0


@pytest.mark.parametrize("rr,ir", [(-0.1, 1.0), (0.1, -1.0), (0.5, 0.2)])
def test_bad_radii(rr, ir):
    with pytest.raises(ValidationError):
        build_costmap(open_grid(3, 3), rr, ir)


def test_costmap_matches_brute_force_distances(rng):
    for _ in range(20):
        h, w = rng.integers(1, 33, size=2)
        cells = np.where(rng.random((h, w)) < 0.1, CellState.OCCUPIED, CellState.FREE).astype(np.int8)
        cells[rng.random((h, w)) < 0.03] = CellState.UNKNOWN
        res = float(rng.choice([0.05, 0.1, 1.0]))
        rr, ir = sorted(rng.uniform(0, 8 * res, size=2))
        cm = build_costmap(OccupancyGrid.from_array(cells, res), rr, ir)
        np.testing.assert_array_equal(cm.values, brute_force_costmap(cells, res, rr, ir))


def test_costmap_monotone_in_inflation_radius(rng):
    cells = np.where(rng.random((20, 20)) < 0.08, CellState.OCCUPIED, CellState.FREE).astype(np.int8)
    grid = OccupancyGrid.from_array(cells, 0.1)
    small = build_costmap(grid, 0.1, 0.3).values
    large = build_costmap(grid, 0.1, 0.9).values
    assert np.all(large <= small)


def test_export_linear_rescale():
    out = export_field(np.array([[0.0, 1.0], [2.0, 3.0]]), "pgm")
    assert read_pgm(out).ravel().tolist() == [0, 85, 170, 255]


def test_export_constant_field_is_white():
    assert set(read_pgm(export_field(np.full((3, 2), -4.2), "pgm")).ravel()) == {255}


def test_export_neg_inf_token():
    text = export_field(np.array([[0.5, -np.inf]]), "csv").decode()
    assert text.strip().split(",") == ["0.5", "-inf"]
    assert read_pgm(export_field(np.array([[0.5, -np.inf, 1.5]]), "pgm")).ravel().tolist() == [0, 0, 255]


@pytest.mark.parametrize("bad", [np.zeros((0, 0)), np.array([[np.nan]]), np.array([[np.inf]])])
def test_export_rejects_bad_fields(bad):
    with pytest.raises(ValidationError):
        export_field(bad, "csv")


def test_export_unknown_format():
    with pytest.raises(ValidationError):
        export_field(np.zeros((1, 1)), "png")
