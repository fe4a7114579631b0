"""Occupancy-grid maps, their PGM/YAML files, and the probabilistic cost map.

Grid cells are addressed as ``(col, row)`` with row 0 at the bottom of the map
(smallest world y), matching the world frame. Arrays are indexed ``[row, col]``.
Image row 0 is the top of the map, so rasters are flipped on load and save.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Tuple

import numpy as np
import yaml
from scipy import ndimage

from conceptnav.errors import MapFormatError, ValidationError

Cell = Tuple[int, int]

DEFAULT_ROBOT_RADIUS = 0.215
DEFAULT_INFLATION_RADIUS = 0.6

# map_saver conventions; 205 sits between the default thresholds.
_FREE_PIXEL = 254
_OCCUPIED_PIXEL = 0
_UNKNOWN_PIXEL = 205


class CellState(enum.IntEnum):
    FREE = 0
    OCCUPIED = 100
    UNKNOWN = -1


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Discretized environment map with world georeferencing.

    ``cells`` has shape ``(height, width)`` and holds :class:`CellState` values.
    ``origin`` is the world position (meters) of the outer corner of cell (0, 0).
    """

    width: int
    height: int
    resolution: float
    origin: Tuple[float, float]
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ValidationError(f"resolution must be positive, got {self.resolution}")
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.size != self.width * self.height:
            raise ValidationError(
                f"cells length {cells.size} != width*height {self.width * self.height}"
            )
        cells = cells.reshape(self.height, self.width)
        allowed = np.isin(cells, [s.value for s in CellState])
        if not allowed.all():
            raise ValidationError("cells contain values outside {Free, Occupied, Unknown}")
        object.__setattr__(self, "cells", _frozen(cells))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))

    @classmethod
    def from_array(cls, cells, resolution: float = 1.0, origin=(0.0, 0.0)) -> "OccupancyGrid":
        cells = np.asarray(cells)
        return cls(cells.shape[1], cells.shape[0], resolution, tuple(origin), cells)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.resolution == other.resolution
            and self.origin == other.origin
            and np.array_equal(self.cells, other.cells)
        )

    def __hash__(self):
        return hash((self.width, self.height, self.resolution, self.origin, self.cells.tobytes()))

    def in_bounds(self, cell: Cell) -> bool:
        col, row = cell
        return 0 <= col < self.width and 0 <= row < self.height

    def state(self, cell: Cell) -> CellState:
        col, row = cell
        return CellState(int(self.cells[row, col]))

    def cell_to_world(self, cell: Cell) -> Tuple[float, float]:
        """World coordinates of the cell center."""
        col, row = cell
        ox, oy = self.origin
        return (ox + (col + 0.5) * self.resolution, oy + (row + 0.5) * self.resolution)

    def world_to_cell(self, x: float, y: float) -> Cell:
        """Cell containing a world point; may be out of bounds."""
        ox, oy = self.origin
        return (math.floor((x - ox) / self.resolution), math.floor((y - oy) / self.resolution))

    def cell_centers(self) -> np.ndarray:
        """World centers of every cell, shape ``(height, width, 2)``."""
        ox, oy = self.origin
        xs = ox + (np.arange(self.width) + 0.5) * self.resolution
        ys = oy + (np.arange(self.height) + 0.5) * self.resolution
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)


@dataclass(frozen=True, eq=False)
class CostMap:
    """Per-cell traversability probability p(x | m) on the geometry of a grid."""

    grid: OccupancyGrid = field(repr=False)
    values: np.ndarray = field(repr=False)
    robot_radius: float = DEFAULT_ROBOT_RADIUS
    inflation_radius: float = DEFAULT_INFLATION_RADIUS

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValidationError(f"cost map shape {values.shape} != grid shape {self.grid.shape}")
        if np.any(~np.isfinite(values)) or values.min(initial=0.0) < 0 or values.max(initial=0.0) > 1:
            raise ValidationError("cost map values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape

    def value(self, cell: Cell) -> float:
        col, row = cell
        return float(self.values[row, col])

    def traversable(self, cell: Cell) -> bool:
        return self.grid.in_bounds(cell) and self.value(cell) > 0

    def scaled(self, factor: float) -> "CostMap":
        return CostMap(self.grid, self.values * factor, self.robot_radius, self.inflation_radius)


# --------------------------------------------------------------------------- PGM / YAML


def _pgm_tokens(data: bytes):
    """Yield (token, end_offset) pairs from a PGM header, skipping comments."""
    pos = 0
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
                pos += 1
            yield data[start:pos], pos


def read_pgm(data: bytes) -> np.ndarray:
    """Parse a P2 or P5 PGM into a ``(rows, cols)`` uint8 array in image order."""
    tokens = _pgm_tokens(data)
    header = []
    end = 0
    try:
        for _ in range(4):
            tok, end = next(tokens)
            header.append(tok)
    except StopIteration:
        raise MapFormatError("pgm header", "truncated header") from None
    magic = header[0]
    if magic not in (b"P2", b"P5"):
        raise MapFormatError("pgm magic", f"expected P2 or P5, got {magic!r}")
    try:
        width, height, maxval = (int(t) for t in header[1:])
    except ValueError:
        raise MapFormatError("pgm header", f"non-integer dimension in {header[1:]!r}") from None
    if width < 1 or height < 1:
        raise MapFormatError("pgm dimensions", f"{width}x{height}")
    if not 0 < maxval < 256:
        raise MapFormatError("pgm maxval", f"only 8-bit images are supported, got {maxval}")
    count = width * height
    if magic == b"P5":
        raster = data[end + 1:end + 1 + count]
        if len(raster) != count:
            raise MapFormatError("pgm raster", f"expected {count} bytes, found {len(raster)}")
        pixels = np.frombuffer(raster, dtype=np.uint8)
    else:
        values = [int(tok) for tok, _ in tokens]
        if len(values) != count:
            raise MapFormatError("pgm raster", f"expected {count} values, found {len(values)}")
        pixels = np.asarray(values)
        if pixels.min() < 0 or pixels.max() > maxval:
            raise MapFormatError("pgm raster", "pixel value outside [0, maxval]")
        pixels = pixels.astype(np.uint8)
    if pixels.max(initial=0) > maxval:
        raise MapFormatError("pgm raster", "pixel value exceeds maxval")
    if maxval != 255:
        pixels = np.round(pixels.astype(float) * 255.0 / maxval).astype(np.uint8)
    return pixels.reshape(height, width)


def write_pgm(pixels: np.ndarray) -> bytes:
    """Binary (P5) PGM bytes for a ``(rows, cols)`` uint8 array in image order."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    rows, cols = pixels.shape
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes()


_REQUIRED_META = ("resolution", "origin", "occupied_thresh", "free_thresh", "negate")


def _parse_metadata(metadata: bytes | str) -> dict:
    text = metadata.decode("utf-8") if isinstance(metadata, bytes) else metadata
    try:
        meta = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise MapFormatError("metadata", f"invalid YAML: {exc}") from None
    if not isinstance(meta, dict):
        raise MapFormatError("metadata", "expected a key-value mapping")
    for key in _REQUIRED_META:
        if key not in meta:
            raise MapFormatError(key, "missing metadata key")
    try:
        resolution = float(meta["resolution"])
    except (TypeError, ValueError):
        raise MapFormatError("resolution", f"not a number: {meta['resolution']!r}") from None
    if not resolution > 0:
        raise MapFormatError("resolution", f"must be positive, got {resolution}")
    origin = meta["origin"]
    if not isinstance(origin, (list, tuple)) or len(origin) < 2:
        raise MapFormatError("origin", f"expected [x, y(, yaw)], got {origin!r}")
    try:
        origin = (float(origin[0]), float(origin[1]))
        occ = float(meta["occupied_thresh"])
        free = float(meta["free_thresh"])
    except (TypeError, ValueError) as exc:
        raise MapFormatError("metadata", str(exc)) from None
    negate = meta["negate"]
    if negate not in (0, 1, True, False):
        raise MapFormatError("negate", f"expected 0 or 1, got {negate!r}")
    return {
        "resolution": resolution,
        "origin": origin,
        "occupied_thresh": occ,
        "free_thresh": free,
        "negate": int(negate),
        "image": meta.get("image"),
    }


def load_map(map_image: bytes, metadata: bytes | str) -> OccupancyGrid:
    """Build an :class:`OccupancyGrid` from PGM bytes and map_server-style YAML."""
    meta = _parse_metadata(metadata)
    pixels = read_pgm(map_image)
    gray = pixels.astype(float)
    p_occ = gray / 255.0 if meta["negate"] else (255.0 - gray) / 255.0
    cells = np.full(pixels.shape, CellState.UNKNOWN, dtype=np.int8)
    cells[p_occ > meta["occupied_thresh"]] = CellState.OCCUPIED
    cells[p_occ < meta["free_thresh"]] = CellState.FREE
    return OccupancyGrid.from_array(np.flipud(cells), meta["resolution"], meta["origin"])


def save_map(grid: OccupancyGrid, image_name: str = "map.pgm") -> Tuple[bytes, bytes]:
    """Serialize to ``(pgm_bytes, yaml_bytes)``; the inverse of :func:`load_map`."""
    pixels = np.full(grid.shape, _UNKNOWN_PIXEL, dtype=np.uint8)
    pixels[grid.cells == CellState.FREE] = _FREE_PIXEL
    pixels[grid.cells == CellState.OCCUPIED] = _OCCUPIED_PIXEL
    meta = (
        f"image: {image_name}\n"
        f"resolution: {grid.resolution!r}\n"
        f"origin: [{grid.origin[0]!r}, {grid.origin[1]!r}, 0.0]\n"
        "negate: 0\n"
        "occupied_thresh: 0.65\n"
        "free_thresh: 0.196\n"
    )
    return write_pgm(np.flipud(pixels)), meta.encode("utf-8")


def read_map_files(pgm_path, yaml_path) -> OccupancyGrid:
    with open(pgm_path, "rb") as img, open(yaml_path, "rb") as meta:
        return load_map(img.read(), meta.read())


def write_map_files(grid: OccupancyGrid, pgm_path, yaml_path) -> None:
    import os

    pgm, meta = save_map(grid, os.path.basename(str(pgm_path)))
    with open(pgm_path, "wb") as f:
        f.write(pgm)
    with open(yaml_path, "wb") as f:
        f.write(meta)


# --------------------------------------------------------------------------- cost map


def obstacle_distance(grid: OccupancyGrid) -> np.ndarray:
    """Exact Euclidean distance (meters) from each cell center to the nearest occupied cell center.

    ``inf`` everywhere when the grid has no occupied cell.
    """
    occupied = grid.cells == CellState.OCCUPIED
    if not occupied.any():
        return np.full(grid.shape, np.inf)
    _, (near_r, near_c) = ndimage.distance_transform_edt(~occupied, return_indices=True)
    rows, cols = np.indices(grid.shape)
    sq = (rows - near_r) ** 2 + (cols - near_c) ** 2
    return grid.resolution * np.sqrt(sq.astype(float))


def ramp_value(distance: float | np.ndarray, robot_radius: float, inflation_radius: float):
    """Linear clearance ramp: 0 at or inside the robot radius, 1 beyond the inflation radius."""
    d = np.asarray(distance, dtype=float)
    if inflation_radius == robot_radius:
        out = np.where(d > robot_radius, 1.0, 0.0)
    else:
        with np.errstate(invalid="ignore"):
            out = np.clip((d - robot_radius) / (inflation_radius - robot_radius), 0.0, 1.0)
        out = np.where(np.isinf(d), 1.0, out)
        out = np.where(d <= robot_radius, 0.0, out)
    return out


def build_costmap(
    grid: OccupancyGrid,
    robot_radius: float = DEFAULT_ROBOT_RADIUS,
    inflation_radius: float = DEFAULT_INFLATION_RADIUS,
) -> CostMap:
    """Derive p(x | m): zero on occupied/unknown cells and within the robot radius of
    an obstacle, rising linearly to one at the inflation radius."""
    if robot_radius < 0 or inflation_radius < 0:
        raise ValidationError("radii must be non-negative")
    if inflation_radius < robot_radius:
        raise ValidationError("inflation_radius must be >= robot_radius")
    values = ramp_value(obstacle_distance(grid), robot_radius, inflation_radius)
    values[grid.cells != CellState.FREE] = 0.0
    return CostMap(grid, values, float(robot_radius), float(inflation_radius))


# --------------------------------------------------------------------------- field export


def _format_value(v: float) -> str:
    return repr(float(v))


def export_field(field_values, fmt: str = "csv") -> bytes:
    """Serialize a 2-D real field. Rows are written in the order given.

    CSV uses Python float repr (``-inf`` for the obstacle sentinel). PGM rescales
    finite values to 0..255; ``-inf`` renders 0 and a constant field renders 255.
    """
    arr = np.asarray(field_values, dtype=float)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.size == 0:
        raise ValidationError("cannot export an empty field")
    if np.isnan(arr).any() or np.isposinf(arr).any():
        raise ValidationError("field values must be finite or -inf")
    fmt = fmt.lower()
    if fmt == "csv":
        buf = io.StringIO()
        for row in arr:
            buf.write(",".join(_format_value(v) for v in row))
            buf.write("\n")
        return buf.getvalue().encode("ascii")
    if fmt == "pgm":
        finite = np.isfinite(arr)
        pixels = np.zeros(arr.shape, dtype=np.uint8)
        if finite.any():
            lo, hi = arr[finite].min(), arr[finite].max()
            if hi == lo:
                pixels[finite] = 255
            else:
                scaled = np.rint((arr[finite] - lo) / (hi - lo) * 255.0)
                pixels[finite] = scaled.astype(np.uint8)
        return write_pgm(pixels)
    raise ValidationError(f"unknown export format {fmt!r}")


def free_cells(costmap: CostMap) -> Iterable[Cell]:
    rows, cols = np.nonzero(costmap.values > 0)
    return [(int(c), int(r)) for r, c in zip(rows, cols)]
