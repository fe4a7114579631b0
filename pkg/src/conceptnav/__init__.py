"""Word-instructed trajectory planning over spatial-concept models on occupancy grids."""

from conceptnav.concepts import (
    Instruction,
    SpatialConceptModel,
    emission_log_field,
    reward_field,
)
from conceptnav.gridmap import CostMap, OccupancyGrid, build_costmap, load_map
from conceptnav.planning import ActionSet, PlanRequest, Trajectory, viterbi_plan

__all__ = [
    "ActionSet",
    "CostMap",
    "Instruction",
    "OccupancyGrid",
    "PlanRequest",
    "SpatialConceptModel",
    "Trajectory",
    "build_costmap",
    "emission_log_field",
    "load_map",
    "reward_field",
    "viterbi_plan",
]

__version__ = "0.1.0"
