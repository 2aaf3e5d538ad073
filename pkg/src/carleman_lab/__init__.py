"""Simulator and verification lab for the multi-D Carleman kinetic system and its diffusive limit."""

from .interaction import RateSpec, collision_map, t_dissipativity_test
from .kinetic import KineticRun, advance
from .limit import LimitRun, advance_limit
from .model import Grid, KineticState, ModelParams, Region, make_grid

__all__ = [
    "Grid",
    "KineticRun",
    "KineticState",
    "LimitRun",
    "ModelParams",
    "RateSpec",
    "Region",
    "advance",
    "advance_limit",
    "collision_map",
    "make_grid",
    "t_dissipativity_test",
]

__version__ = "0.1.0"
