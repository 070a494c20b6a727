"""Indoor navigation stack: topological-semantic maps, coarse-to-fine
localization, rule-based rewards, signed distance fields, a flow-matching
local planner, odometry fusion, and a deterministic grid-world simulator."""

__version__ = "0.1.0"

from . import esdf, geom, localization, odometry, planner, rewards, sim, topomap  # noqa: F401
from .errors import AstraError  # noqa: F401
