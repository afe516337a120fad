"""Navigation stack: traversability grid, RRT planner, tracking controller, simulator."""
from .control import Gains, Pose2D, Twist, control_law, control_step, heading_error, wrap_angle
from .grid import BLOCKED, TRAVERSABLE, UNKNOWN, GridParams, TravGrid, build_grid, inflate
from .rrt import (GoalBlocked, Path, PlanningError, PlanningFailed, RRTParams, RRTTree, StartBlocked,
                  rrt_plan, segment_free)
from .sim import SimParams, SimulationTimeout, Trajectory, simulate
from .svg import overlay_svg, write_overlay
