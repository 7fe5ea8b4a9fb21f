"""Forecast-assisted distributed price consensus for transactive energy communities."""

from .analytical import OptimalDispatch, projected_gradient_oracle, solve_centralized
from .consensus import CommGraph, InnovationMode, TuningSchedule, build_graph
from .consensus import run as run_consensus
from .model import (
    CostCoefficients,
    FlowDirection,
    Scenario,
    TecError,
    TimeSeries,
    VppSpec,
    default_vpps,
    direction_of,
)

__version__ = "0.1.0"
