"""Fractional-order PID benchmarking on a feedback-linearized two-tank plant."""

__version__ = "0.1.0"

from .controllers import ControllerParams, ControllerState, controller_step, preset, simc_tune
from .errors import (
    ConfigurationError,
    FracbenchError,
    InvalidParameterError,
    InvalidStateError,
    SingularLoopError,
    SingularStateError,
)
from .factorial import (
    FactorialTable,
    InfluenceReport,
    influence,
    measurement_factor,
    reproduce_paper_tables,
    run_design,
)
from .fracops import gl_apply, gl_weights, s_power
from .plant import TankState, TransferFunction, design_plant, lie_bundle, linearizing_control
from .simloop import FactorLevels, PlantMode, ResponseMetrics, SimConfig, SimTrace, metrics, simulate
from .tuning import Family, FrequencySpec, TuningResult, tune

__all__ = [
    "ConfigurationError", "ControllerParams", "ControllerState", "FactorLevels", "FactorialTable",
    "Family", "FracbenchError", "FrequencySpec", "InfluenceReport", "InvalidParameterError",
    "InvalidStateError", "PlantMode", "ResponseMetrics", "SimConfig", "SimTrace",
    "SingularLoopError", "SingularStateError", "TankState", "TransferFunction", "TuningResult",
    "controller_step", "design_plant", "gl_apply", "gl_weights", "influence", "lie_bundle",
    "linearizing_control", "measurement_factor", "metrics", "preset", "reproduce_paper_tables",
    "run_design", "s_power", "simc_tune", "simulate", "tune",
]
