"""Event-driven simulation and design relations for a two-port LLC converter."""

from .analysis import (
    PowerReport,
    ZvsInfeasible,
    ZvsReport,
    magnetizing_peak_current,
    power_report,
    required_dead_time,
    resonant_frequency,
    secondary_resonant_frequency,
    vcr_max,
    zvs_report,
)
from .engine import SimSettings, SimulationError, Trace, run_to_steady_state, simulate
from .model import (
    AffineSystem,
    Bridge,
    ConductionState,
    ConverterParams,
    LoadSpec,
    Rect,
    StateVector,
    assemble_system,
)

__version__ = "0.1.0"
