"""Self-gravitating liquid drop solver."""

from .config import SimConfig, parse_config
from .eos import EquationOfState
from .errors import (CFLViolation, ConfigError, DomainError, GravdropError, IncompatibleData,
                     NoConvergence, NonInvertible, UnderResolved)
from .evolution import (Problem, compatibility, continue_windows, initial_window_data,
                        picard_solve)
from .grid import BallGrid
from .smoothing import TangentialSmoother
from .wave import build_basis

__version__ = "0.1.0"

__all__ = [
    "BallGrid", "CFLViolation", "ConfigError", "DomainError", "EquationOfState", "GravdropError",
    "IncompatibleData", "NoConvergence", "NonInvertible", "Problem", "SimConfig",
    "TangentialSmoother", "UnderResolved", "build_basis", "compatibility", "continue_windows",
    "initial_window_data", "parse_config", "picard_solve",
]
