"""Joint communication and radar sensing transceiver design for multi-user MIMO."""

from .bcd import BcdConfig, solve_bcd
from .bd import solve_bd
from .hybrid import HybridConfig, hybridize
from .metrics import DigitalSolution, TradeoffWeights, isac_objective, scnr, weighted_sum_rate
from .model import Scenario, build_scenario

__all__ = [
    "BcdConfig",
    "DigitalSolution",
    "HybridConfig",
    "Scenario",
    "TradeoffWeights",
    "build_scenario",
    "hybridize",
    "isac_objective",
    "scnr",
    "solve_bcd",
    "solve_bd",
    "weighted_sum_rate",
]

__version__ = "0.1.0"
