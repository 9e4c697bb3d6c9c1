"""Data generators: finite chains, the tiger game and synthetic glucose patients."""

from .chain import ChainSpec, exact_ccfs, simulate_chain, three_state_chain, two_state_chain
from .glucose import GlucoseConfig, GlucoseEnv, discretize_insulin, igc_reward, simulate_glucose
from .tiger import TigerConfig, simulate_tiger

__all__ = [
    "ChainSpec",
    "GlucoseConfig",
    "GlucoseEnv",
    "TigerConfig",
    "discretize_insulin",
    "exact_ccfs",
    "igc_reward",
    "simulate_chain",
    "simulate_glucose",
    "simulate_tiger",
    "three_state_chain",
    "two_state_chain",
]
