"""Joint transmit covariance, RIS phase and movable-antenna position design
for a dual-function radar-communication base station."""

__version__ = "0.1.0"

from .ao import AoTrajectory, initialize, run
from .channel import ChannelRealization, sample_realization, upa_layout
from .config import ScenarioConfig, load_config

__all__ = [
    "AoTrajectory",
    "ChannelRealization",
    "ScenarioConfig",
    "__version__",
    "initialize",
    "load_config",
    "run",
    "sample_realization",
    "upa_layout",
]
