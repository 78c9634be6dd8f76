"""IRS-assisted NOMA visible-light network simulator with a two-agent DDPG optimizer."""

from .channel import ChannelGains, ChannelModel, GeometryError, Scene
from .config import ConfigError, ExperimentConfig, load_config
from .environment import IrsNomaEnv

__all__ = ["ChannelGains", "ChannelModel", "ConfigError", "ExperimentConfig", "GeometryError",
           "IrsNomaEnv", "Scene", "load_config"]
__version__ = "0.1.0"
