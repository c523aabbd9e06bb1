from .dqn import DQNAgent, DQNConfig, dqn_act
from .sac import SACAgent, SACConfig


__all__ = ["DQNAgent", "DQNConfig", "SACAgent", "SACConfig", "dqn_act"]
