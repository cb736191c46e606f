"""Belief-inference meta-RL agent with hierarchical planning and episodic memory."""

from .agentcore import AgentConfig, BIMRLNet, meta_rollout
from .envgrid import GridEnv, TaskSpec, generate_task
from .estimator import BIMRL
from .exceptions import (
    BIMRLError,
    ConfigError,
    ContractError,
    NonFiniteLossError,
    ParameterError,
    ProtocolError,
    ShapeError,
    StaleBatchError,
)

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "BIMRL",
    "BIMRLError",
    "BIMRLNet",
    "ConfigError",
    "ContractError",
    "GridEnv",
    "NonFiniteLossError",
    "ParameterError",
    "ProtocolError",
    "ShapeError",
    "StaleBatchError",
    "TaskSpec",
    "generate_task",
    "meta_rollout",
]
