"""Hierarchical multi-agent RL where each level is the environment of the
level above: messages and rewards flow up, observation-shaping actions flow
down, and every level can run at its own time scale."""

from .agents import (
    AutoEncoderComm,
    IdentityComm,
    MappoAgent,
    MappoConfig,
    PpoAgent,
    PpoConfig,
    ScriptedAgent,
    ScriptedComm,
    compose_policy_input,
    identity_comm,
    manager_joint_decompose,
    manager_joint_recompose,
)
from .config import ExperimentConfig, parse_config
from .envs import BalanceEnv, EnvStepOut, JointActionWrapper, SpreadEnv, spread_heuristic
from .errors import (
    CheckpointError,
    ConfigError,
    ConnectivityError,
    DimensionError,
    HiermarlError,
    ProtocolError,
    RangeError,
    TraceError,
)
from .harness import evaluate, evaluate_hierarchy, heuristic_returns, make_system, run_experiment
from .hierarchy import (
    AgentRef,
    Connectivity,
    Hierarchy,
    HierarchyConfig,
    LevelState,
    StepResult,
    TraceRecorder,
    build_hierarchy,
    gate_and_hold,
    route_down,
)

__version__ = "0.1.0"
