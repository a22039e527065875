"""EV-charging optimization with a graph-embedded decision transformer.

A numpy-only stack: a discrete-time charging simulator with dynamic
state/action graphs, offline trajectory datasets (random, round-robin,
charge-as-fast-as-possible, and exact discretized-oracle behavior), a
small reverse-mode autodiff engine, a GCN-embedded decision transformer
with residual per-EV action decoding, and training/evaluation drivers.
"""
from .env import (ChargingEnv, ChargingSession, ConfigError, EVSpec,
                  RewardBreakdown, Scenario, ScenarioConfig, SimState,
                  StepResult, generate_scenario, make_scenario_config,
                  random_scenario)
from .graphs import (ActionGraph, NodeKind, StateGraph,
                     action_graph_from_state, build_action_graph,
                     build_state_graph, normalized_adjacency, permute_graph)
from .policies import BauRoundRobin, CafapPolicy, RandomPolicy, ReplayPolicy
from .oracle import (DEFAULT_LEVELS, DiscretizationSpec, OracleSolution,
                     SearchSpaceError, oracle_solve, snap_to_levels)
from .data import (TrajStep, Trajectory, TrajectoryDataset, Window,
                   compute_rtg, extract_window, mix_datasets,
                   record_trajectory, sample_window)
from .tensor import Tensor, backward, const, finite_difference_check, precision
from .optim import AdamW, NonFiniteGradientError
from .checkpoint import load_checkpoint, save_checkpoint
from .model import (ForwardResult, ModelConfig, embed_action, embed_rtg,
                    embed_state, forward_window, init_params,
                    masked_mse_loss, window_loss)
from .metrics import Metrics, compute_metrics, summarize
from .training import (TrainConfig, TrainReport, evaluate,
                       pick_target_return, rollout, train)
from .experiments import ExperimentSpec, run_experiment, write_report

__version__ = "0.1.0"
