"""Offline training loop and autoregressive evaluation rollouts."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .data import (Trajectory, TrajectoryDataset, TrajStep, Window,
                   compute_rtg, sample_window)
from .env import ChargingEnv, Scenario
from .graphs import build_state_graph
from .metrics import Metrics, compute_metrics
from .model import ModelConfig, forward_window, window_loss
from .optim import AdamW, NonFiniteGradientError
from .tensor import backward


@dataclass
class TrainConfig:
    total_steps: int = 1000
    batch_size: int = 128
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    warmup_steps: int = 100
    eval_every: int = 0                 # 0 disables periodic rollout evaluation
    eval_scenarios: int = 5
    checkpoint_path: str | None = None
    checkpoint_every: int = 0
    seed: int = 0
    log_every: int = 0


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    eval_returns: list[tuple[int, float]] = field(default_factory=list)
    steps_completed: int = 0
    diverged: bool = False
    wall_time_s: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    def smoothed_loss(self, window: int = 50) -> float:
        tail = self.losses[-window:]
        return float(np.mean(tail)) if tail else float("nan")


def pick_target_return(dataset: TrajectoryDataset, mode: str = "dataset_best",
                       value: float | None = None) -> float:
    """Return-to-go the policy is conditioned on at evaluation time."""
    if mode == "fixed":
        if value is None:
            raise ValueError("fixed target mode needs a value")
        return float(value)
    if mode == "dataset_best":
        return dataset.best_reward
    if mode == "dataset_median":
        return float(np.median([t.episode_reward
                                for t in dataset.trajectories]))
    if mode == "oracle_estimate":
        best = [t.episode_reward for t in dataset.trajectories
                if t.policy_tag == "optimal"]
        return float(max(best)) if best else dataset.best_reward
    raise ValueError(f"unknown target mode {mode!r}")


def train(dataset: TrajectoryDataset, params: dict, model_config: ModelConfig,
          train_config: TrainConfig, eval_fn=None) -> TrainReport:
    """Behavior-cloning on sampled context windows with AdamW and warmup.

    `eval_fn(params) -> float`, when given, is called every `eval_every`
    steps and its value logged. Training aborts (report.diverged) on a
    non-finite loss or gradient instead of corrupting the parameters.
    """
    rng = np.random.default_rng(train_config.seed)
    opt = AdamW(params, lr=train_config.learning_rate,
                weight_decay=train_config.weight_decay,
                warmup_steps=train_config.warmup_steps)
    report = TrainReport()
    start = time.monotonic()
    for step in range(train_config.total_steps):
        windows = sample_window(dataset, model_config.context_K,
                                train_config.batch_size, rng)
        loss, _ = window_loss(windows, params, model_config)
        loss_val = float(loss.data.reshape(()))
        if not np.isfinite(loss_val):
            report.diverged = True
            break
        backward(loss)
        try:
            opt.step()
        except NonFiniteGradientError:
            report.diverged = True
            break
        report.losses.append(loss_val)
        report.steps_completed = step + 1
        if train_config.eval_every and (step + 1) % train_config.eval_every == 0 \
                and eval_fn is not None:
            report.eval_returns.append((step + 1, float(eval_fn(params))))
        if train_config.checkpoint_path and train_config.checkpoint_every and \
                (step + 1) % train_config.checkpoint_every == 0:
            save_checkpoint(train_config.checkpoint_path, params,
                            opt.state_dict(), extra={
                                "model_config": model_config.to_dict(),
                                "train_step": step + 1})
        if train_config.log_every and (step + 1) % train_config.log_every == 0:
            print(f"step {step + 1}/{train_config.total_steps} "
                  f"loss {report.smoothed_loss():.6f}")
    report.wall_time_s = time.monotonic() - start
    if train_config.checkpoint_path:
        save_checkpoint(train_config.checkpoint_path, params, opt.state_dict(),
                        extra={"model_config": model_config.to_dict(),
                               "train_step": report.steps_completed})
    return report


def _rollout_window(graphs, actions, masks, rtgs, t: int, K: int,
                    n_chg: int) -> Window:
    """Right-aligned context window over the last K live steps."""
    g_list, pg_list = [], []
    prev_actions = np.zeros((K, n_chg))
    act = np.zeros((K, n_chg))
    msk = np.zeros((K, n_chg), dtype=np.int8)
    rtg = np.zeros(K)
    timesteps = np.zeros(K, dtype=np.int64)
    pad = np.zeros(K, dtype=bool)
    for k in range(K):
        step = t - (K - 1) + k
        if step < 0:
            g_list.append(None)
            pg_list.append(None)
            pad[k] = True
            continue
        g_list.append(graphs[step])
        if step > 0:
            pg_list.append(graphs[step - 1])
            prev_actions[k] = actions[step - 1]
        else:
            pg_list.append(None)
        msk[k] = masks[step]
        rtg[k] = rtgs[step]
        timesteps[k] = step
    return Window(graphs=g_list, prev_graphs=pg_list, prev_actions=prev_actions,
                  actions=act, masks=msk, rtg=rtg, timesteps=timesteps, pad=pad)


def rollout(params: dict, model_config: ModelConfig, scenario: Scenario,
            target_return: float, rtg_mode: str = "decrement",
            gamma: float = 1.0, policy_tag: str = "gnndt",
            action_levels: tuple[float, ...] | None = None) -> Trajectory:
    """Run the trained policy closed-loop through one scenario.

    `rtg_mode="decrement"` feeds target minus realized reward so far;
    `"fixed"` repeats the target; `"zero_current"` conditions on zero.
    `action_levels`, when given, projects each predicted action onto the
    nearest grid level (useful when the training data is grid-valued).
    The model only ever sees its own past actions, never future data.
    """
    if rtg_mode not in ("decrement", "fixed", "zero_current"):
        raise ValueError(f"unknown rtg mode {rtg_mode!r}")
    cfg = scenario.config
    if cfg.horizon_T > model_config.max_episode_steps:
        raise ValueError("scenario horizon exceeds the model's timestep table")
    env = ChargingEnv(scenario)
    K = model_config.context_K
    graphs, taken, masks, rtgs = [], [], [], []
    steps: list[TrajStep] = []
    realized = 0.0
    for t in range(cfg.horizon_T):
        graph = build_state_graph(env.get_state(), scenario)
        mask = env.action_mask()
        graphs.append(graph)
        masks.append(mask)
        if rtg_mode == "decrement":
            rtgs.append(target_return - realized)
        elif rtg_mode == "fixed":
            rtgs.append(target_return)
        else:
            rtgs.append(0.0)
        window = _rollout_window(graphs, taken, masks, rtgs, t, K,
                                 cfg.num_chargers)
        out = forward_window([window], params, model_config)
        pred = out.dense_actions([window])[0, K - 1]
        values = np.clip(pred, -1.0, 1.0)
        if action_levels is not None:
            grid = np.asarray(action_levels, dtype=float)
            values = grid[np.abs(values[:, None] - grid).argmin(axis=-1)]
        values = values * mask
        taken.append(values)
        result = env.step(values)
        realized += result.breakdown.total
        steps.append(TrajStep(graph=graph, action=values, mask=mask,
                              reward=result.breakdown.total,
                              breakdown=result.breakdown,
                              applied_power=result.applied_power,
                              departures=result.departures))
    rtg = compute_rtg([s.reward for s in steps], gamma)
    return Trajectory(scenario=scenario, policy_tag=policy_tag, steps=steps,
                      rtg=rtg)


def evaluate(params: dict, model_config: ModelConfig,
             scenarios: list[Scenario], target_return: float,
             rtg_mode: str = "decrement", policy_tag: str = "gnndt",
             action_levels: tuple[float, ...] | None = None) -> list[Metrics]:
    """Closed-loop metrics (with per-step wall time) over a scenario list."""
    out: list[Metrics] = []
    for scenario in scenarios:
        start = time.monotonic()
        traj = rollout(params, model_config, scenario, target_return,
                       rtg_mode=rtg_mode, policy_tag=policy_tag,
                       action_levels=action_levels)
        per_step = (time.monotonic() - start) / max(1, len(traj.steps))
        out.append(compute_metrics(traj, exec_s_per_step=per_step))
    return out
