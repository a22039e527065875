"""Offline trajectory datasets: recording, returns-to-go, mixing, files, sampling.

Files are JSON-lines (optionally gzipped): a header line with dataset
metadata, then one trajectory per line including its scenario, per-step
state graphs, actions, masks, rewards, and returns-to-go.
"""
from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import ChargingEnv, RewardBreakdown, Scenario
from .graphs import StateGraph, build_state_graph, graph_from_dict, graph_to_dict

DATASET_FORMAT_VERSION = 1


@dataclass
class TrajStep:
    graph: StateGraph
    action: np.ndarray            # masked action values per charger
    mask: np.ndarray
    reward: float
    breakdown: RewardBreakdown
    applied_power: np.ndarray
    departures: list[tuple[int, float, float]]


@dataclass
class Trajectory:
    scenario: Scenario
    policy_tag: str
    steps: list[TrajStep]
    rtg: np.ndarray
    scenario_digest: str = ""

    def __post_init__(self):
        if not self.scenario_digest:
            self.scenario_digest = self.scenario.digest()

    @property
    def episode_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))

    def to_dict(self) -> dict:
        return {
            "scenario_digest": self.scenario_digest,
            "policy_tag": self.policy_tag,
            "scenario": self.scenario.to_dict(),
            "rtg": [float(g) for g in self.rtg],
            "steps": [{
                "g": graph_to_dict(s.graph),
                "a": [float(x) for x in s.action],
                "m": [int(x) for x in s.mask],
                "r": s.reward,
                "rb": [s.breakdown.energy_term, s.breakdown.violation_kw,
                       s.breakdown.satisfaction_penalty],
                "p": [float(x) for x in s.applied_power],
                "dep": [[int(j), e, tgt] for j, e, tgt in s.departures],
            } for s in self.steps],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Trajectory":
        steps = []
        for s in doc["steps"]:
            energy, viol, sat = s["rb"]
            steps.append(TrajStep(
                graph=graph_from_dict(s["g"]),
                action=np.array(s["a"], dtype=float),
                mask=np.array(s["m"], dtype=np.int8),
                reward=float(s["r"]),
                breakdown=RewardBreakdown(energy, viol, sat, float(s["r"])),
                applied_power=np.array(s["p"], dtype=float),
                departures=[(int(j), float(e), float(tgt)) for j, e, tgt in s["dep"]],
            ))
        return cls(
            scenario=Scenario.from_dict(doc["scenario"]),
            policy_tag=doc["policy_tag"],
            steps=steps,
            rtg=np.array(doc["rtg"], dtype=float),
            scenario_digest=doc["scenario_digest"],
        )


@dataclass
class DatasetMeta:
    count: int
    avg_reward: float
    reward_std: float
    gamma: float
    source_mix: dict[str, float] = field(default_factory=dict)


class TrajectoryDataset:
    def __init__(self, trajectories: list[Trajectory], gamma: float = 1.0):
        if not trajectories:
            raise ValueError("dataset must contain at least one trajectory")
        self.trajectories = trajectories
        self.gamma = gamma

    @property
    def meta(self) -> DatasetMeta:
        rewards = np.array([t.episode_reward for t in self.trajectories])
        tags = [t.policy_tag for t in self.trajectories]
        mix = {tag: tags.count(tag) / len(tags) for tag in sorted(set(tags))}
        std = float(rewards.std(ddof=1)) if len(rewards) > 1 else 0.0
        return DatasetMeta(count=len(self.trajectories),
                           avg_reward=float(rewards.mean()), reward_std=std,
                           gamma=self.gamma, source_mix=mix)

    @property
    def best_reward(self) -> float:
        return max(t.episode_reward for t in self.trajectories)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        opener = gzip.open if path.suffix == ".gz" else open
        meta = self.meta
        with opener(path, "wt", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "format_version": DATASET_FORMAT_VERSION,
                "kind": "trajectory_dataset",
                "count": meta.count,
                "gamma": meta.gamma,
                "avg_reward": meta.avg_reward,
                "reward_std": meta.reward_std,
                "source_mix": meta.source_mix,
            }, sort_keys=True) + "\n")
            for traj in self.trajectories:
                fh.write(json.dumps(traj.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "TrajectoryDataset":
        path = Path(path)
        opener = gzip.open if path.suffix == ".gz" else open
        with opener(path, "rt", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format_version") != DATASET_FORMAT_VERSION:
                raise ValueError("unsupported dataset format version")
            trajectories = [Trajectory.from_dict(json.loads(line))
                            for line in fh if line.strip()]
        return cls(trajectories, gamma=header.get("gamma", 1.0))


def compute_rtg(rewards, gamma: float) -> np.ndarray:
    """Discounted returns-to-go by backward recursion G_t = r_t + gamma * G_{t+1}."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise ValueError("empty reward list")
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def record_trajectory(policy, scenario: Scenario, gamma: float = 1.0) -> Trajectory:
    """Roll `policy` through a fresh environment and record every step."""
    env = ChargingEnv(scenario)
    steps: list[TrajStep] = []
    for _ in range(scenario.config.horizon_T):
        state = env.get_state()
        graph = build_state_graph(state, scenario)
        mask = env.action_mask()
        values = np.clip(np.asarray(policy.act(env), dtype=float), -1.0, 1.0)
        values = values * mask
        result = env.step(values)
        steps.append(TrajStep(graph=graph, action=values, mask=mask,
                              reward=result.breakdown.total,
                              breakdown=result.breakdown,
                              applied_power=result.applied_power,
                              departures=result.departures))
    rtg = compute_rtg([s.reward for s in steps], gamma)
    return Trajectory(scenario=scenario, policy_tag=policy.tag, steps=steps, rtg=rtg)


def mix_datasets(a: TrajectoryDataset, b: TrajectoryDataset, frac_a: float,
                 total: int, seed: int) -> TrajectoryDataset:
    """Sample without replacement `frac_a * total` from `a`, the rest from `b`."""
    n_a = int(round(frac_a * total))
    n_b = total - n_a
    if n_a > len(a.trajectories) or n_b > len(b.trajectories):
        raise ValueError("insufficient source trajectories for requested mix")
    rng = np.random.default_rng(seed)
    pick_a = rng.choice(len(a.trajectories), size=n_a, replace=False)
    pick_b = rng.choice(len(b.trajectories), size=n_b, replace=False)
    merged = [a.trajectories[i] for i in pick_a] + [b.trajectories[i] for i in pick_b]
    order = rng.permutation(len(merged))
    return TrajectoryDataset([merged[i] for i in order], gamma=a.gamma)


@dataclass
class Window:
    """One K-step training window, left-padded when it overlaps the episode start."""
    graphs: list[StateGraph | None]
    prev_graphs: list[StateGraph | None]
    prev_actions: np.ndarray      # K x num_chargers
    actions: np.ndarray           # K x num_chargers (targets)
    masks: np.ndarray             # K x num_chargers
    rtg: np.ndarray               # K
    timesteps: np.ndarray         # K, episode step indices (0 at padding)
    pad: np.ndarray               # K bools, True where padded

    @property
    def K(self) -> int:
        return len(self.graphs)


def extract_window(traj: Trajectory, end_step: int, K: int) -> Window:
    n_chg = traj.scenario.config.num_chargers
    graphs: list[StateGraph | None] = []
    prev_graphs: list[StateGraph | None] = []
    prev_actions = np.zeros((K, n_chg))
    actions = np.zeros((K, n_chg))
    masks = np.zeros((K, n_chg), dtype=np.int8)
    rtg = np.zeros(K)
    timesteps = np.zeros(K, dtype=np.int64)
    pad = np.zeros(K, dtype=bool)
    for k in range(K):
        t = end_step - (K - 1) + k
        if t < 0:
            graphs.append(None)
            prev_graphs.append(None)
            pad[k] = True
            continue
        step = traj.steps[t]
        graphs.append(step.graph)
        if t > 0:
            prev_graphs.append(traj.steps[t - 1].graph)
            prev_actions[k] = traj.steps[t - 1].action
        else:
            prev_graphs.append(None)
        actions[k] = step.action
        masks[k] = step.mask
        rtg[k] = traj.rtg[t]
        timesteps[k] = t
    return Window(graphs=graphs, prev_graphs=prev_graphs,
                  prev_actions=prev_actions, actions=actions, masks=masks,
                  rtg=rtg, timesteps=timesteps, pad=pad)


def sample_window(dataset: TrajectoryDataset, K: int, batch: int,
                  rng: np.random.Generator) -> list[Window]:
    """Uniform over (trajectory, end step) pairs."""
    horizon = len(dataset.trajectories[0].steps)
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > horizon:
        raise ValueError("K exceeds the episode horizon")
    windows = []
    for _ in range(batch):
        traj = dataset.trajectories[int(rng.integers(len(dataset.trajectories)))]
        end = int(rng.integers(len(traj.steps)))
        windows.append(extract_window(traj, end, K))
    return windows
