"""End-to-end experiment drivers: data generation, training runs, sweeps.

Every driver emits per-episode rows with a fixed column set so results
from different runs concatenate into one comparison table.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import TrajectoryDataset, mix_datasets, record_trajectory
from .env import Scenario, random_scenario
from .metrics import Metrics, compute_metrics
from .model import ModelConfig, init_params
from .optim import AdamW
from .oracle import oracle_solve
from .policies import BauRoundRobin, CafapPolicy, RandomPolicy, ReplayPolicy
from .training import TrainConfig, evaluate, pick_target_return, train

CSV_COLUMNS = ["algorithm", "scenario_seed", "energy_charged_kwh",
               "energy_discharged_kwh", "satisfaction_pct", "violation_kw",
               "cost_eur", "reward", "exec_s_per_step"]

EVAL_SEED_BASE = 10_000


@dataclass
class ExperimentSpec:
    mode: str
    num_chargers: int = 3
    horizon_T: int = 96
    num_trajectories: int = 50
    eval_scenarios: int = 5
    seed: int = 0
    policy: str = "random"              # gen_data source policy
    oracle_time_budget_s: float | None = 2.0
    gamma: float = 1.0
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    dataset_path: str | None = None
    checkpoint_path: str | None = None
    out_dir: str = "runs"
    target_mode: str = "dataset_best"
    target_value: float | None = None
    rtg_mode: str = "decrement"
    options: dict = field(default_factory=dict)   # mode-specific knobs

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        return cls(**doc)


def _policy_for(name: str, seed: int):
    if name == "random":
        return RandomPolicy(seed=seed)
    if name == "bau":
        return BauRoundRobin()
    if name == "cafap":
        return CafapPolicy()
    raise ValueError(f"unknown behavior policy {name!r}")


def generate_dataset(spec: ExperimentSpec) -> TrajectoryDataset:
    """Record `num_trajectories` episodes of the requested behavior policy."""
    trajectories = []
    for i in range(spec.num_trajectories):
        scenario = random_scenario(spec.num_chargers, horizon_T=spec.horizon_T,
                                   seed=spec.seed + i)
        if spec.policy == "optimal":
            solution = oracle_solve(
                scenario, time_budget_s=spec.oracle_time_budget_s)
            policy = ReplayPolicy(solution.actions)
        else:
            policy = _policy_for(spec.policy, seed=spec.seed + i)
        trajectories.append(record_trajectory(policy, scenario,
                                              gamma=spec.gamma))
    return TrajectoryDataset(trajectories, gamma=spec.gamma)


def eval_scenarios_for(spec: ExperimentSpec, shift: str = "none",
                       num_chargers: int | None = None) -> list[Scenario]:
    n_chg = num_chargers or spec.num_chargers
    return [random_scenario(n_chg, horizon_T=spec.horizon_T,
                            seed=EVAL_SEED_BASE + spec.seed + i,
                            generalization_shift=shift)
            for i in range(spec.eval_scenarios)]


def baseline_rows(scenarios: list[Scenario], seed: int,
                  names=("random", "bau", "cafap")) -> list[dict]:
    rows = []
    for name in names:
        for scenario in scenarios:
            policy = _policy_for(name, seed=seed + scenario.config.seed)
            start = time.monotonic()
            traj = record_trajectory(policy, scenario)
            per_step = (time.monotonic() - start) / len(traj.steps)
            rows.append(metrics_row(name, scenario.config.seed,
                                    compute_metrics(traj, per_step)))
    return rows


def metrics_row(algorithm: str, scenario_seed: int, m: Metrics) -> dict:
    row = {"algorithm": algorithm, "scenario_seed": scenario_seed}
    row.update(m.to_dict())
    return row


def write_report(rows: list[dict], out_dir, name: str = "results") -> Path:
    """Write per-episode CSV plus a JSON mean/std summary per algorithm."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in CSV_COLUMNS})
    summary = {}
    for algo in sorted({r["algorithm"] for r in rows}):
        sub = [r for r in rows if r["algorithm"] == algo]
        stats = {}
        for col in CSV_COLUMNS[2:]:
            vals = np.array([float(r[col]) for r in sub])
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            stats[col] = {"mean": float(vals.mean()), "std": std}
        summary[algo] = stats
    (out / f"{name}_summary.json").write_text(json.dumps(summary, indent=1))
    return csv_path


def _model_config(spec: ExperimentSpec, **extra) -> ModelConfig:
    base = dict(context_K=10, embed_dim=64, gnn_feature_dim=16,
                gnn_hidden_dim=32, gcn_layers_state=3, gcn_layers_action=3,
                decoder_layers=2, attention_heads=2,
                max_episode_steps=max(300, spec.horizon_T),
                num_chargers=spec.num_chargers)
    base.update(spec.model)
    base.update(extra)
    return ModelConfig(**base)


def _train_config(spec: ExperimentSpec, **extra) -> TrainConfig:
    base = dict(total_steps=500, batch_size=32, learning_rate=1e-4,
                weight_decay=1e-4, warmup_steps=50, seed=spec.seed)
    base.update(spec.train)
    base.update(extra)
    return TrainConfig(**base)


def train_and_eval(spec: ExperimentSpec, dataset: TrajectoryDataset,
                   model_config: ModelConfig, algorithm: str,
                   scenarios: list[Scenario], seed: int) -> tuple[list[dict], dict]:
    params = init_params(model_config, seed=seed)
    train_config = _train_config(spec, seed=seed)
    report = train(dataset, params, model_config, train_config)
    target = pick_target_return(dataset, spec.target_mode, spec.target_value)
    metrics = evaluate(params, model_config, scenarios, target,
                       rtg_mode=spec.rtg_mode, policy_tag=algorithm)
    rows = [metrics_row(algorithm, sc.config.seed, m)
            for sc, m in zip(scenarios, metrics)]
    if spec.checkpoint_path:
        opt = AdamW(params)
        save_checkpoint(spec.checkpoint_path, params, opt.state_dict(),
                        extra={"model_config": model_config.to_dict()})
    return rows, {"final_loss": report.final_loss,
                  "smoothed_loss": report.smoothed_loss(),
                  "diverged": report.diverged,
                  "steps": report.steps_completed}


def run_experiment(spec: ExperimentSpec) -> dict:
    """Dispatch one experiment; returns a result document (also written to disk)."""
    handlers = {
        "gen_data": _run_gen_data,
        "train": _run_train,
        "eval": _run_eval,
        "ablate": _run_ablate,
        "k_sweep": _run_k_sweep,
        "mix_sweep": _run_mix_sweep,
        "generalize": _run_generalize,
        "scale": _run_scale,
    }
    if spec.mode not in handlers:
        raise ValueError(f"unknown experiment mode {spec.mode!r}")
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = handlers[spec.mode](spec)
    (out / "experiment.json").write_text(json.dumps(result, indent=1, default=str))
    return result


def _run_gen_data(spec: ExperimentSpec) -> dict:
    dataset = generate_dataset(spec)
    path = spec.dataset_path or str(Path(spec.out_dir) / "dataset.jsonl.gz")
    dataset.save(path)
    meta = dataset.meta
    return {"mode": "gen_data", "path": path, "count": meta.count,
            "avg_reward": meta.avg_reward, "reward_std": meta.reward_std,
            "source_mix": meta.source_mix}


def _load_or_generate(spec: ExperimentSpec) -> TrajectoryDataset:
    if spec.dataset_path and Path(spec.dataset_path).exists():
        return TrajectoryDataset.load(spec.dataset_path)
    return generate_dataset(spec)


def _run_train(spec: ExperimentSpec) -> dict:
    dataset = _load_or_generate(spec)
    scenarios = eval_scenarios_for(spec)
    model_config = _model_config(spec)
    rows, train_info = train_and_eval(spec, dataset, model_config, "gnndt",
                                      scenarios, spec.seed)
    rows += baseline_rows(scenarios, spec.seed)
    csv_path = write_report(rows, spec.out_dir)
    return {"mode": "train", "csv": str(csv_path), "train": train_info,
            "rows": rows}


def _run_eval(spec: ExperimentSpec) -> dict:
    if not spec.checkpoint_path:
        raise ValueError("eval mode needs checkpoint_path")
    params, _, extra = load_checkpoint(spec.checkpoint_path)
    model_config = ModelConfig.from_dict(extra["model_config"])
    scenarios = eval_scenarios_for(spec)
    target = spec.target_value if spec.target_value is not None else 0.0
    if spec.dataset_path and Path(spec.dataset_path).exists():
        target = pick_target_return(TrajectoryDataset.load(spec.dataset_path),
                                    spec.target_mode, spec.target_value)
    metrics = evaluate(params, model_config, scenarios, target,
                       rtg_mode=spec.rtg_mode)
    rows = [metrics_row("gnndt", sc.config.seed, m)
            for sc, m in zip(scenarios, metrics)]
    rows += baseline_rows(scenarios, spec.seed)
    csv_path = write_report(rows, spec.out_dir)
    return {"mode": "eval", "csv": str(csv_path), "rows": rows}


ABLATION_VARIANTS = {
    # architecture is grown one component at a time
    "flat_dt": dict(embedder_kind="flat_mlp", action_embedder_kind="flat_mlp",
                    use_residual_decode=False, use_action_mask_loss=False),
    "state_gnn": dict(embedder_kind="gnn", action_embedder_kind="flat_mlp",
                      use_residual_decode=False, use_action_mask_loss=False),
    "residual": dict(embedder_kind="gnn", action_embedder_kind="flat_mlp",
                     use_residual_decode=True, use_action_mask_loss=False),
    "action_gnn": dict(embedder_kind="gnn", action_embedder_kind="gnn",
                       use_residual_decode=True, use_action_mask_loss=False),
    "full": dict(embedder_kind="gnn", action_embedder_kind="gnn",
                 use_residual_decode=True, use_action_mask_loss=True),
}


def _run_ablate(spec: ExperimentSpec) -> dict:
    dataset = _load_or_generate(spec)
    scenarios = eval_scenarios_for(spec)
    variants = spec.options.get("variants", list(ABLATION_VARIANTS))
    rows: list[dict] = []
    info = {}
    for name in variants:
        model_config = _model_config(spec, **ABLATION_VARIANTS[name])
        variant_rows, train_info = train_and_eval(spec, dataset, model_config,
                                                  name, scenarios, spec.seed)
        rows += variant_rows
        info[name] = train_info
    rows += baseline_rows(scenarios, spec.seed)
    csv_path = write_report(rows, spec.out_dir)
    return {"mode": "ablate", "csv": str(csv_path), "train": info, "rows": rows}


def _run_k_sweep(spec: ExperimentSpec) -> dict:
    dataset = _load_or_generate(spec)
    scenarios = eval_scenarios_for(spec)
    rows: list[dict] = []
    for k in spec.options.get("k_values", [2, 5, 10, 20]):
        model_config = _model_config(spec, context_K=int(k))
        variant_rows, _ = train_and_eval(spec, dataset, model_config,
                                         f"gnndt_K{k}", scenarios, spec.seed)
        rows += variant_rows
    csv_path = write_report(rows, spec.out_dir)
    return {"mode": "k_sweep", "csv": str(csv_path), "rows": rows}


def _run_mix_sweep(spec: ExperimentSpec) -> dict:
    opt_spec = ExperimentSpec(mode="gen_data", policy="optimal",
                              num_chargers=spec.num_chargers,
                              horizon_T=spec.horizon_T,
                              num_trajectories=spec.num_trajectories,
                              seed=spec.seed, gamma=spec.gamma,
                              oracle_time_budget_s=spec.oracle_time_budget_s)
    rnd_spec = ExperimentSpec(mode="gen_data", policy="random",
                              num_chargers=spec.num_chargers,
                              horizon_T=spec.horizon_T,
                              num_trajectories=spec.num_trajectories,
                              seed=spec.seed, gamma=spec.gamma)
    optimal = generate_dataset(opt_spec)
    random_ds = generate_dataset(rnd_spec)
    total = spec.options.get("mix_total", spec.num_trajectories)
    scenarios = eval_scenarios_for(spec)
    rows: list[dict] = []
    for frac in spec.options.get("mix_fracs", [0.0, 0.25, 0.5, 1.0]):
        dataset = mix_datasets(optimal, random_ds, frac, total,
                               seed=spec.seed)
        model_config = _model_config(spec)
        variant_rows, _ = train_and_eval(spec, dataset, model_config,
                                         f"gnndt_opt{int(100 * frac)}",
                                         scenarios, spec.seed)
        rows += variant_rows
    csv_path = write_report(rows, spec.out_dir)
    return {"mode": "mix_sweep", "csv": str(csv_path), "rows": rows}


def _run_generalize(spec: ExperimentSpec) -> dict:
    dataset = _load_or_generate(spec)
    model_config = _model_config(spec)
    params = init_params(model_config, seed=spec.seed)
    report = train(dataset, params, model_config, _train_config(spec))
    target = pick_target_return(dataset, spec.target_mode, spec.target_value)
    rows: list[dict] = []
    for shift in spec.options.get("shifts", ["none", "small", "medium", "extreme"]):
        scenarios = eval_scenarios_for(spec, shift=shift)
        metrics = evaluate(params, model_config, scenarios, target,
                           rtg_mode=spec.rtg_mode)
        rows += [metrics_row(f"gnndt_{shift}", sc.config.seed, m)
                 for sc, m in zip(scenarios, metrics)]
        rows += [dict(r, algorithm=f"{r['algorithm']}_{shift}")
                 for r in baseline_rows(scenarios, spec.seed)]
    csv_path = write_report(rows, spec.out_dir)
    return {"mode": "generalize", "csv": str(csv_path),
            "train": {"final_loss": report.final_loss}, "rows": rows}


def _run_scale(spec: ExperimentSpec) -> dict:
    """Train at one fleet size; evaluate zero-shot at other sizes (graph model only)."""
    dataset = _load_or_generate(spec)
    model_config = _model_config(spec)
    if model_config.embedder_kind != "gnn" or not model_config.use_residual_decode:
        raise ValueError("size transfer requires the graph embedder with "
                         "residual decoding")
    params = init_params(model_config, seed=spec.seed)
    train(dataset, params, model_config, _train_config(spec))
    target = pick_target_return(dataset, spec.target_mode, spec.target_value)
    rows: list[dict] = []
    for size in spec.options.get("eval_sizes", [1, spec.num_chargers, 6, 10]):
        scenarios = eval_scenarios_for(spec, num_chargers=int(size))
        metrics = evaluate(params, model_config, scenarios, target,
                           rtg_mode=spec.rtg_mode)
        rows += [metrics_row(f"gnndt_n{size}", sc.config.seed, m)
                 for sc, m in zip(scenarios, metrics)]
        rows += [dict(r, algorithm=f"{r['algorithm']}_n{size}")
                 for r in baseline_rows(scenarios, spec.seed,
                                        names=("random", "bau"))]
    csv_path = write_report(rows, spec.out_dir)
    return {"mode": "scale", "csv": str(csv_path), "rows": rows}
