"""Episode-level evaluation metrics for charging policies."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .data import Trajectory


@dataclass
class Metrics:
    energy_charged_kwh: float
    energy_discharged_kwh: float
    satisfaction_pct: float
    violation_kw: float
    cost_eur: float
    reward: float
    exec_s_per_step: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(traj: Trajectory, exec_s_per_step: float = 0.0) -> Metrics:
    """Aggregate one recorded episode.

    - energy charged/discharged: kWh actually delivered to / drawn from batteries
    - satisfaction: mean over departures of 100 * delivered / target energy
      (100 when the episode has no departures)
    - violation: summed setpoint excess in kW across steps
    - cost: net energy cash flow in EUR, negative when purchases exceed
      discharge revenue (the summed energy term of the reward)
    """
    dt = traj.scenario.config.dt_hours
    charged = 0.0
    discharged = 0.0
    violation = 0.0
    cost = 0.0
    ratios: list[float] = []
    for step in traj.steps:
        p = np.asarray(step.applied_power)
        charged += float(p[p > 0].sum()) * dt
        discharged += float(-p[p < 0].sum()) * dt
        violation += step.breakdown.violation_kw
        cost += step.breakdown.energy_term
        for _, energy, target in step.departures:
            ratios.append(100.0 * energy / target if target > 0 else 100.0)
    satisfaction = float(np.mean(ratios)) if ratios else 100.0
    return Metrics(
        energy_charged_kwh=charged,
        energy_discharged_kwh=discharged,
        satisfaction_pct=satisfaction,
        violation_kw=violation,
        cost_eur=cost,
        reward=traj.episode_reward,
        exec_s_per_step=exec_s_per_step,
    )


def summarize(metric_list: list[Metrics]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation (ddof=1) per metric field."""
    out = {}
    for key in Metrics.__dataclass_fields__:
        vals = np.array([getattr(m, key) for m in metric_list], dtype=float)
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[key] = (float(vals.mean()), std)
    return out
