"""Behavior policies for dataset generation and evaluation baselines."""
from __future__ import annotations

import numpy as np

from .env import ChargingEnv


class RandomPolicy:
    """Uniform actions on [-1, 1]; the environment masks empty chargers."""

    tag = "random"

    def __init__(self, seed: int = 0):
        self._seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self, seed: int | None = None) -> None:
        self.rng = np.random.default_rng(self._seed if seed is None else seed)

    def act(self, env: ChargingEnv) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, size=env.config.num_chargers)


class CafapPolicy:
    """Charge as fast as possible: full remaining need each step, never discharge."""

    tag = "cafap"

    def reset(self, seed: int | None = None) -> None:
        pass

    def act(self, env: ChargingEnv) -> np.ndarray:
        cfg = env.config
        values = np.zeros(cfg.num_chargers)
        for i in range(cfg.num_chargers):
            s = env.session_at(i)
            if s is None:
                continue
            need = s.e_target - env.state.battery_energy[i]
            if need <= 0:
                continue
            values[i] = min(1.0, need / (s.p_charge_max * cfg.dt_hours))
        return values


class BauRoundRobin:
    """Round-robin full-power grants under the setpoint and group limits.

    Starting from a rotating pointer, each needy EV in cyclic charger order
    receives its full requested charge power if it fits within both the
    total setpoint and its group limit; otherwise it gets nothing this step.
    The pointer advances by one charger per step. Never discharges.
    """

    tag = "bau"

    def __init__(self):
        self.pointer = 0

    def reset(self, seed: int | None = None) -> None:
        self.pointer = 0

    def act(self, env: ChargingEnv) -> np.ndarray:
        cfg = env.config
        t = env.state.t
        values = np.zeros(cfg.num_chargers)
        remaining_total = cfg.power_setpoint[t]
        remaining_group = [cfg.group_limits[w][t]
                           for w in range(cfg.num_transformer_groups)]
        for k in range(cfg.num_chargers):
            i = (self.pointer + k) % cfg.num_chargers
            s = env.session_at(i)
            if s is None:
                continue
            need = s.e_target - env.state.battery_energy[i]
            if need <= 0:
                continue
            p_want = min(s.p_charge_max, need / cfg.dt_hours)
            w = cfg.charger_to_group[i]
            if p_want <= remaining_total + 1e-12 and p_want <= remaining_group[w] + 1e-12:
                values[i] = p_want / s.p_charge_max
                remaining_total -= p_want
                remaining_group[w] -= p_want
        self.pointer = (self.pointer + 1) % cfg.num_chargers
        return values


class ReplayPolicy:
    """Plays back a precomputed T x num_chargers action matrix (e.g. an oracle plan)."""

    tag = "optimal"

    def __init__(self, actions: np.ndarray, tag: str = "optimal"):
        self.actions = np.asarray(actions, dtype=float)
        self.tag = tag

    def reset(self, seed: int | None = None) -> None:
        pass

    def act(self, env: ChargingEnv) -> np.ndarray:
        return self.actions[env.state.t].copy()
