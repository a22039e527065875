"""Discrete-time EV smart-charging environment.

A fleet of chargers, grouped under local transformers, serves charging
sessions over a fixed horizon. Continuous per-charger actions in [-1, 1]
request charging (positive) or discharging (negative) power; the
environment clips requests to battery bounds, scales group overloads,
and pays out a reward combining energy cost, aggregate-limit violations,
and a squared departure-energy deficit assessed when each EV leaves.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

SCENARIO_FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid scenario or experiment configuration."""


@dataclass
class EVSpec:
    """One catalog entry of EV battery / connector characteristics."""
    capacity_kwh: float = 50.0
    e_min_kwh: float = 2.0
    p_charge_max_kw: float = 11.0
    p_charge_min_kw: float = 0.0
    p_discharge_max_kw: float = 11.0
    target_frac: float = 0.8


def _default_arrival_process() -> dict:
    # bimodal day profile: morning and evening commuter peaks
    return {"kind": "bimodal_day", "scale": 0.1, "peak_steps": [32, 72],
            "sigma_steps": 8.0}


def _default_stay_dist() -> dict:
    return {"kind": "lognormal", "mu": math.log(12.0), "sigma": 0.5,
            "min_steps": 4, "max_steps": 40}


def _default_soc_dist() -> dict:
    return {"kind": "uniform_frac", "low": 0.2, "high": 0.6}


@dataclass
class ScenarioConfig:
    num_chargers: int
    num_transformer_groups: int = 1
    charger_to_group: list[int] = field(default_factory=list)
    horizon_T: int = 300
    dt_hours: float = 0.25
    price_charge: list[float] = field(default_factory=list)
    price_discharge: list[float] = field(default_factory=list)
    power_setpoint: list[float] = field(default_factory=list)
    group_limits: list[list[float]] = field(default_factory=list)
    arrival_process: dict = field(default_factory=_default_arrival_process)
    stay_duration_dist: dict = field(default_factory=_default_stay_dist)
    soc_arrival_dist: dict = field(default_factory=_default_soc_dist)
    ev_catalog: list[EVSpec] = field(default_factory=lambda: [EVSpec()])
    seed: int = 0
    weight_violation: float = 100.0
    weight_satisfaction: float = 10.0
    generalization_shift: str = "none"

    @property
    def steps_per_day(self) -> int:
        return max(1, int(round(24.0 / self.dt_hours)))

    def validate(self) -> None:
        if self.num_chargers < 1:
            raise ConfigError("need at least one charger")
        if self.horizon_T < 1:
            raise ConfigError("horizon_T must be >= 1")
        if self.dt_hours <= 0:
            raise ConfigError("dt_hours must be positive")
        if len(self.charger_to_group) != self.num_chargers:
            raise ConfigError("charger_to_group must map every charger")
        if any(not (0 <= w < self.num_transformer_groups)
               for w in self.charger_to_group):
            raise ConfigError("charger mapped to unknown group")
        for name in ("price_charge", "price_discharge", "power_setpoint"):
            if len(getattr(self, name)) != self.horizon_T:
                raise ConfigError(f"{name} must have length horizon_T")
        if len(self.group_limits) != self.num_transformer_groups or any(
                len(s) != self.horizon_T for s in self.group_limits):
            raise ConfigError("group_limits must be per-group series of length T")
        for ev in self.ev_catalog:
            if ev.p_charge_min_kw > ev.p_charge_max_kw:
                raise ConfigError("p_charge_min exceeds p_charge_max")
        if self.weight_violation <= 0 or self.weight_satisfaction <= 0:
            raise ConfigError("reward weights must be positive")
        if self.generalization_shift not in ("none", "small", "medium", "extreme"):
            raise ConfigError(f"unknown shift {self.generalization_shift!r}")


@dataclass
class ChargingSession:
    """One EV visit to one charger."""
    session_id: int
    charger_id: int
    group_id: int
    t_arrival: int
    t_departure: int
    e_arrival: float
    e_target: float
    e_min: float
    e_max: float
    p_charge_max: float
    p_charge_min: float
    p_discharge_max_mag: float

    def validate(self, horizon_T: int) -> None:
        if not (0 <= self.t_arrival < self.t_departure <= horizon_T):
            raise ConfigError(f"session {self.session_id}: bad time window")
        if not (self.e_min <= self.e_arrival <= self.e_max):
            raise ConfigError(f"session {self.session_id}: arrival energy out of bounds")
        if not (self.e_min <= self.e_target <= self.e_max):
            raise ConfigError(f"session {self.session_id}: target energy out of bounds")


@dataclass
class Scenario:
    config: ScenarioConfig
    sessions: list[ChargingSession]

    def validate(self) -> None:
        self.config.validate()
        by_charger: dict[int, list[ChargingSession]] = {}
        for s in self.sessions:
            s.validate(self.config.horizon_T)
            by_charger.setdefault(s.charger_id, []).append(s)
        for sessions in by_charger.values():
            sessions = sorted(sessions, key=lambda s: s.t_arrival)
            for a, b in zip(sessions, sessions[1:]):
                if b.t_arrival < a.t_departure:
                    raise ConfigError("overlapping sessions on one charger")

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["ev_catalog"] = [asdict(ev) for ev in self.config.ev_catalog]
        return {
            "format_version": SCENARIO_FORMAT_VERSION,
            "config": cfg,
            "sessions": [asdict(s) for s in self.sessions],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        if doc.get("format_version") != SCENARIO_FORMAT_VERSION:
            raise ConfigError("unsupported scenario format version")
        cfg = dict(doc["config"])
        cfg["ev_catalog"] = [EVSpec(**ev) for ev in cfg["ev_catalog"]]
        return cls(config=ScenarioConfig(**cfg),
                   sessions=[ChargingSession(**s) for s in doc["sessions"]])

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ActionVector:
    values: np.ndarray
    mask: np.ndarray


@dataclass
class RewardBreakdown:
    energy_term: float
    violation_kw: float
    satisfaction_penalty: float
    total: float


@dataclass
class SimState:
    t: int
    connected: list[int | None]     # session index per charger
    battery_energy: np.ndarray      # kWh per charger, valid where connected
    prev_total_power: float

    def copy(self) -> "SimState":
        return SimState(self.t, list(self.connected),
                        self.battery_energy.copy(), self.prev_total_power)


@dataclass
class StepResult:
    state: SimState
    breakdown: RewardBreakdown
    next_mask: np.ndarray
    applied_power: np.ndarray
    departures: list[tuple[int, float, float]]  # (session_id, e_dep, e_target)


def make_scenario_config(num_chargers: int, horizon_T: int = 96,
                         seed: int = 0, num_transformer_groups: int = 1,
                         generalization_shift: str = "none",
                         dt_hours: float = 0.25,
                         ev_catalog: list[EVSpec] | None = None,
                         **overrides) -> ScenarioConfig:
    """Build a fully-populated config with the documented synthetic defaults."""
    rng = np.random.default_rng(seed)
    T = horizon_T
    spd = max(1, int(round(24.0 / dt_hours)))
    t = np.arange(T)
    noise = rng.normal(0.0, 0.01, size=T)
    price_c = np.maximum(0.01, 0.20 + 0.10 * np.sin(2 * np.pi * (t % spd) / spd) + noise)
    price_d = 0.9 * price_c
    if ev_catalog is None:
        ev_catalog = [EVSpec(), EVSpec(capacity_kwh=30.0, e_min_kwh=1.5,
                                       p_charge_max_kw=7.4, p_discharge_max_kw=7.4)]
    rating = max(ev.p_charge_max_kw for ev in ev_catalog)
    setpoint = np.full(T, 0.5 * num_chargers * rating)
    if generalization_shift == "extreme":
        setpoint = setpoint / 2.0
    groups = [[] for _ in range(num_transformer_groups)]
    mapping = [i % num_transformer_groups for i in range(num_chargers)]
    for i, w in enumerate(mapping):
        groups[w].append(i)
    group_limits = [[0.9 * rating * max(1, len(g))] * T for g in groups]
    cfg = ScenarioConfig(
        num_chargers=num_chargers,
        num_transformer_groups=num_transformer_groups,
        charger_to_group=mapping,
        horizon_T=T,
        dt_hours=dt_hours,
        price_charge=[float(x) for x in price_c],
        price_discharge=[float(x) for x in price_d],
        power_setpoint=[float(x) for x in setpoint],
        group_limits=[[float(x) for x in s] for s in group_limits],
        ev_catalog=ev_catalog,
        seed=seed,
        generalization_shift=generalization_shift,
    )
    for key, val in overrides.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown config field {key!r}")
        setattr(cfg, key, val)
    cfg.validate()
    return cfg


def _arrival_rates(config: ScenarioConfig) -> np.ndarray:
    """Per-step-of-day arrival probability per charger, after any shift."""
    spd = config.steps_per_day
    proc = config.arrival_process
    kind = proc.get("kind", "bimodal_day")
    if kind == "profile":
        rates = np.asarray(proc["rates"], dtype=float)
        if len(rates) != spd:
            raise ConfigError("arrival profile length must equal steps per day")
    elif kind == "uniform":
        rates = np.full(spd, float(proc["rate"]))
    elif kind == "bimodal_day":
        steps = np.arange(spd)
        sigma = float(proc.get("sigma_steps", 8.0))
        rates = np.zeros(spd)
        for peak in proc.get("peak_steps", [32, 72]):
            d = np.minimum(np.abs(steps - peak), spd - np.abs(steps - peak))
            rates += np.exp(-0.5 * (d / sigma) ** 2)
        rates *= float(proc.get("scale", 0.1))
    else:
        raise ConfigError(f"unknown arrival process {kind!r}")

    shift = config.generalization_shift
    if shift == "small":
        rates = np.roll(rates, int(round(2.0 / config.dt_hours)))
    elif shift == "medium":
        rates = np.roll(rates, int(round(4.0 / config.dt_hours)))
    elif shift == "extreme":
        rates = np.full(spd, rates.mean())
    if np.any(rates < 0) or np.any(rates > 1):
        raise ConfigError("arrival rates must be probabilities in [0, 1]")
    return rates


def generate_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Sample a deterministic session list from the configured processes.

    Sessions on a busy charger are simply not spawned, so per-charger
    non-overlap holds by construction.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    rates = _arrival_rates(config)
    stay = config.stay_duration_dist
    soc = config.soc_arrival_dist
    stay_lo = int(stay.get("min_steps", 4))
    stay_hi = int(stay.get("max_steps", 40))
    stay_scale = 1.0
    soc_lo, soc_hi = float(soc.get("low", 0.2)), float(soc.get("high", 0.6))
    if config.generalization_shift == "medium":
        stay_scale = 1.5
        stay_hi = int(round(stay_hi * 1.5))
    elif config.generalization_shift == "extreme":
        soc_lo, soc_hi = 0.05, 0.9

    sessions: list[ChargingSession] = []
    spd = config.steps_per_day
    for charger in range(config.num_chargers):
        busy_until = 0
        for t in range(config.horizon_T):
            if t < busy_until:
                continue
            if rng.random() >= rates[t % spd]:
                continue
            if stay.get("kind", "lognormal") == "lognormal":
                raw = rng.lognormal(stay["mu"], stay["sigma"]) * stay_scale
            else:
                raw = rng.uniform(stay_lo, stay_hi) * stay_scale
            duration = int(np.clip(round(raw), stay_lo, stay_hi))
            depart = min(t + duration, config.horizon_T)
            if depart <= t:
                continue
            ev = config.ev_catalog[int(rng.integers(len(config.ev_catalog)))]
            e_arr = float(rng.uniform(soc_lo, soc_hi) * ev.capacity_kwh)
            sessions.append(ChargingSession(
                session_id=len(sessions),
                charger_id=charger,
                group_id=config.charger_to_group[charger],
                t_arrival=t,
                t_departure=depart,
                e_arrival=e_arr,
                e_target=float(ev.target_frac * ev.capacity_kwh),
                e_min=float(ev.e_min_kwh),
                e_max=float(ev.capacity_kwh),
                p_charge_max=float(ev.p_charge_max_kw),
                p_charge_min=float(ev.p_charge_min_kw),
                p_discharge_max_mag=float(ev.p_discharge_max_kw),
            ))
            busy_until = depart
    scenario = Scenario(config=config, sessions=sessions)
    scenario.validate()
    return scenario


def random_scenario(num_chargers: int, horizon_T: int = 96, seed: int = 0,
                    generalization_shift: str = "none",
                    **config_overrides) -> Scenario:
    """Convenience: seeded config (prices, limits) plus seeded sessions."""
    cfg = make_scenario_config(num_chargers, horizon_T=horizon_T, seed=seed,
                               generalization_shift=generalization_shift,
                               **config_overrides)
    return generate_scenario(cfg, seed)


class ChargingEnv:
    """Sequentially-stepped simulator for one scenario.

    Instances are independent; a single instance must not be shared
    across workers mid-episode.
    """

    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self.config = scenario.config
        T = self.config.horizon_T
        self._arrivals: list[list[int]] = [[] for _ in range(T + 1)]
        for idx, s in enumerate(scenario.sessions):
            self._arrivals[s.t_arrival].append(idx)
        self.state: SimState | None = None
        self.reset()

    def reset(self) -> np.ndarray:
        n = self.config.num_chargers
        self.state = SimState(t=0, connected=[None] * n,
                              battery_energy=np.zeros(n), prev_total_power=0.0)
        self._connect_arrivals(0)
        return self.action_mask()

    def _connect_arrivals(self, t: int) -> None:
        for idx in self._arrivals[t]:
            s = self.scenario.sessions[idx]
            self.state.connected[s.charger_id] = idx
            self.state.battery_energy[s.charger_id] = s.e_arrival

    def action_mask(self, state: SimState | None = None) -> np.ndarray:
        state = state or self.state
        return np.array([1 if c is not None else 0 for c in state.connected],
                        dtype=np.int8)

    def get_state(self) -> SimState:
        return self.state.copy()

    def set_state(self, state: SimState) -> None:
        self.state = state.copy()

    def session_at(self, charger: int) -> ChargingSession | None:
        idx = self.state.connected[charger]
        return None if idx is None else self.scenario.sessions[idx]

    def step(self, values: np.ndarray) -> StepResult:
        cfg = self.config
        state = self.state
        t = state.t
        if t >= cfg.horizon_T:
            raise RuntimeError("step called at or beyond the horizon")
        values = np.asarray(values, dtype=float)
        if values.shape != (cfg.num_chargers,):
            raise ValueError(f"action length {values.shape} != ({cfg.num_chargers},)")

        dt = cfg.dt_hours
        powers = np.zeros(cfg.num_chargers)
        for i, sess_idx in enumerate(state.connected):
            if sess_idx is None:
                continue  # masked entries act as zero power
            s = self.scenario.sessions[sess_idx]
            a = float(np.clip(values[i], -1.0, 1.0))
            p = a * s.p_charge_max if a >= 0 else a * s.p_discharge_max_mag
            e = state.battery_energy[i]
            p = min(p, (s.e_max - e) / dt)
            p = max(p, (s.e_min - e) / dt)
            if 0.0 < abs(p) < s.p_charge_min:
                p = 0.0
            powers[i] = p

        # group overloads resolved by proportional scale-down
        for w in range(cfg.num_transformer_groups):
            members = [i for i, g in enumerate(cfg.charger_to_group) if g == w]
            total = powers[members].sum()
            limit = cfg.group_limits[w][t]
            if total > limit and total > 0:
                powers[members] *= max(limit, 0.0) / total

        for i, sess_idx in enumerate(state.connected):
            if sess_idx is not None:
                state.battery_energy[i] += powers[i] * dt

        p_pos = np.maximum(powers, 0.0)
        p_neg = np.maximum(-powers, 0.0)
        energy_term = -dt * float(
            cfg.price_charge[t] * p_pos.sum() - cfg.price_discharge[t] * p_neg.sum())
        p_sum = float(powers.sum())
        violation = max(0.0, p_sum - cfg.power_setpoint[t])

        satisfaction = 0.0
        departures: list[tuple[int, float, float]] = []
        for i, sess_idx in enumerate(state.connected):
            if sess_idx is None:
                continue
            s = self.scenario.sessions[sess_idx]
            if s.t_departure == t + 1:
                e_dep = float(state.battery_energy[i])
                satisfaction += (e_dep - s.e_target) ** 2
                departures.append((s.session_id, e_dep, s.e_target))
                state.connected[i] = None
                state.battery_energy[i] = 0.0

        total = (energy_term - cfg.weight_violation * violation
                 - cfg.weight_satisfaction * satisfaction)
        breakdown = RewardBreakdown(energy_term=energy_term,
                                    violation_kw=violation,
                                    satisfaction_penalty=satisfaction,
                                    total=total)
        state.t = t + 1
        state.prev_total_power = p_sum
        if state.t < len(self._arrivals):
            self._connect_arrivals(state.t)
        return StepResult(state=self.get_state(), breakdown=breakdown,
                          next_mask=self.action_mask(),
                          applied_power=powers, departures=departures)

    @property
    def done(self) -> bool:
        return self.state.t >= self.config.horizon_T
