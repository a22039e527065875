"""Shared helpers: hand-buildable scenarios with constant price/limit series."""
from __future__ import annotations

import numpy as np
import pytest

from gnndt.env import ChargingSession, EVSpec, Scenario, ScenarioConfig


def manual_config(num_chargers=1, T=4, dt=0.25, price=0.2, price_d=None,
                  setpoint=50.0, group_limit=1000.0, groups=1,
                  mapping=None, **overrides) -> ScenarioConfig:
    """Constant-series config for arithmetic-level tests."""
    if mapping is None:
        mapping = [i % groups for i in range(num_chargers)]
    price_series = list(price) if np.ndim(price) else [float(price)] * T
    if price_d is None:
        price_d_series = [0.9 * p for p in price_series]
    else:
        price_d_series = (list(price_d) if np.ndim(price_d)
                          else [float(price_d)] * T)
    setpoint_series = (list(setpoint) if np.ndim(setpoint)
                       else [float(setpoint)] * T)
    cfg = ScenarioConfig(
        num_chargers=num_chargers,
        num_transformer_groups=groups,
        charger_to_group=mapping,
        horizon_T=T,
        dt_hours=dt,
        price_charge=price_series,
        price_discharge=price_d_series,
        power_setpoint=setpoint_series,
        group_limits=[[float(group_limit)] * T for _ in range(groups)],
        ev_catalog=[EVSpec()],
    )
    for key, val in overrides.items():
        setattr(cfg, key, val)
    cfg.validate()
    return cfg


def manual_session(session_id=0, charger_id=0, group_id=0, t_arrival=0,
                   t_departure=4, e_arrival=10.0, e_target=40.0, e_min=0.0,
                   e_max=50.0, p_charge_max=11.0, p_charge_min=0.0,
                   p_discharge_max_mag=11.0) -> ChargingSession:
    return ChargingSession(
        session_id=session_id, charger_id=charger_id, group_id=group_id,
        t_arrival=t_arrival, t_departure=t_departure, e_arrival=e_arrival,
        e_target=e_target, e_min=e_min, e_max=e_max,
        p_charge_max=p_charge_max, p_charge_min=p_charge_min,
        p_discharge_max_mag=p_discharge_max_mag)


def manual_scenario(config, sessions) -> Scenario:
    scenario = Scenario(config=config, sessions=list(sessions))
    scenario.validate()
    return scenario


@pytest.fixture
def busy_scenario():
    """Two chargers, short horizon, both occupied from the start."""
    cfg = manual_config(num_chargers=2, T=8, setpoint=50.0)
    sessions = [
        manual_session(session_id=0, charger_id=0, t_arrival=0, t_departure=8,
                       e_arrival=10.0, e_target=20.0),
        manual_session(session_id=1, charger_id=1, t_arrival=2, t_departure=6,
                       e_arrival=30.0, e_target=40.0),
    ]
    return manual_scenario(cfg, sessions)
