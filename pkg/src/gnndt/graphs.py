"""Dynamic state/action graph construction for the charging environment.

Topology follows the physical hierarchy: one operator (CPO) root node,
transformer-group nodes below it, charger nodes below those, and one EV
node per connected session. Action graphs carry one node per connected
EV, wired within transformer groups plus a deterministic chain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .env import Scenario, SimState

EV_FEATURES = 5        # [soc, steps_to_departure, j_norm, i_norm, w_norm]
CS_FEATURES = 3        # [p_charge_max, p_discharge_max, i_norm]
TR_FEATURES = 2        # [group_limit_kw, w_norm]
CPO_FEATURES = 5       # [day_frac, sin_day, cos_day, price_charge, prev_total_power]
EV_ACTION_FEATURES = 3  # [action, i_norm, w_norm]


class NodeKind(IntEnum):
    EV = 0
    CS = 1
    TR = 2
    CPO = 3
    EV_ACTION = 4


RAW_WIDTH = {
    NodeKind.EV: EV_FEATURES,
    NodeKind.CS: CS_FEATURES,
    NodeKind.TR: TR_FEATURES,
    NodeKind.CPO: CPO_FEATURES,
    NodeKind.EV_ACTION: EV_ACTION_FEATURES,
}


@dataclass
class StateGraph:
    kinds: np.ndarray                 # int8 per node
    feats: list[np.ndarray]           # raw feature vector per node (width varies by kind)
    edges: list[tuple[int, int]]      # undirected pairs
    ev_node_by_charger: dict[int, int] = field(default_factory=dict)
    entity_ids: list[tuple] = field(default_factory=list)  # (j, i, w) where applicable

    @property
    def num_nodes(self) -> int:
        return len(self.feats)


@dataclass
class ActionGraph:
    feats: list[np.ndarray]
    edges: list[tuple[int, int]]
    state_node_ref: list[int]         # index of matching EV node in the state graph
    chargers: list[int] = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        return len(self.feats)


def _norm_id(idx: int, count: int) -> float:
    return idx / max(1.0, count - 1.0)


def build_state_graph(state: SimState, scenario: Scenario) -> StateGraph:
    cfg = scenario.config
    kinds: list[int] = [NodeKind.CPO]
    feats: list[np.ndarray] = []
    entity_ids: list[tuple] = [()]
    edges: list[tuple[int, int]] = []

    spd = cfg.steps_per_day
    h = state.t % spd
    day = (state.t // spd) % 7
    feats.append(np.array([
        day / 7.0,
        math.sin(2 * math.pi * h / spd),
        math.cos(2 * math.pi * h / spd),
        cfg.price_charge[min(state.t, cfg.horizon_T - 1)],
        state.prev_total_power,
    ]))

    tr_index = {}
    for w in range(cfg.num_transformer_groups):
        tr_index[w] = len(feats)
        kinds.append(NodeKind.TR)
        feats.append(np.array([
            cfg.group_limits[w][min(state.t, cfg.horizon_T - 1)],
            _norm_id(w, cfg.num_transformer_groups),
        ]))
        entity_ids.append((None, None, w))
        edges.append((0, tr_index[w]))

    rating_c = max(ev.p_charge_max_kw for ev in cfg.ev_catalog)
    rating_d = max(ev.p_discharge_max_kw for ev in cfg.ev_catalog)
    cs_index = {}
    for i in range(cfg.num_chargers):
        sess_idx = state.connected[i]
        if sess_idx is not None:
            s = scenario.sessions[sess_idx]
            p_c, p_d = s.p_charge_max, s.p_discharge_max_mag
        else:
            p_c, p_d = rating_c, rating_d
        cs_index[i] = len(feats)
        kinds.append(NodeKind.CS)
        feats.append(np.array([p_c, p_d, _norm_id(i, cfg.num_chargers)]))
        entity_ids.append((None, i, cfg.charger_to_group[i]))
        edges.append((tr_index[cfg.charger_to_group[i]], cs_index[i]))

    ev_node_by_charger = {}
    n_sessions = max(1, len(scenario.sessions))
    for i in range(cfg.num_chargers):
        sess_idx = state.connected[i]
        if sess_idx is None:
            continue
        s = scenario.sessions[sess_idx]
        node = len(feats)
        kinds.append(NodeKind.EV)
        feats.append(np.array([
            state.battery_energy[i] / s.e_max,
            float(s.t_departure - state.t),
            _norm_id(s.session_id, n_sessions),
            _norm_id(i, cfg.num_chargers),
            _norm_id(s.group_id, cfg.num_transformer_groups),
        ]))
        entity_ids.append((s.session_id, i, s.group_id))
        edges.append((cs_index[i], node))
        ev_node_by_charger[i] = node

    return StateGraph(kinds=np.array(kinds, dtype=np.int8), feats=feats,
                      edges=edges, ev_node_by_charger=ev_node_by_charger,
                      entity_ids=entity_ids)


def build_action_graph(state: SimState, action_values, scenario: Scenario,
                       state_graph: StateGraph | None = None) -> ActionGraph:
    if state_graph is None:
        state_graph = build_state_graph(state, scenario)
    return action_graph_from_state(state_graph, action_values)


def action_graph_from_state(state_graph: StateGraph, action_values) -> ActionGraph:
    """Action graph for the EVs present in a state graph.

    Charger and group identifiers are read back from the EV node features,
    so this works on deserialized graphs without the originating scenario.
    """
    action_values = np.asarray(action_values, dtype=float)
    feats: list[np.ndarray] = []
    refs: list[int] = []
    chargers: list[int] = []
    group_of: list[float] = []
    for i in sorted(state_graph.ev_node_by_charger):
        node = state_graph.ev_node_by_charger[i]
        _, _, _, i_norm, w_norm = state_graph.feats[node]
        feats.append(np.array([float(action_values[i]), i_norm, w_norm]))
        refs.append(node)
        chargers.append(i)
        group_of.append(float(w_norm))

    edges: set[tuple[int, int]] = set()
    for a in range(len(feats)):
        for b in range(a + 1, len(feats)):
            if group_of[a] == group_of[b]:
                edges.add((a, b))
    for a in range(len(feats) - 1):
        edges.add((a, a + 1))
    return ActionGraph(feats=feats, edges=sorted(edges),
                       state_node_ref=refs, chargers=chargers)


def normalized_adjacency(num_nodes: int, edges) -> np.ndarray:
    """Symmetrically normalized adjacency with self-loops: D^-1/2 (A+I) D^-1/2."""
    a = np.eye(num_nodes)
    for u, v in edges:
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise ValueError(f"edge ({u}, {v}) out of range")
        a[u, v] = 1.0
        a[v, u] = 1.0
    d = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def permute_graph(graph: StateGraph, permutation) -> StateGraph:
    """Relabel nodes by `permutation` (new_index = permutation[old_index])."""
    perm = list(permutation)
    n = graph.num_nodes
    if sorted(perm) != list(range(n)):
        raise ValueError("permutation must be a bijection on node indices")
    feats = [None] * n
    kinds = np.empty(n, dtype=np.int8)
    entity_ids = [None] * n
    for old, new in enumerate(perm):
        feats[new] = graph.feats[old].copy()
        kinds[new] = graph.kinds[old]
        entity_ids[new] = graph.entity_ids[old] if graph.entity_ids else ()
    edges = [(perm[u], perm[v]) for u, v in graph.edges]
    ev_map = {i: perm[node] for i, node in graph.ev_node_by_charger.items()}
    return StateGraph(kinds=kinds, feats=feats, edges=edges,
                      ev_node_by_charger=ev_map, entity_ids=entity_ids)


def graph_to_dict(g: StateGraph) -> dict:
    return {
        "kinds": [int(k) for k in g.kinds],
        "feats": [[float(x) for x in f] for f in g.feats],
        "edges": [[int(u), int(v)] for u, v in g.edges],
        "ev_by_charger": {str(i): int(n) for i, n in g.ev_node_by_charger.items()},
    }


def graph_from_dict(doc: dict) -> StateGraph:
    return StateGraph(
        kinds=np.array(doc["kinds"], dtype=np.int8),
        feats=[np.array(f, dtype=float) for f in doc["feats"]],
        edges=[(int(u), int(v)) for u, v in doc["edges"]],
        ev_node_by_charger={int(i): int(n) for i, n in doc["ev_by_charger"].items()},
    )
