"""Graph-embedded decision transformer with residual action decoding.

Per step the model sees three tokens (return-to-go, previous action,
state). States and previous actions are encoded by GCN stacks with mean
pooling; a pre-norm causal transformer produces one output vector per
state token, and each connected EV's action is decoded as the dot
product of that vector with the EV node's final GCN embedding. A
flattened-MLP variant (fixed charger count, dense decode) serves as the
classic baseline for ablations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor, const
from .graphs import (NodeKind, RAW_WIDTH, StateGraph, ActionGraph,
                     action_graph_from_state, normalized_adjacency)
from .data import Window

STATE_KINDS = (NodeKind.EV, NodeKind.CS, NodeKind.TR, NodeKind.CPO)
NEG_BIAS = -1e9


@dataclass
class ModelConfig:
    context_K: int = 10
    embed_dim: int = 128
    gnn_feature_dim: int = 16
    gnn_hidden_dim: int = 32
    gcn_layers_state: int = 3
    gcn_layers_action: int = 3
    decoder_layers: int = 3
    attention_heads: int = 4
    embedder_kind: str = "gnn"                 # "gnn" or "flat_mlp"
    action_embedder_kind: str | None = None    # None: follow embedder_kind
    use_residual_decode: bool = True
    use_action_mask_loss: bool = True
    rtg_scale: float = 1e-3
    max_episode_steps: int = 300
    num_chargers: int | None = None            # required by flat / dense-decode parts
    num_transformer_groups: int = 1

    @property
    def action_kind(self) -> str:
        return self.action_embedder_kind or self.embedder_kind

    @property
    def flat_state_dim(self) -> int:
        return 6 * self.num_chargers + self.num_transformer_groups + 5

    def validate(self) -> None:
        if self.embed_dim % self.attention_heads != 0:
            raise ValueError("embed_dim must be divisible by attention_heads")
        if self.context_K < 1:
            raise ValueError("context_K must be >= 1")
        if self.embedder_kind not in ("gnn", "flat_mlp"):
            raise ValueError(f"unknown embedder kind {self.embedder_kind!r}")
        needs_count = (self.embedder_kind == "flat_mlp"
                       or self.action_kind == "flat_mlp"
                       or not self.use_residual_decode)
        if needs_count and not self.num_chargers:
            raise ValueError("num_chargers required for flat embedders / dense decode")
        if self.use_residual_decode and self.embedder_kind != "gnn":
            raise ValueError("residual decode needs the graph state embedder")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- initialization ---------------------------------------------------------

def _trunc_normal(rng, shape, std=0.02):
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _gcn_dims(config: ModelConfig, n_layers: int):
    dims = [config.gnn_hidden_dim] * n_layers + [config.gnn_feature_dim]
    dims = [config.gnn_hidden_dim] + [config.gnn_hidden_dim] * (n_layers - 1)
    return list(zip(dims, dims[1:] + [config.gnn_feature_dim]))


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    config.validate()
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    d = config.embed_dim
    f0 = config.gnn_hidden_dim
    fl = config.gnn_feature_dim

    if config.embedder_kind == "gnn":
        for kind in STATE_KINDS:
            p[f"state_in/{kind.name}/W"] = _trunc_normal(rng, (RAW_WIDTH[kind], f0))
            p[f"state_in/{kind.name}/b"] = np.zeros((1, f0))
        for l, (fi, fo) in enumerate(_gcn_dims(config, config.gcn_layers_state)):
            p[f"state_gcn/{l}/W"] = _glorot(rng, fi, fo)
        p["proj_state/W"] = _trunc_normal(rng, (fl, d))
        p["proj_state/b"] = np.zeros((1, d))
    else:
        ds = config.flat_state_dim
        p["flat_state/W1"] = _trunc_normal(rng, (ds, d))
        p["flat_state/b1"] = np.zeros((1, d))
        p["flat_state/W2"] = _trunc_normal(rng, (d, d))
        p["flat_state/b2"] = np.zeros((1, d))

    if config.action_kind == "gnn":
        kind = NodeKind.EV_ACTION
        p[f"act_in/{kind.name}/W"] = _trunc_normal(rng, (RAW_WIDTH[kind], f0))
        p[f"act_in/{kind.name}/b"] = np.zeros((1, f0))
        for l, (fi, fo) in enumerate(_gcn_dims(config, config.gcn_layers_action)):
            p[f"act_gcn/{l}/W"] = _glorot(rng, fi, fo)
        p["proj_act/W"] = _trunc_normal(rng, (fl, d))
        p["proj_act/b"] = np.zeros((1, d))
    else:
        p["flat_act/W1"] = _trunc_normal(rng, (config.num_chargers, d))
        p["flat_act/b1"] = np.zeros((1, d))
        p["flat_act/W2"] = _trunc_normal(rng, (d, d))
        p["flat_act/b2"] = np.zeros((1, d))

    p["rtg/W1"] = _trunc_normal(rng, (1, d))
    p["rtg/b1"] = np.zeros((1, d))
    p["rtg/W2"] = _trunc_normal(rng, (d, d))
    p["rtg/b2"] = np.zeros((1, d))

    p["timestep/table"] = np.zeros((config.max_episode_steps, d))

    for i in range(config.decoder_layers):
        pre = f"blk/{i}"
        for nm in ("ln1", "ln2"):
            p[f"{pre}/{nm}/g"] = np.ones((1, d))
            p[f"{pre}/{nm}/b"] = np.zeros((1, d))
        for nm in ("Wq", "Wk", "Wv", "Wo"):
            p[f"{pre}/attn/{nm}"] = _trunc_normal(rng, (d, d))
        for nm in ("bq", "bk", "bv", "bo"):
            p[f"{pre}/attn/{nm}"] = np.zeros((1, d))
        p[f"{pre}/mlp/W1"] = _trunc_normal(rng, (d, 4 * d))
        p[f"{pre}/mlp/b1"] = np.zeros((1, 4 * d))
        p[f"{pre}/mlp/W2"] = _trunc_normal(rng, (4 * d, d))
        p[f"{pre}/mlp/b2"] = np.zeros((1, d))
    p["ln_f/g"] = np.ones((1, d))
    p["ln_f/b"] = np.zeros((1, d))

    if config.use_residual_decode:
        p["head/W"] = _trunc_normal(rng, (d, fl))
        p["head/b"] = np.zeros((1, fl))
    else:
        p["head_dense/W"] = _trunc_normal(rng, (d, config.num_chargers))
        p["head_dense/b"] = np.zeros((1, config.num_chargers))

    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def params_digest(params: dict[str, Tensor]) -> str:
    import hashlib
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


# -- graph stacks -----------------------------------------------------------

def _block_diag_norm_adjacency(graphs) -> np.ndarray:
    sizes = [g.num_nodes for g in graphs]
    n = sum(sizes)
    a = np.zeros((n, n))
    ofs = 0
    for g in graphs:
        if g.num_nodes:
            a[ofs:ofs + g.num_nodes, ofs:ofs + g.num_nodes] = normalized_adjacency(
                g.num_nodes, g.edges)
        ofs += g.num_nodes
    return a


def _kind_projection(graphs, kinds, params, prefix) -> Tensor:
    """Project heterogeneous raw node features into a shared width."""
    all_kinds = np.concatenate([np.asarray(g.kinds, dtype=np.int8) if hasattr(g, "kinds")
                                else np.full(g.num_nodes, NodeKind.EV_ACTION, np.int8)
                                for g in graphs]) if graphs else np.zeros(0, np.int8)
    feats: list[np.ndarray] = []
    for g in graphs:
        feats.extend(g.feats)
    n = len(feats)
    f0 = params[f"{prefix}/{kinds[0].name}/W"].data.shape[1]
    pieces = []
    for kind in kinds:
        rows = np.flatnonzero(all_kinds == kind)
        if rows.size == 0:
            continue
        raw = const(np.stack([feats[r] for r in rows]))
        proj = T.linear(raw, params[f"{prefix}/{kind.name}/W"],
                        params[f"{prefix}/{kind.name}/b"])
        scatter = np.zeros((n, rows.size))
        scatter[rows, np.arange(rows.size)] = 1.0
        pieces.append(T.matmul(const(scatter), proj))
    out = pieces[0]
    for piece in pieces[1:]:
        out = T.add(out, piece)
    return out


def _gcn_forward(graphs, params, config, prefix_in, prefix_gcn, n_layers,
                 kinds) -> tuple[Tensor | None, Tensor, list[int]]:
    """Shared GCN pipeline. Returns (per_node, pooled, node_offsets).

    `pooled` has one row per graph; graphs with zero nodes pool to zeros.
    """
    sizes = [g.num_nodes for g in graphs]
    offsets = list(np.concatenate([[0], np.cumsum(sizes)])[:-1].astype(int))
    n = sum(sizes)
    if n == 0:
        pooled = const(np.zeros((len(graphs), config.gnn_feature_dim)))
        return None, pooled, offsets
    x = _kind_projection(graphs, kinds, params, prefix_in)
    a = const(_block_diag_norm_adjacency(graphs))
    for l in range(n_layers):
        x = T.relu(T.matmul(a, T.matmul(x, params[f"{prefix_gcn}/{l}/W"])))
    pool = np.zeros((len(graphs), n))
    for gi, (ofs, sz) in enumerate(zip(offsets, sizes)):
        if sz:
            pool[gi, ofs:ofs + sz] = 1.0 / sz
    pooled = T.matmul(const(pool), x)
    return x, pooled, offsets


def embed_state(graph: StateGraph, params, config: ModelConfig):
    """Single-graph state embedding: (pooled (1 x F_L), per_node (N x F_L))."""
    if graph.num_nodes == 0:
        raise ValueError("state graph must be non-empty")
    per_node, pooled, _ = _gcn_forward([graph], params, config, "state_in",
                                       "state_gcn", config.gcn_layers_state,
                                       STATE_KINDS)
    return pooled, per_node


def embed_action(graph: ActionGraph, params, config: ModelConfig) -> Tensor:
    """Pooled action-graph embedding; an empty graph maps to the zero vector."""
    _, pooled, _ = _gcn_forward([graph], params, config, "act_in", "act_gcn",
                                config.gcn_layers_action, (NodeKind.EV_ACTION,))
    return pooled


def embed_rtg(g: float, params, config: ModelConfig) -> Tensor:
    x = const(np.array([[float(g) * config.rtg_scale]]))
    h = T.relu(T.linear(x, params["rtg/W1"], params["rtg/b1"]))
    return T.linear(h, params["rtg/W2"], params["rtg/b2"])


def flatten_state(graph: StateGraph, config: ModelConfig) -> np.ndarray:
    """Fixed-width state vector for the flat baseline (size-locked by charger count)."""
    cs_nodes = [i for i, k in enumerate(graph.kinds) if k == NodeKind.CS]
    tr_nodes = [i for i, k in enumerate(graph.kinds) if k == NodeKind.TR]
    cpo_nodes = [i for i, k in enumerate(graph.kinds) if k == NodeKind.CPO]
    if len(cs_nodes) != config.num_chargers:
        raise ValueError(
            f"flat embedder built for {config.num_chargers} chargers, "
            f"got a graph with {len(cs_nodes)}")
    out = np.zeros(config.flat_state_dim)
    for slot, node in enumerate(cs_nodes):
        base = 6 * slot
        p_c, p_d, _ = graph.feats[node]
        ev_node = None
        for charger, idx in graph.ev_node_by_charger.items():
            if charger == slot:
                ev_node = idx
        if ev_node is not None:
            soc, remaining, _, _, w_norm = graph.feats[ev_node]
            out[base:base + 6] = [1.0, soc, remaining, p_c, p_d, w_norm]
        else:
            out[base:base + 6] = [0.0, 0.0, 0.0, p_c, p_d, 0.0]
    for slot, node in enumerate(tr_nodes[:config.num_transformer_groups]):
        out[6 * config.num_chargers + slot] = graph.feats[node][0]
    out[-5:] = graph.feats[cpo_nodes[0]]
    return out


# -- transformer ------------------------------------------------------------

def _ln_affine(x: Tensor, params, prefix) -> Tensor:
    return T.add(T.mul(T.layer_norm(x), params[f"{prefix}/g"]),
                 params[f"{prefix}/b"])


def _attention(h: Tensor, params, prefix, bias: np.ndarray,
               config: ModelConfig) -> Tensor:
    d = config.embed_dim
    nh = config.attention_heads
    dh = d // nh
    q = T.linear(h, params[f"{prefix}/Wq"], params[f"{prefix}/bq"])
    k = T.linear(h, params[f"{prefix}/Wk"], params[f"{prefix}/bk"])
    v = T.linear(h, params[f"{prefix}/Wv"], params[f"{prefix}/bv"])
    bias_t = const(bias)
    out = None
    for head in range(nh):
        lo, hi = head * dh, (head + 1) * dh
        qh = T.slice_axis(q, 1, lo, hi)
        kh = T.slice_axis(k, 1, lo, hi)
        vh = T.slice_axis(v, 1, lo, hi)
        logits = T.add(T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(dh)),
                       bias_t)
        att = T.row_softmax(logits)
        oh = T.matmul(att, vh)
        proj = T.matmul(oh, T.slice_axis(params[f"{prefix}/Wo"], 0, lo, hi))
        out = proj if out is None else T.add(out, proj)
    return T.add(out, params[f"{prefix}/bo"])


def _mlp_block(x: Tensor, params, prefix) -> Tensor:
    h = T.gelu(T.linear(x, params[f"{prefix}/W1"], params[f"{prefix}/b1"]))
    return T.linear(h, params[f"{prefix}/W2"], params[f"{prefix}/b2"])


def _transformer(tokens: Tensor, params, config: ModelConfig,
                 bias: np.ndarray) -> Tensor:
    x = tokens
    for i in range(config.decoder_layers):
        x = T.add(x, _attention(_ln_affine(x, params, f"blk/{i}/ln1"),
                                params, f"blk/{i}/attn", bias, config))
        x = T.add(x, _mlp_block(_ln_affine(x, params, f"blk/{i}/ln2"),
                                params, f"blk/{i}/mlp"))
    return _ln_affine(x, params, "ln_f")


def _attention_bias(windows, positions) -> np.ndarray:
    """Additive mask: causal within each window, pads isolated to self-attention."""
    B = len(windows)
    K = windows[0].K
    n_tok = B * 3 * K
    nonpad = set(positions)
    bias = np.full((n_tok, n_tok), NEG_BIAS)
    for b in range(B):
        base = b * 3 * K
        valid = [k for k in range(K) if (b, k) in nonpad]
        tok_ids = [base + 3 * k + m for k in valid for m in range(3)]
        for ri, r in enumerate(tok_ids):
            for c in tok_ids[:ri + 1]:
                bias[r, c] = 0.0
    np.fill_diagonal(bias, 0.0)
    return bias


@dataclass
class ForwardResult:
    positions: list[tuple[int, int]]            # non-pad (window, step) pairs
    pred_nodes: Tensor | None = None            # (M, 1) residual-decoded actions
    node_index: list[tuple[int, int, int]] = field(default_factory=list)  # (b, k, charger)
    pred_dense: Tensor | None = None            # (n_pos, num_chargers) dense decode
    y_tokens: Tensor | None = None              # action-head output per position
    state_per_node: Tensor | None = None
    state_offsets: list[int] = field(default_factory=list)

    def dense_actions(self, windows) -> np.ndarray:
        """Predictions scattered to a (B, K, num_chargers) array (zeros elsewhere)."""
        B = len(windows)
        K = windows[0].K
        n_chg = windows[0].actions.shape[1]
        out = np.zeros((B, K, n_chg))
        if self.pred_nodes is not None:
            for (b, k, i), val in zip(self.node_index, self.pred_nodes.data[:, 0]):
                out[b, k, i] = val
        else:
            for idx, (b, k) in enumerate(self.positions):
                out[b, k] = self.pred_dense.data[idx]
        return out


def forward_window(windows: list[Window], params, config: ModelConfig) -> ForwardResult:
    config.validate()
    B = len(windows)
    K = windows[0].K
    if K > config.max_episode_steps:
        raise ValueError("window length exceeds the timestep-embedding table")
    positions = [(b, k) for b, w in enumerate(windows)
                 for k in range(K) if not w.pad[k]]
    if not positions:
        raise ValueError("all window positions are padding")
    n_pos = len(positions)

    # state tokens
    state_per_node = None
    state_offsets: list[int] = []
    if config.embedder_kind == "gnn":
        graphs = [windows[b].graphs[k] for b, k in positions]
        state_per_node, pooled, state_offsets = _gcn_forward(
            graphs, params, config, "state_in", "state_gcn",
            config.gcn_layers_state, STATE_KINDS)
        state_tok = T.linear(pooled, params["proj_state/W"], params["proj_state/b"])
    else:
        flat = np.stack([flatten_state(windows[b].graphs[k], config)
                         for b, k in positions])
        h = T.relu(T.linear(const(flat), params["flat_state/W1"],
                            params["flat_state/b1"]))
        state_tok = T.linear(h, params["flat_state/W2"], params["flat_state/b2"])

    # previous-action tokens
    if config.action_kind == "gnn":
        agraphs = []
        for b, k in positions:
            pg = windows[b].prev_graphs[k]
            if pg is None:
                agraphs.append(ActionGraph(feats=[], edges=[], state_node_ref=[]))
            else:
                agraphs.append(action_graph_from_state(pg, windows[b].prev_actions[k]))
        _, pooled_a, _ = _gcn_forward(agraphs, params, config, "act_in",
                                      "act_gcn", config.gcn_layers_action,
                                      (NodeKind.EV_ACTION,))
        act_tok = T.linear(pooled_a, params["proj_act/W"], params["proj_act/b"])
    else:
        prev = np.stack([windows[b].prev_actions[k] for b, k in positions])
        h = T.relu(T.linear(const(prev), params["flat_act/W1"],
                            params["flat_act/b1"]))
        act_tok = T.linear(h, params["flat_act/W2"], params["flat_act/b2"])

    # return-to-go tokens
    rtg_in = const(np.array([[windows[b].rtg[k] * config.rtg_scale]
                             for b, k in positions]))
    h = T.relu(T.linear(rtg_in, params["rtg/W1"], params["rtg/b1"]))
    rtg_tok = T.linear(h, params["rtg/W2"], params["rtg/b2"])

    timesteps = np.array([windows[b].timesteps[k] for b, k in positions])
    if timesteps.max(initial=0) >= config.max_episode_steps:
        raise ValueError("episode step exceeds max_episode_steps")
    te = T.embedding_lookup(params["timestep/table"], timesteps)

    n_tok = B * 3 * K
    scatters = []
    for m in range(3):
        s = np.zeros((n_tok, n_pos))
        for idx, (b, k) in enumerate(positions):
            s[(b * K + k) * 3 + m, idx] = 1.0
        scatters.append(const(s))
    tokens = T.add(
        T.add(T.matmul(scatters[0], T.add(rtg_tok, te)),
              T.matmul(scatters[1], T.add(act_tok, te))),
        T.matmul(scatters[2], T.add(state_tok, te)))

    bias = _attention_bias(windows, positions)
    hidden = _transformer(tokens, params, config, bias)

    select_s = np.zeros((n_pos, n_tok))
    for idx, (b, k) in enumerate(positions):
        select_s[idx, (b * K + k) * 3 + 2] = 1.0
    h_pos = T.matmul(const(select_s), hidden)

    result = ForwardResult(positions=positions,
                           state_per_node=state_per_node,
                           state_offsets=state_offsets)
    if config.use_residual_decode:
        y = T.linear(h_pos, params["head/W"], params["head/b"])
        result.y_tokens = y
        node_index: list[tuple[int, int, int]] = []
        node_rows: list[int] = []
        for idx, (b, k) in enumerate(positions):
            g = windows[b].graphs[k]
            for charger in sorted(g.ev_node_by_charger):
                node_index.append((b, k, charger))
                node_rows.append(state_offsets[idx] + g.ev_node_by_charger[charger])
        result.node_index = node_index
        m = len(node_index)
        if m == 0:
            result.pred_nodes = const(np.zeros((0, 1)))
            return result
        rep = np.zeros((m, n_pos))
        sel = np.zeros((m, state_per_node.data.shape[0]))
        for r, ((b, k), row) in enumerate(zip(
                [(b, k) for b, k, _ in node_index], node_rows)):
            rep[r, positions.index((b, k))] = 1.0
            sel[r, row] = 1.0
        y_rep = T.matmul(const(rep), y)
        x_ev = T.matmul(const(sel), state_per_node)
        prod = T.mul(y_rep, x_ev)
        result.pred_nodes = T.matmul(prod, const(np.ones((config.gnn_feature_dim, 1))))
    else:
        result.pred_dense = T.linear(h_pos, params["head_dense/W"],
                                     params["head_dense/b"])
        result.y_tokens = result.pred_dense
    return result


# -- losses -----------------------------------------------------------------

def masked_mse_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray,
                    pad_mask: np.ndarray | None, K: int) -> Tensor:
    """Squared error weighted by the action mask and pad mask, averaged over K."""
    target = np.asarray(target, dtype=float)
    weight = np.asarray(mask, dtype=float).copy()
    if pad_mask is not None:
        weight = weight * np.asarray(pad_mask, dtype=float).reshape(-1, 1)
    diff = T.add(pred, const(-target))
    sq = T.mul(T.mul(diff, diff), const(weight))
    return T.scale(T.dot(sq, const(np.ones_like(target))), 1.0 / K)


def window_loss(windows: list[Window], params,
                config: ModelConfig) -> tuple[Tensor, ForwardResult]:
    """Masked MSE between decoded and recorded actions over a window batch."""
    out = forward_window(windows, params, config)
    B = len(windows)
    K = windows[0].K
    norm = 1.0 / (B * K)
    if out.pred_nodes is not None:
        if out.pred_nodes.data.shape[0] == 0:
            return const(np.zeros((1, 1))), out
        targets = np.array([[windows[b].actions[k][i]]
                            for b, k, i in out.node_index])
        if config.use_action_mask_loss:
            weights = np.array([[float(windows[b].masks[k][i])]
                                for b, k, i in out.node_index])
        else:
            weights = np.ones_like(targets)
        diff = T.add(out.pred_nodes, const(-targets))
        sq = T.mul(T.mul(diff, diff), const(weights))
        loss = T.scale(T.dot(sq, const(np.ones_like(targets))), norm)
        return loss, out
    targets = np.stack([windows[b].actions[k] for b, k in out.positions])
    if config.use_action_mask_loss:
        weights = np.stack([windows[b].masks[k] for b, k in out.positions])
    else:
        weights = np.ones_like(targets)
    diff = T.add(out.pred_dense, const(-targets))
    sq = T.mul(T.mul(diff, diff), const(weights.astype(float)))
    loss = T.scale(T.dot(sq, const(np.ones_like(targets))), norm)
    return loss, out
