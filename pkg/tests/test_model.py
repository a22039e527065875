"""Model architecture: embedders, transformer, residual decode, losses."""
import numpy as np
import pytest

from gnndt import tensor as T
from gnndt.tensor import Tensor, backward, const, precision
from gnndt.data import TrajectoryDataset, extract_window, record_trajectory
from gnndt.env import ChargingEnv, make_scenario_config, generate_scenario, \
    random_scenario
from gnndt.graphs import build_state_graph, normalized_adjacency, permute_graph
from gnndt.model import (ModelConfig, embed_action, embed_rtg, embed_state,
                         flatten_state, forward_window, init_params,
                         masked_mse_loss, window_loss)
from gnndt.policies import RandomPolicy

from conftest import manual_config, manual_scenario, manual_session

TINY = dict(context_K=3, embed_dim=16, attention_heads=2, decoder_layers=1,
            gnn_hidden_dim=8, gnn_feature_dim=4, gcn_layers_state=2,
            gcn_layers_action=2, max_episode_steps=64, num_chargers=2)


def _busy_scenario(num_chargers=2, T=16, seed=0):
    cfg = make_scenario_config(num_chargers, horizon_T=T, seed=seed,
                               arrival_process={"kind": "uniform", "rate": 0.5})
    return generate_scenario(cfg, seed)


def _windows(scenario, K, ends, policy_seed=0):
    traj = record_trajectory(RandomPolicy(policy_seed), scenario)
    return [extract_window(traj, e, K) for e in ends]


def test_gcn_layer_hand_example():
    # two-node path, scalar features [1, 3], unit weight, one layer:
    # normalized adjacency with self-loops averages the pair -> [2, 2]
    a = const(normalized_adjacency(2, [(0, 1)]))
    x = const(np.array([[1.0], [3.0]]))
    w = const(np.array([[1.0]]))
    out = T.relu(T.matmul(a, T.matmul(x, w)))
    assert np.allclose(out.data, [[2.0], [2.0]])
    pooled = T.mean_rows(out)
    assert np.allclose(pooled.data, [[2.0]])


def test_embed_state_shape_independent_of_size():
    with precision(np.float64):
        cfg = ModelConfig(**TINY)
        params = init_params(cfg, seed=0)
        for n in (1, 3, 7):
            scenario = _busy_scenario(num_chargers=n, seed=n)
            g = build_state_graph(ChargingEnv(scenario).get_state(), scenario)
            pooled, per_node = embed_state(g, params, cfg)
            assert pooled.shape == (1, cfg.gnn_feature_dim)
            assert per_node.shape == (g.num_nodes, cfg.gnn_feature_dim)


def test_embed_state_permutation_equivariance():
    with precision(np.float64):
        cfg = ModelConfig(**TINY)
        params = init_params(cfg, seed=0)
        scenario = _busy_scenario()
        g = build_state_graph(ChargingEnv(scenario).get_state(), scenario)
        pooled, per_node = embed_state(g, params, cfg)
        rng = np.random.default_rng(0)
        for _ in range(10):
            perm = list(rng.permutation(g.num_nodes))
            pg = permute_graph(g, perm)
            p2, n2 = embed_state(pg, params, cfg)
            assert np.abs(p2.data - pooled.data).max() < 1e-6
            for old, new in enumerate(perm):
                assert np.abs(n2.data[new] - per_node.data[old]).max() < 1e-10


def test_embed_action_empty_graph_zero_vector():
    from gnndt.graphs import ActionGraph
    with precision(np.float64):
        cfg = ModelConfig(**TINY)
        params = init_params(cfg, seed=0)
        out = embed_action(ActionGraph(feats=[], edges=[], state_node_ref=[]),
                           params, cfg)
    assert np.all(out.data == 0.0)
    assert out.shape == (1, cfg.gnn_feature_dim)


def test_embed_rtg_zero_input_zero_output():
    with precision(np.float64):
        cfg = ModelConfig(**TINY)
        params = init_params(cfg, seed=0)
        out = embed_rtg(0.0, params, cfg)
        assert np.all(out.data == 0.0)     # zero-initialized biases
        assert out.shape == (1, cfg.embed_dim)
        assert np.any(embed_rtg(5.0, params, cfg).data != 0.0)


def test_masked_mse_hand_example():
    pred = const(np.array([[0.5, 0.3]]))
    loss = masked_mse_loss(pred, np.array([[0.4, 0.0]]),
                           np.array([[1, 0]]), None, K=1)
    assert abs(float(loss.data.reshape(())) - 0.01) < 1e-7


def test_masked_mse_all_ones_is_summed_mse():
    with precision(np.float64):
        pred = const(np.array([[1.0, 2.0], [3.0, 4.0]]))
        target = np.zeros((2, 2))
        loss = masked_mse_loss(pred, target, np.ones((2, 2)), None, K=2)
        assert float(loss.data.reshape(())) == pytest.approx(
            (1 + 4 + 9 + 16) / 2)


def test_masked_positions_zero_gradient():
    with precision(np.float64):
        pred = Tensor(np.array([[0.5, 0.3], [0.2, -0.1]]), requires_grad=True)
        mask = np.array([[1, 0], [0, 1]])
        loss = masked_mse_loss(pred, np.zeros((2, 2)), mask,
                               np.array([1, 1]), K=2)
        backward(loss)
    assert pred.grad[0, 1] == 0.0
    assert pred.grad[1, 0] == 0.0
    assert pred.grad[0, 0] != 0.0


def test_residual_decode_dot_product():
    y = const(np.array([[1.0, 2.0]]))
    x = const(np.array([[3.0, 4.0]]))
    assert float(T.dot(y, x).data.reshape(())) == 11.0


def test_forward_predicts_one_action_per_connected_ev():
    with precision(np.float64):
        cfg = ModelConfig(**TINY)
        params = init_params(cfg, seed=0)
        scenario = _busy_scenario()
        windows = _windows(scenario, 3, [4, 9])
        out = forward_window(windows, params, cfg)
        for b, w in enumerate(windows):
            for k in range(3):
                if w.pad[k]:
                    continue
                m = len(w.graphs[k].ev_node_by_charger)
                preds = [n for n in out.node_index if n[0] == b and n[1] == k]
                assert len(preds) == m


def test_causality_perturbation():
    with precision(np.float64):
        cfg = ModelConfig(**TINY)
        params = init_params(cfg, seed=1)
        scenario = _busy_scenario(seed=3)
        base = _windows(scenario, 3, [8])[0]
        out = forward_window([base], params, cfg)
        ref = out.dense_actions([base])

        perturbed = _windows(scenario, 3, [8])[0]
        perturbed.rtg[2] += 100.0
        perturbed.prev_actions[2] = -perturbed.prev_actions[2]
        out2 = forward_window([perturbed], params, cfg)
        alt = out2.dense_actions([perturbed])
    assert np.abs(alt[0, :2] - ref[0, :2]).max() < 1e-9
    assert np.abs(alt[0, 2] - ref[0, 2]).max() > 0.0


def test_decoded_actions_invariant_to_node_order():
    with precision(np.float64):
        cfg = ModelConfig(**TINY)
        params = init_params(cfg, seed=0)
        scenario = _busy_scenario(seed=5)
        base = _windows(scenario, 3, [6])[0]
        out = forward_window([base], params, cfg)
        ref = {(k, i): v for (b, k, i), v in
               zip(out.node_index, out.pred_nodes.data[:, 0])}
        rng = np.random.default_rng(2)
        for _ in range(5):
            w2 = _windows(scenario, 3, [6])[0]
            w2.graphs = [None if g is None else
                         permute_graph(g, list(rng.permutation(g.num_nodes)))
                         for g in w2.graphs]
            w2.prev_graphs = [None if g is None else
                              permute_graph(g, list(rng.permutation(g.num_nodes)))
                              for g in w2.prev_graphs]
            out2 = forward_window([w2], params, cfg)
            alt = {(k, i): v for (b, k, i), v in
                   zip(out2.node_index, out2.pred_nodes.data[:, 0])}
            assert set(alt) == set(ref)
            for key in ref:
                assert abs(alt[key] - ref[key]) < 1e-6


def test_batch_composition_independence():
    with precision(np.float64):
        cfg = ModelConfig(**TINY)
        params = init_params(cfg, seed=0)
        scenario = _busy_scenario(seed=7)
        w1, w2 = _windows(scenario, 3, [5, 11])
        alone = forward_window([w1], params, cfg).dense_actions([w1])
        batched = forward_window([w1, w2], params, cfg).dense_actions([w1, w2])
    assert np.abs(batched[0] - alone[0]).max() < 1e-12


def test_window_loss_matches_dense_masked_form():
    with precision(np.float64):
        cfg = ModelConfig(**TINY)
        params = init_params(cfg, seed=0)
        scenario = _busy_scenario(seed=9)
        windows = _windows(scenario, 3, [4, 10])
        loss, out = window_loss(windows, params, cfg)
        dense = out.dense_actions(windows)
        total = 0.0
        for b, w in enumerate(windows):
            for k in range(3):
                if w.pad[k]:
                    continue
                diff = (dense[b, k] - w.actions[k]) * w.masks[k]
                total += float((diff ** 2).sum())
        assert float(loss.data.reshape(())) == pytest.approx(
            total / (2 * 3), rel=1e-9)


def test_flat_state_vector():
    cfg = manual_config(num_chargers=2, T=8)
    scenario = manual_scenario(cfg, [manual_session(
        session_id=0, charger_id=1, t_departure=8, e_arrival=25.0)])
    g = build_state_graph(ChargingEnv(scenario).get_state(), scenario)
    mcfg = ModelConfig(**{**TINY, "embedder_kind": "flat_mlp",
                          "action_embedder_kind": "flat_mlp",
                          "use_residual_decode": False})
    vec = flatten_state(g, mcfg)
    assert vec.shape == (6 * 2 + 1 + 5,)
    assert vec[0] == 0.0                   # empty charger slot: connected=0
    assert vec[1] == 0.0 and vec[2] == 0.0
    assert vec[6] == 1.0                   # occupied charger
    assert vec[7] == pytest.approx(0.5)    # SoC 25/50


def test_flat_baseline_is_size_locked():
    mcfg = ModelConfig(**{**TINY, "embedder_kind": "flat_mlp",
                          "action_embedder_kind": "flat_mlp",
                          "use_residual_decode": False})
    scenario = _busy_scenario(num_chargers=4, seed=1)
    g = build_state_graph(ChargingEnv(scenario).get_state(), scenario)
    with pytest.raises(ValueError):
        flatten_state(g, mcfg)


def test_flat_forward_outputs_all_chargers():
    with precision(np.float64):
        mcfg = ModelConfig(**{**TINY, "embedder_kind": "flat_mlp",
                              "action_embedder_kind": "flat_mlp",
                              "use_residual_decode": False})
        params = init_params(mcfg, seed=0)
        scenario = _busy_scenario(seed=2)
        windows = _windows(scenario, 3, [6])
        out = forward_window(windows, params, mcfg)
        assert out.pred_dense.shape[1] == 2


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(embed_dim=10, attention_heads=4).validate()
    with pytest.raises(ValueError):
        ModelConfig(embedder_kind="flat_mlp").validate()   # needs num_chargers
    with pytest.raises(ValueError):
        ModelConfig(embedder_kind="flat_mlp", num_chargers=2,
                    use_residual_decode=True).validate()


def test_config_json_round_trip(tmp_path):
    cfg = ModelConfig(**TINY)
    path = tmp_path / "model.json"
    cfg.save(path)
    assert ModelConfig.load(path) == cfg


def test_full_model_gradients_flow_everywhere():
    with precision(np.float64):
        cfg = ModelConfig(**TINY)
        params = init_params(cfg, seed=0)
        scenario = _busy_scenario(seed=4)
        windows = _windows(scenario, 3, [7, 12])
        loss, _ = window_loss(windows, params, cfg)
        backward(loss)
        dead = [name for name, p in params.items()
                if p.grad is None or not np.any(p.grad)]
        # only never-looked-up timestep rows may be gradient-free
        assert all(name.startswith("timestep") for name in dead) or not dead
