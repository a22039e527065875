"""Trajectory recording, returns-to-go, mixing, files, window sampling."""
import numpy as np
import pytest

from gnndt.data import (TrajectoryDataset, compute_rtg, extract_window,
                        mix_datasets, record_trajectory, sample_window)
from gnndt.env import ChargingEnv, make_scenario_config, generate_scenario, \
    random_scenario
from gnndt.policies import BauRoundRobin, RandomPolicy, ReplayPolicy


def _dataset(count=4, seed=0, num_chargers=2, T=24, policy_cls=RandomPolicy):
    trajs = []
    for i in range(count):
        scenario = random_scenario(num_chargers, horizon_T=T, seed=seed + i)
        policy = policy_cls(seed + i) if policy_cls is RandomPolicy \
            else policy_cls()
        trajs.append(record_trajectory(policy, scenario))
    return TrajectoryDataset(trajs)


def test_rtg_hand_values():
    assert compute_rtg([-1, -2, -3], 1.0).tolist() == [-6.0, -5.0, -3.0]
    assert compute_rtg([-1, -2, -3], 0.5).tolist() == [-2.75, -3.5, -3.0]
    assert compute_rtg([0, 0, 0], 1.0).tolist() == [0.0, 0.0, 0.0]


def test_rtg_validation():
    with pytest.raises(ValueError):
        compute_rtg([1.0], 0.0)
    with pytest.raises(ValueError):
        compute_rtg([1.0], 1.5)
    with pytest.raises(ValueError):
        compute_rtg([], 1.0)


def test_zero_rate_trajectory_all_zero():
    cfg = make_scenario_config(1, horizon_T=8, seed=0,
                               arrival_process={"kind": "uniform", "rate": 0.0})
    traj = record_trajectory(RandomPolicy(0), generate_scenario(cfg, 0))
    assert all(s.reward == 0.0 for s in traj.steps)
    assert np.all(traj.rtg == 0.0)


def test_rtg_identity_for_recorded_trajectories():
    for gamma in (1.0, 0.9):
        scenario = random_scenario(2, horizon_T=24, seed=5)
        traj = record_trajectory(RandomPolicy(2), scenario, gamma=gamma)
        rewards = [s.reward for s in traj.steps]
        for t in range(len(rewards)):
            nxt = traj.rtg[t + 1] if t + 1 < len(rewards) else 0.0
            assert abs(traj.rtg[t] - (rewards[t] + gamma * nxt)) < 1e-9


def test_replaying_stored_actions_reproduces_rewards():
    scenario = random_scenario(2, horizon_T=24, seed=7)
    traj = record_trajectory(RandomPolicy(7), scenario)
    actions = np.stack([s.action for s in traj.steps])
    replay = record_trajectory(ReplayPolicy(actions), scenario)
    assert [s.reward for s in replay.steps] == [s.reward for s in traj.steps]


def test_trajectory_length_and_masks_match_horizon():
    scenario = random_scenario(2, horizon_T=24, seed=1)
    traj = record_trajectory(RandomPolicy(1), scenario)
    assert len(traj.steps) == 24
    for step in traj.steps:
        assert np.all(step.action[step.mask == 0] == 0.0)


def test_dataset_meta():
    ds = _dataset(count=3)
    meta = ds.meta
    assert meta.count == 3
    assert meta.source_mix == {"random": 1.0}
    rewards = [t.episode_reward for t in ds.trajectories]
    assert meta.avg_reward == pytest.approx(np.mean(rewards))
    assert meta.reward_std == pytest.approx(np.std(rewards, ddof=1))


def test_dataset_save_load_round_trip(tmp_path):
    ds = _dataset(count=2, T=12)
    for name in ("data.jsonl", "data.jsonl.gz"):
        path = tmp_path / name
        ds.save(path)
        loaded = TrajectoryDataset.load(path)
        assert loaded.meta.count == 2
        for a, b in zip(loaded.trajectories, ds.trajectories):
            assert a.policy_tag == b.policy_tag
            assert a.scenario_digest == b.scenario_digest
            assert np.allclose(a.rtg, b.rtg)
            for sa, sb in zip(a.steps, b.steps):
                assert sa.reward == sb.reward
                assert np.array_equal(sa.action, sb.action)
                assert np.array_equal(sa.mask, sb.mask)
                assert np.array_equal(sa.graph.kinds, sb.graph.kinds)
                assert all(np.allclose(x, y) for x, y in
                           zip(sa.graph.feats, sb.graph.feats))


def test_mix_datasets():
    a = _dataset(count=8, seed=0)
    b = _dataset(count=8, seed=100, policy_cls=BauRoundRobin)
    mixed = mix_datasets(a, b, frac_a=0.25, total=8, seed=0)
    meta = mixed.meta
    assert meta.count == 8
    assert meta.source_mix["random"] == 0.25
    assert meta.source_mix["bau"] == 0.75
    # identity conservation: every mixed trajectory is from exactly one source
    source_digests = {t.scenario_digest: t.policy_tag
                      for t in a.trajectories + b.trajectories}
    for t in mixed.trajectories:
        assert source_digests[t.scenario_digest] == t.policy_tag


def test_mix_full_fraction_is_permutation():
    a = _dataset(count=5, seed=0)
    b = _dataset(count=5, seed=50)
    mixed = mix_datasets(a, b, frac_a=1.0, total=5, seed=3)
    assert sorted(t.scenario_digest for t in mixed.trajectories) == \
        sorted(t.scenario_digest for t in a.trajectories)


def test_mix_insufficient_sources():
    a = _dataset(count=2, seed=0)
    b = _dataset(count=2, seed=10)
    with pytest.raises(ValueError):
        mix_datasets(a, b, frac_a=1.0, total=4, seed=0)


def test_mixed_average_between_sources():
    a = _dataset(count=6, seed=0)
    b = _dataset(count=6, seed=40, policy_cls=BauRoundRobin)
    mixed = mix_datasets(a, b, frac_a=0.5, total=8, seed=1)
    lo = min(a.meta.avg_reward, b.meta.avg_reward)
    hi = max(a.meta.avg_reward, b.meta.avg_reward)
    # holds in expectation; with without-replacement sampling of most of each
    # source the mean stays within the source range
    assert lo - abs(lo) * 0.5 <= mixed.meta.avg_reward <= hi + abs(hi) * 0.5


def test_window_no_padding_k1():
    traj = _dataset(count=1, T=12).trajectories[0]
    w = extract_window(traj, end_step=5, K=1)
    assert not w.pad.any()
    assert w.timesteps.tolist() == [5]


def test_window_left_padding():
    traj = _dataset(count=1, T=12).trajectories[0]
    w = extract_window(traj, end_step=3, K=10)
    assert w.pad.sum() == 6
    assert w.pad[:6].all() and not w.pad[6:].any()
    assert w.timesteps[6:].tolist() == [0, 1, 2, 3]
    assert w.graphs[5] is None and w.graphs[6] is not None
    # previous action at episode step 0 is all zeros
    assert np.all(w.prev_actions[6] == 0.0)
    assert np.array_equal(w.actions[9], traj.steps[3].action)
    assert w.rtg[9] == traj.rtg[3]


def test_sample_window_validation():
    ds = _dataset(count=1, T=12)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_window(ds, 13, 2, rng)
    with pytest.raises(ValueError):
        sample_window(ds, 0, 2, rng)


def test_sample_window_end_steps_uniform():
    ds = _dataset(count=1, T=12)
    rng = np.random.default_rng(0)
    counts = np.zeros(12)
    n = 20_000
    for w in sample_window(ds, 1, n, rng):
        counts[w.timesteps[0]] += 1
    expected = n / 12
    sigma = np.sqrt(n * (1 / 12) * (11 / 12))
    assert np.all(np.abs(counts - expected) < 3.5 * sigma)
