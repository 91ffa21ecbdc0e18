"""Dataset generation, splitting, and serialization contracts."""
import numpy as np
import pytest
from scipy import stats

from vpflow import exhaustive_dataset, generate_dataset, occupancy_of_policy, split_dataset
from vpflow.data import (
    OfflineDataset,
    load_init_jsonl,
    load_jsonl,
    save_init_jsonl,
    save_jsonl,
)
from vpflow.generators import gridworld, mixture_policy, ring_mdp, shortest_path_behavior

from helpers import random_instance


def test_empirical_frequencies_match_exact_occupancy():
    mdp, behavior, _ = random_instance(0, n_states=4, n_actions=2, n_goals=2, gamma=0.9)
    n = 1_000_000
    dataset, _, mu = generate_dataset(mdp, behavior, n, 10, seed=42)
    counts = np.zeros(mu.d.shape)
    np.add.at(counts, (dataset.s, dataset.a, dataset.g), 1.0)
    joint = mu.d * mdp.goal_dist[None, None, :]
    assert np.abs(counts / n - joint).max() <= 4.0 / np.sqrt(n)


def test_deterministic_mdp_next_states():
    mdp = gridworld(3, 3, 0.9)
    behavior = shortest_path_behavior(mdp)
    dataset, _, _ = generate_dataset(mdp, behavior, 5000, 10, seed=1)
    want = np.argmax(mdp.transition, axis=2)[dataset.s, dataset.a]
    assert np.array_equal(dataset.s_next, want)


def test_rewards_are_the_mdp_rewards():
    mdp, behavior, _ = random_instance(2)
    dataset, _, _ = generate_dataset(mdp, behavior, 2000, 10, seed=3)
    assert np.array_equal(dataset.r, mdp.reward[dataset.s, dataset.g])


def test_same_seed_byte_identical(tmp_path):
    mdp, behavior, _ = random_instance(3)
    a_path, b_path = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    for path in (a_path, b_path):
        dataset, init, _ = generate_dataset(mdp, behavior, 500, 100, seed=7)
        save_jsonl(dataset, path)
        save_init_jsonl(init, path + ".d0")
    assert open(a_path, "rb").read() == open(b_path, "rb").read()
    assert open(a_path + ".d0", "rb").read() == open(b_path + ".d0", "rb").read()


def test_generate_rejects_bad_sizes():
    mdp, behavior, _ = random_instance(4)
    with pytest.raises(ValueError):
        generate_dataset(mdp, behavior, 0, 10, seed=0)
    with pytest.raises(ValueError):
        generate_dataset(mdp, behavior, 10, 0, seed=0)


def test_iid_sampling_no_serial_correlation():
    mdp, behavior, _ = random_instance(5)
    n = 200_000
    dataset, _, _ = generate_dataset(mdp, behavior, n, 10, seed=11)
    s = dataset.s.astype(np.float64)
    x, y = s[:-1] - s.mean(), s[1:] - s.mean()
    autocorr = float((x * y).mean() / s.var())
    assert abs(autocorr) <= 4.0 / np.sqrt(n)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def test_split_sizes_and_union():
    mdp, behavior, _ = random_instance(6)
    for n, sizes in ((4, (2, 2)), (5, (2, 3))):
        dataset, _, _ = generate_dataset(mdp, behavior, n, 5, seed=n)
        first, second = split_dataset(dataset, seed=0)
        assert (first.n, second.n) == sizes
        merged = np.sort(
            np.concatenate(
                [first.s * 1000 + first.a * 100 + first.g, second.s * 1000 + second.a * 100 + second.g]
            )
        )
        original = np.sort(dataset.s * 1000 + dataset.a * 100 + dataset.g)
        assert np.array_equal(merged, original)


def test_split_rejects_tiny_datasets():
    dataset = OfflineDataset([0], [0], [0.0], [0], [0])
    with pytest.raises(ValueError):
        split_dataset(dataset, seed=0)


def test_split_assignment_uniformity_chi_square():
    dataset = OfflineDataset(
        list(range(10)), [0] * 10, [0.0] * 10, [0] * 10, [0] * 10
    )
    m = 10_000
    counts = np.zeros(10)
    for seed in range(m):
        first, _ = split_dataset(dataset, seed=seed)
        counts[first.s] += 1.0
    stat = float(((counts - m / 2) ** 2 / (m / 4)).sum())
    assert stat < stats.chi2.isf(0.001, df=9)


# ---------------------------------------------------------------------------
# exhaustive enumeration
# ---------------------------------------------------------------------------


def test_exhaustive_dataset_counts_match_probabilities():
    mdp = ring_mdp(8, 0.9, n_goals=2)
    behavior = mixture_policy(mdp, [0.75, 0.25])
    mu = occupancy_of_policy(mdp, behavior)
    scale = 64  # p(g)=1/2, occupancy 1/8, policy in {3/4, 1/4}
    dataset, init = exhaustive_dataset(mdp, mu, scale, scale0=16)
    assert dataset.n == scale and init.n0 == 16
    counts = np.zeros(mu.d.shape)
    np.add.at(counts, (dataset.s, dataset.a, dataset.g), 1.0)
    joint = mu.d * mdp.goal_dist[None, None, :]
    assert np.abs(counts / scale - joint).max() <= 1e-12
    with pytest.raises(ValueError):
        exhaustive_dataset(mdp, mu, 10, scale0=16)  # 10 * 3/64 is not integral


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_jsonl_round_trip_lossless(tmp_path):
    mdp, behavior, _ = random_instance(7)
    dataset, init, _ = generate_dataset(mdp, behavior, 200, 50, seed=9)
    d_path = str(tmp_path / "d.jsonl")
    i_path = str(tmp_path / "d0.jsonl")
    save_jsonl(dataset, d_path)
    save_init_jsonl(init, i_path)
    back = load_jsonl(d_path)
    back0 = load_init_jsonl(i_path)
    assert np.array_equal(back.s, dataset.s)
    assert np.array_equal(back.a, dataset.a)
    assert np.array_equal(back.r, dataset.r)
    assert np.array_equal(back.s_next, dataset.s_next)
    assert np.array_equal(back.g, dataset.g)
    assert np.array_equal(back0.s0, init.s0)
    assert np.array_equal(back0.g0, init.g0)
    # re-serializing the loaded data reproduces the file byte for byte
    d2 = str(tmp_path / "d2.jsonl")
    save_jsonl(back, d2)
    assert open(d_path, "rb").read() == open(d2, "rb").read()
