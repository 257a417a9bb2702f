import numpy as np
import pytest
from scipy import stats

from conftest import complete_graph, make_graph, random_connected_graph
from rdslab.estimators import tree_distance_histogram
from rdslab.graph import stationary_distribution, transition_matrix
from rdslab.sampler import (
    WALK,
    RdsConfig,
    SamplingExhaustedError,
    chain_sample,
    draw_seed,
    forest_from_parents,
    random_walk_sample,
    rds_sample,
    read_forest,
    write_forest,
)
from rdslab.spectral import CategoryChain


def test_config_validation():
    with pytest.raises(ValueError):
        RdsConfig(branching=(0.5, 0.6))
    with pytest.raises(ValueError):
        RdsConfig(sample_size=0)
    with pytest.raises(ValueError):
        RdsConfig(seed_mode="degree")


def test_seed_probabilities_on_path(rng):
    g = make_graph([(0, 1), (1, 2)])
    draws = np.array([draw_seed(g, "equilibrium", rng) for _ in range(20000)])
    assert abs((draws == 1).mean() - 0.5) < 4 * np.sqrt(0.25 / 20000)


def test_seed_frequencies_match_stationary(rng):
    g = random_connected_graph(15, 0.2, rng)
    pi = stationary_distribution(g)
    n = 100_000
    draws = np.array([draw_seed(g, "equilibrium", rng) for _ in range(n)])
    freq = np.bincount(draws, minlength=15) / n
    # 4 sigma per node keeps the family-wise false alarm rate small over 15 nodes
    assert (np.abs(freq - pi) <= 4 * np.sqrt(pi * (1 - pi) / n)).all()
    uni = np.bincount([draw_seed(g, "uniform", rng) for _ in range(30000)], minlength=15) / 30000
    assert np.abs(uni - 1 / 15).max() < 4 * np.sqrt((1 / 15) * (14 / 15) / 30000)


def test_single_record_sample(rng):
    f = rds_sample(complete_graph(4), RdsConfig(sample_size=1), rng)
    assert len(f) == 1 and f.parent[0] == -1


def test_forest_invariants(rng):
    g = random_connected_graph(60, 0.05, rng)
    for cfg in (RdsConfig(sample_size=200), RdsConfig(sample_size=50, with_replacement=False), RdsConfig(sample_size=80, n_seeds=3)):
        f = rds_sample(g, cfg, rng)
        assert len(f) == cfg.sample_size
        f.check(g)
        assert (f.parent < np.arange(len(f))).all()
    assert rds_sample(g, RdsConfig(sample_size=80, n_seeds=3), rng).n_trees >= 3


def test_without_replacement_has_distinct_nodes(rng):
    g = random_connected_graph(60, 0.05, rng)
    f = rds_sample(g, RdsConfig(sample_size=60, with_replacement=False), rng)
    assert len(set(f.node.tolist())) == 60
    with pytest.raises(SamplingExhaustedError):
        rds_sample(g, RdsConfig(sample_size=61, with_replacement=False), rng)


def test_dead_chains_restart_in_new_trees(rng):
    f = rds_sample(complete_graph(10), RdsConfig(sample_size=50, branching=(0.5, 0.5)), rng)
    assert f.n_trees > 1 and len(f) == 50
    f.check()


def test_deterministic_given_seed(tmp_path):
    g = random_connected_graph(40, 0.1, np.random.default_rng(1))
    a = rds_sample(g, RdsConfig(), np.random.default_rng(99))
    b = rds_sample(g, RdsConfig(), np.random.default_rng(99))
    write_forest(a, tmp_path / "a.csv")
    write_forest(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_forest_file_roundtrip(tmp_path, rng):
    y = rng.integers(0, 2, 30).astype(float)
    y[3] = np.nan
    g = random_connected_graph(30, 0.1, rng).with_attribute("Y", y)
    f = rds_sample(g, RdsConfig(sample_size=100), rng)
    write_forest(f, tmp_path / "f.csv")
    h = read_forest(tmp_path / "f.csv")
    assert np.array_equal(h.parent, f.parent) and np.array_equal(h.degree, f.degree)
    assert np.array_equal(h.attribute("Y"), f.attribute("Y"), equal_nan=True)
    assert h.node_ids == f.node_ids


def test_read_forest_rejects_bad_header(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_forest(tmp_path / "x.csv")


def test_non_branching_rds_is_a_walk(rng):
    g = random_connected_graph(30, 0.1, rng)
    f = rds_sample(g, RdsConfig(sample_size=100, branching=WALK.branching), rng)
    assert f.is_walk() and f.n_trees == 1
    S = len(f)
    hist = tree_distance_histogram(f)
    want = np.array([0] + [2 * (S - t) for t in range(1, S)])
    assert np.array_equal(hist[:S], want)


def test_walk_from_end_of_path_is_forced():
    g = make_graph([(0, 1), (1, 2)])
    for s in range(20):
        f = random_walk_sample(g, 2, np.random.default_rng(s), start=0)
        assert f.node[1] == 1


def test_walk_marginals_stay_stationary(rng):
    g = random_connected_graph(8, 0.3, rng)
    pi = stationary_distribution(g)
    n = 20000
    at5 = np.array([random_walk_sample(g, 6, rng).node[5] for _ in range(n)])
    freq = np.bincount(at5, minlength=8) / n
    assert (np.abs(freq - pi) <= 4 * np.sqrt(pi * (1 - pi) / n)).all()


def test_k3_transition_frequencies(rng):
    g = complete_graph(3)
    f = rds_sample(g, RdsConfig(sample_size=10_000), rng)
    child = np.flatnonzero(f.parent >= 0)
    T = np.zeros((3, 3))
    np.add.at(T, (f.node[f.parent[child]], f.node[child]), 1)
    P = transition_matrix(g).toarray()
    rows = T.sum(axis=1, keepdims=True)
    se = np.sqrt(P * (1 - P) / rows)
    assert (np.abs(T / rows - P) <= 3 * se + 1e-12).all()


def test_visit_frequencies_on_k5_pass_chi_square(rng):
    g = complete_graph(5)
    counts = np.zeros(5)
    for _ in range(100):
        f = rds_sample(g, RdsConfig(sample_size=10_000), rng)
        counts += np.bincount(f.node, minlength=5)
    assert stats.chisquare(counts).pvalue > 0.01


def test_chain_sample_single_state_marginal(rng):
    C = CategoryChain.from_matrix([[0.9, 0.1], [0.3, 0.7]], [0, 1])
    first = chain_sample(C, 1, rng, n_chains=40000)[:, 0]
    assert abs(first.mean() - C.stationary[1]) < 4 * np.sqrt(0.25 * 0.75 / 40000)


def test_chain_sample_transitions(rng):
    P = np.array([[0.9, 0.1], [0.3, 0.7]])
    x = chain_sample(P, 100_000, rng)
    T = np.zeros((2, 2))
    np.add.at(T, (x[:-1], x[1:]), 1)
    assert np.allclose(T / T.sum(axis=1, keepdims=True), P, atol=0.01)


def test_forest_from_parents_rejects_forward_links():
    with pytest.raises(ValueError):
        forest_from_parents([-1, 2, 0], {"Y": [0, 1, 0]})
