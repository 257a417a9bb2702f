import numpy as np
import pytest
import statsmodels.api as sm

from conftest import complete_graph, make_graph, random_connected_graph
from rdslab.fomtest import (
    INCONCLUSIVE,
    MAY_BE_FOM,
    NOT_FOM,
    RankDeficientError,
    network_fom_test,
    network_observations,
    ols_robust_ftest,
    sample_fom_test,
    sample_observations,
)
from rdslab.sampler import RdsConfig, forest_from_parents, rds_sample
from rdslab.synth import BlockModelSpec, generate_block_network


def test_hand_solved_five_points():
    x = np.array([0.0, 1, 2, 3, 4])
    y = np.array([1.0, 3, 2, 5, 4])
    X = np.column_stack([np.ones(5), x])
    res = ols_robust_ftest(X, y, (1,))
    # normal equations: slope = Sxy/Sxx = 8/10, intercept = 3 - 0.8*2
    assert res.coef == pytest.approx([1.4, 0.8], abs=1e-10)
    assert res.df == (1, 3)


def test_matches_statsmodels_hc1(rng):
    n = 300
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.integers(0, 2, n), rng.normal(size=n)])
    y = X @ [0.5, 1.0, 0.2, 0.0] + rng.normal(size=n) * (1 + np.abs(X[:, 1]))
    res = ols_robust_ftest(X, y, (2, 3))
    fit = sm.OLS(y, X).fit(cov_type="HC1")
    assert np.allclose(res.coef, fit.params, atol=1e-10)
    assert np.allclose(res.cov, fit.cov_params(), rtol=1e-8)
    ft = fit.f_test(np.eye(4)[[2, 3]])
    assert res.f_stat == pytest.approx(float(np.squeeze(ft.fvalue)), rel=1e-8)
    assert res.p_value == pytest.approx(float(ft.pvalue), rel=1e-6)


def test_hc1_close_to_classical_when_homoskedastic(rng):
    n = 10_000
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(size=n)])
    y = X @ [1.0, 2.0, 0.0] + rng.normal(size=n)
    res = ols_robust_ftest(X, y, (2,))
    classical = sm.OLS(y, X).fit().bse
    assert np.allclose(np.sqrt(np.diag(res.cov)), classical, rtol=0.1)


def test_exact_fit_is_degenerate():
    X = np.column_stack([np.ones(6), np.arange(6.0), np.arange(6.0) ** 2])
    res = ols_robust_ftest(X, 2 + 3 * X[:, 1], (2,))
    assert res.degenerate and np.isnan(res.p_value)


def test_rank_deficiency_and_too_few_rows():
    X = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(RankDeficientError):
        ols_robust_ftest(X, np.arange(5.0), (2,))
    with pytest.raises(RankDeficientError):
        ols_robust_ftest(np.ones((2, 2)), np.ones(2), (1,))


def test_f_invariant_under_affine_response(rng):
    n = 200
    X = np.column_stack([np.ones(n), rng.integers(0, 2, (n, 2)), rng.normal(size=n)])
    y = rng.normal(size=n) + X[:, 2]
    a = ols_robust_ftest(X, y, (2, 3)).f_stat
    b = ols_robust_ftest(X, 7.5 * y - 3.0, (2, 3)).f_stat
    assert a == pytest.approx(b, rel=1e-10)


def test_network_observation_count_is_twice_edges(rng):
    g = random_connected_graph(40, 0.1, rng).with_attribute("Y", rng.integers(0, 2, 40))
    dep, cur, prev = network_observations(g, "Y")
    assert len(dep) == 2 * g.n_edges
    assert network_fom_test(g, "Y").n_obs == 2 * g.n_edges


def test_network_dependent_counts_ego():
    # path 0-1-2 with Y = (1, 0, 0): from ego 0, alter 1 has neighbours {0, 2}
    g = make_graph([(0, 1), (1, 2)], Y=[1, 0, 0])
    dep, cur, prev = network_observations(g, "Y")
    k = np.flatnonzero((prev == 1) & (cur == 0))
    assert dep[k] == pytest.approx([0.5])


def test_constant_attribute_is_inconclusive():
    g = complete_graph(6, Y=np.ones(6))
    assert network_fom_test(g, "Y").verdict == INCONCLUSIVE


def test_block_network_rejects(rng):
    g = generate_block_network(BlockModelSpec.from_efh(240, 240, 240, 50), rng)
    res = network_fom_test(g, "Y", 0.001)
    assert res.verdict == NOT_FOM and res.p_value < 0.001


def test_label_swap_keeps_verdict(rng):
    for _ in range(10):
        g = random_connected_graph(50, 0.1, rng)
        y = rng.integers(0, 2, 50).astype(float)
        g = g.with_attribute("Y", y).with_attribute("N", 1 - y)
        a, b = network_fom_test(g, "Y"), network_fom_test(g, "N")
        assert a.verdict == b.verdict
        assert a.f_stat == pytest.approx(b.f_stat, rel=1e-8)
        f = rds_sample(g, RdsConfig(sample_size=200), rng)
        assert sample_fom_test(f, "Y").verdict == sample_fom_test(f, "N").verdict


def test_shallow_forest_is_inconclusive():
    f = forest_from_parents([-1, 0, 0, -1, 3], {"Y": [0, 1, 0, 1, 1]})
    assert sample_fom_test(f, "Y").verdict == INCONCLUSIVE


def test_sample_triples():
    f = forest_from_parents([-1, 0, 1, 1, 2], {"Y": [1, 0, 1, 0, 0]})
    dep, cur, prev = sample_observations(f, "Y")
    assert list(dep) == [1, 0, 0]
    assert list(cur) == [0, 0, 1]
    assert list(prev) == [1, 1, 0]


def test_sample_size_under_permuted_labels(rng):
    # without replacement a recruit cannot be its own grand-recruiter, so
    # random labels give a genuine null (the sampling fraction must stay
    # small, or depleting one label biases later recruits)
    g = random_connected_graph(1000, 0.01, rng)
    y = (np.arange(1000) < 500).astype(float)
    R = 300
    rej = 0
    for _ in range(R):
        f = rds_sample(g.with_attribute("Y", rng.permutation(y)), RdsConfig(sample_size=200, with_replacement=False), rng)
        rej += sample_fom_test(f, "Y", 0.05).rejects()
    assert abs(rej / R - 0.05) <= 3 * np.sqrt(0.05 * 0.95 / R)


def test_result_dict_fields(rng):
    g = random_connected_graph(30, 0.2, rng).with_attribute("Y", rng.integers(0, 2, 30))
    d = network_fom_test(g, "Y").as_dict()
    assert set(d) >= {"coefficients", "robust_cov", "f_stat", "p_value", "n_obs", "verdict", "alpha"}
    assert d["verdict"] in (NOT_FOM, MAY_BE_FOM, INCONCLUSIVE)
