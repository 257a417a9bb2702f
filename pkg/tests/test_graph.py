import networkx as nx
import numpy as np
import pytest

from conftest import complete_graph, make_graph, random_connected_graph
from rdslab.graph import (
    GraphFormatError,
    estimate_node_independent_paths,
    is_connected,
    largest_connected_component,
    load_edge_list,
    node_independent_paths,
    stationary_distribution,
    transition_matrix,
    write_attributes,
    write_edge_list,
)


def _write(tmp_path, text, name="edges.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_simple_path(tmp_path):
    g = load_edge_list(_write(tmp_path, "1 2\n2 3\n"))
    assert g.n_nodes == 3 and g.n_edges == 2
    assert g.degrees.sum() == 2 * g.n_edges


def test_load_symmetrizes_directed_input(tmp_path):
    g = load_edge_list(_write(tmp_path, "1 2\n2 1\n"), directed_input=True)
    assert g.n_edges == 1
    assert g.report.reciprocal_merged == 1


def test_load_reports_duplicates_and_self_loops(tmp_path):
    g = load_edge_list(_write(tmp_path, "# comment\n1 2\n1 2\n3 3\n"))
    assert g.n_edges == 1
    assert g.report.duplicates == 1
    assert g.report.self_loops == 1


def test_load_malformed_line_reports_line_number(tmp_path):
    with pytest.raises(GraphFormatError, match=":3"):
        load_edge_list(_write(tmp_path, "1 2\n2 3\n4\n"))


def test_load_missing_file(tmp_path):
    with pytest.raises(GraphFormatError):
        load_edge_list(tmp_path / "absent.txt")


def test_attributes_missing_values_and_unknown_nodes(tmp_path):
    edges = _write(tmp_path, "a b\nb c\n")
    attrs = _write(tmp_path, "node,Y\na,1\nb,x\nc,0\n", "attrs.csv")
    g = load_edge_list(edges, attributes_path=attrs)
    y = g.attribute("Y")
    assert y[g.index_of("a")] == 1 and y[g.index_of("c")] == 0
    assert np.isnan(y[g.index_of("b")])
    assert g.report.missing_attribute_values == 1
    bad = _write(tmp_path, "node,Y\nzz,1\n", "bad.csv")
    with pytest.raises(GraphFormatError):
        load_edge_list(edges, attributes_path=bad)


def test_write_then_load_roundtrip(tmp_path):
    g = make_graph([(0, 1), (1, 2), (2, 0), (2, 3)], Y=[1, 0, 1, 0])
    write_edge_list(g, tmp_path / "e.txt")
    write_attributes(g, tmp_path / "a.csv")
    h = load_edge_list(tmp_path / "e.txt", attributes_path=tmp_path / "a.csv")
    assert h.n_edges == g.n_edges
    for nid in g.node_ids:
        assert h.attribute("Y")[h.index_of(nid)] == g.attribute("Y")[g.index_of(nid)]


def test_lcc_picks_largest_component(tmp_path):
    g = load_edge_list(_write(tmp_path, "1 2\n3 4\n4 5\n"))
    lcc = largest_connected_component(g)
    assert sorted(lcc.node_ids) == ["3", "4", "5"]


def test_lcc_identity_on_connected_graph():
    g = complete_graph(3)
    assert largest_connected_component(g).n_nodes == 3


def test_lcc_tie_goes_to_smallest_id(tmp_path):
    g = load_edge_list(_write(tmp_path, "10 11\n2 3\n"))
    assert sorted(largest_connected_component(g).node_ids) == ["2", "3"]


def test_lcc_carries_attributes():
    g = make_graph([(0, 1), (2, 3), (3, 4)], Y=[1, 1, 0, 1, 0])
    lcc = largest_connected_component(g)
    assert list(lcc.attribute("Y")) == [0, 1, 0]
    assert is_connected(lcc) and (lcc.degrees >= 1).all()


def test_transition_matrix_examples():
    assert np.allclose(transition_matrix(complete_graph(3)).toarray(), (np.ones((3, 3)) - np.eye(3)) / 2)
    path = transition_matrix(make_graph([(0, 1), (1, 2)])).toarray()
    assert np.allclose(path, [[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]])
    star = transition_matrix(make_graph([(0, 1), (0, 2), (0, 3)])).toarray()
    assert np.allclose(star[0], [0, 1 / 3, 1 / 3, 1 / 3])


def test_transition_matrix_rejects_isolated_node():
    g = make_graph([(0, 1)], n=3)
    with pytest.raises(ValueError):
        transition_matrix(g)


def test_stationary_distribution_examples():
    assert np.allclose(stationary_distribution(make_graph([(0, 1), (1, 2)])), [0.25, 0.5, 0.25])
    assert np.allclose(stationary_distribution(complete_graph(5)), 0.2)


def test_stationary_matches_power_iteration(rng):
    g = random_connected_graph(20, 0.2, rng)
    P = transition_matrix(g).toarray()
    p = np.full(20, 1 / 20)
    # lazy walk so that bipartite graphs converge too
    L = 0.5 * (np.eye(20) + P)
    for _ in range(20000):
        p = p @ L
    assert np.allclose(stationary_distribution(g), p, atol=1e-10)


def test_stationarity_and_detailed_balance_on_random_graphs(rng):
    for _ in range(100):
        n = int(rng.integers(2, 51))
        g = random_connected_graph(n, rng.uniform(0, 0.3), rng)
        P = transition_matrix(g).toarray()
        pi = stationary_distribution(g)
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(pi @ P, pi, atol=1e-10)
        F = pi[:, None] * P
        assert np.allclose(F, F.T, atol=1e-10)
        assert g.degrees.sum() == 2 * g.n_edges


@pytest.mark.parametrize(
    "g, expected",
    [
        (complete_graph(4), 3.0),
        (make_graph([(0, 1), (1, 2), (2, 3), (3, 0)]), 2.0),
        (make_graph([(0, 1), (1, 2)]), 1.0),
    ],
    ids=["K4", "C4", "P3"],
)
def test_node_independent_paths_small_graphs(g, expected):
    est = estimate_node_independent_paths(g, 10_000)
    assert est.exhaustive
    assert est.mean == expected


def test_clique_adjacent_pair_has_n_minus_one_paths():
    g = complete_graph(7)
    assert node_independent_paths(g, 0, 1) == 6


def test_node_independent_paths_matches_networkx(rng):
    g = random_connected_graph(30, 0.15, rng)
    h = nx.Graph()
    h.add_nodes_from(range(g.n_nodes))
    h.add_edges_from(map(tuple, g.edge_array()))
    for _ in range(40):
        s, t = map(int, rng.choice(30, 2, replace=False))
        if h.has_edge(s, t):
            # networkx needs the direct tie removed; it is one extra path
            k = h.copy()
            k.remove_edge(s, t)
            want = nx.node_connectivity(k, s, t) + 1
        else:
            want = nx.node_connectivity(h, s, t)
        assert node_independent_paths(g, s, t) == want


def test_cohesion_needs_two_nodes():
    with pytest.raises(ValueError):
        estimate_node_independent_paths(make_graph(np.empty((0, 2)), n=1), 10)
