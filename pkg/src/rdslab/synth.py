"""Homophily block models with a hidden mixing variable, and FOM contrast networks.

Cells are ordered ``(Y=0,Z=0), (Y=0,Z=1), (Y=1,Z=1), (Y=1,Z=0)``.  The
tie counts D, E, F, H fill the symmetric cell-by-cell table

    [[D, E, 0, 0],
     [E, F, H, 0],
     [0, H, F, E],
     [0, 0, E, D]]

where an entry counts tie ends from the row cell into the column cell, so a
diagonal entry is twice the number of within-cell edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import networkx as nx
import numpy as np

from .graph import Graph, _decode_pairs, is_connected
from .spectral import CategoryChain

CELL_Y = (0, 0, 1, 1)
CELL_Z = (0, 1, 1, 0)


class InfeasibleSpecError(ValueError):
    pass


class ReducibleChainError(ValueError):
    """The Y groups are disconnected, so walk variance analysis is undefined."""


@dataclass(frozen=True)
class BlockModelSpec:
    D: int
    E: int
    F: int
    H: int
    cell_size: int = 50

    def __post_init__(self):
        if min(self.D, self.E, self.F, self.H) < 0:
            raise InfeasibleSpecError("tie counts must be non-negative")
        if self.D != self.F + self.H:
            raise InfeasibleSpecError(f"equal cell degree requires D = F + H, got D={self.D}, F+H={self.F + self.H}")

    @classmethod
    def from_efh(cls, E: int, F: int, H: int, cell_size: int = 50) -> "BlockModelSpec":
        return cls(F + H, E, F, H, cell_size)

    @property
    def tie_table(self) -> np.ndarray:
        D, E, F, H = self.D, self.E, self.F, self.H
        return np.array([[D, E, 0, 0], [E, F, H, 0], [0, H, F, E], [0, 0, E, D]], dtype=float)

    @property
    def a(self) -> float:
        return self.E / (self.E + self.F + self.H)

    @property
    def b(self) -> float:
        return self.H / (self.E + self.F + self.H)


def build_category_chain(spec: BlockModelSpec) -> tuple[CategoryChain, CategoryChain]:
    """Cell-level walk ``M`` (4 states) and the Y-level chain ``C`` (2 states)."""
    if spec.H == 0:
        raise ReducibleChainError("H = 0 leaves the Y groups disconnected")
    T = spec.tie_table
    ends = T.sum(axis=1)
    M = T / ends[:, None]
    M_chain = CategoryChain(
        M, CELL_Y, ends / ends.sum(), ("Y0Z0", "Y0Z1", "Y1Z1", "Y1Z0")
    )
    group = np.array(CELL_Y)
    TY = np.array([[T[np.ix_(group == u, group == v)].sum() for v in (0, 1)] for u in (0, 1)])
    C = TY / TY.sum(axis=1)[:, None]
    C_chain = CategoryChain(C, (0, 1), TY.sum(axis=1) / TY.sum(), ("Y0", "Y1"))
    return M_chain, C_chain


@dataclass(frozen=True)
class ClosedFormEigenvalues:
    cell_chain: tuple[float, float, float, float]
    category_chain: tuple[float, float]


def closed_form_eigenvalues(a: float, b: float) -> ClosedFormEigenvalues:
    if a < 0 or b < 0 or a + b > 1 + 1e-12:
        raise ValueError("need a, b >= 0 and a + b <= 1")
    root = math.hypot(a, b)
    return ClosedFormEigenvalues(
        (1.0, 1 - b - a + root, 1 - 2 * a, 1 - b - a - root),
        (1.0, 1 - b),
    )


def _block_edges(rng, nodes_a, nodes_b, count):
    """``count`` distinct edges chosen uniformly inside one cell or across two."""
    if count == 0:
        return np.empty((0, 2), dtype=np.int64)
    if nodes_b is None:
        n = len(nodes_a)
        k = rng.choice(n * (n - 1) // 2, size=count, replace=False)
        i, j = _decode_pairs(k, n)
        return np.stack([nodes_a[i], nodes_a[j]], axis=1)
    nb = len(nodes_b)
    k = rng.choice(len(nodes_a) * nb, size=count, replace=False)
    return np.stack([nodes_a[k // nb], nodes_b[k % nb]], axis=1)


def generate_block_network(
    spec: BlockModelSpec, rng: np.random.Generator, max_retries: int = 1000
) -> Graph:
    """Simple connected graph whose cell-block tie counts equal ``spec`` exactly.

    Node attributes ``Y`` and ``Z`` hold the cell labels.
    """
    if spec.H == 0:
        raise ReducibleChainError("H = 0 would disconnect the Y groups")
    n = spec.cell_size
    if spec.D % 2 or spec.F % 2:
        raise InfeasibleSpecError("within-cell tie ends D and F must be even")
    within = {0: spec.D // 2, 1: spec.F // 2, 2: spec.F // 2, 3: spec.D // 2}
    across = {(0, 1): spec.E, (1, 2): spec.H, (2, 3): spec.E}
    if max(within.values()) > n * (n - 1) // 2 or max(across.values()) > n * n:
        raise InfeasibleSpecError(f"tie counts do not fit in cells of size {n}")
    cells = [np.arange(c * n, (c + 1) * n) for c in range(4)]
    y = np.repeat(CELL_Y, n).astype(float)
    z = np.repeat(CELL_Z, n).astype(float)
    for _ in range(max_retries):
        parts = [_block_edges(rng, cells[c], None, k) for c, k in within.items()]
        parts += [_block_edges(rng, cells[u], cells[v], k) for (u, v), k in across.items()]
        g = Graph.from_edges(range(4 * n), np.concatenate(parts), {"Y": y, "Z": z})
        if is_connected(g):
            return g
    raise InfeasibleSpecError(f"no connected realization in {max_retries} attempts")


def _regular_edges(k: int, nodes: np.ndarray, rng) -> np.ndarray:
    if k == 0:
        return np.empty((0, 2), dtype=np.int64)
    h = nx.random_regular_graph(k, len(nodes), seed=int(rng.integers(2**31)))
    e = np.array(list(h.edges()), dtype=np.int64)
    return nodes[e]


def _bipartite_regular_edges(k: int, left: np.ndarray, right: np.ndarray, rng) -> np.ndarray:
    # circulant k-regular bipartite graph under random relabelling of both sides
    n = len(left)
    if k == 0:
        return np.empty((0, 2), dtype=np.int64)
    if k > n:
        raise InfeasibleSpecError("bipartite degree exceeds cell size")
    rho, sigma = rng.permutation(n), rng.permutation(n)
    i = np.repeat(np.arange(n), k)
    s = np.tile(np.arange(k), n)
    return np.stack([left[rho[i]], right[sigma[(i + s) % n]]], axis=1)


def make_contrast_pair(
    cell_size: int = 50,
    degree: int = 9,
    bridge_ties: int = 1,
    cross_ties: int = 6,
    rng: np.random.Generator | None = None,
    max_retries: int = 100,
) -> tuple[Graph, Graph]:
    """Two ``degree``-regular networks sharing N, m and the Y transition matrix.

    In the first every node has ``cross_ties / 2`` ties across Y, so the Y
    sequence of a walk is exactly Markov.  In the second only the Z=1 half
    of each Y group crosses (``cross_ties`` each), Z=0 nodes reach Z=1 through
    ``bridge_ties`` ties, and walks linger on the Z=0 side.
    """
    rng = np.random.default_rng() if rng is None else rng
    n, d = cell_size, degree
    within_z1 = d - bridge_ties - cross_ties
    if cross_ties % 2 or within_z1 < 0 or d - bridge_ties < 0 or bridge_ties < 1:
        raise InfeasibleSpecError("need even cross_ties and bridge_ties + cross_ties <= degree")
    if (n * (d - bridge_ties)) % 2 or (n * within_z1) % 2 or (2 * n * (d - cross_ties // 2)) % 2:
        raise InfeasibleSpecError("regular degrees incompatible with cell size parity")
    cells = [np.arange(c * n, (c + 1) * n) for c in range(4)]
    y = np.repeat(CELL_Y, n).astype(float)
    z = np.repeat(CELL_Z, n).astype(float)
    half = cross_ties // 2
    for _ in range(max_retries):
        g0 = np.concatenate(cells[:2])
        g1 = np.concatenate(cells[2:])
        fom_edges = np.concatenate(
            [
                _regular_edges(d - half, g0, rng),
                _regular_edges(d - half, g1, rng),
                _bipartite_regular_edges(half, g0, g1, rng),
            ]
        )
        non_edges = np.concatenate(
            [
                _regular_edges(d - bridge_ties, cells[0], rng),
                _regular_edges(d - bridge_ties, cells[3], rng),
                _regular_edges(within_z1, cells[1], rng),
                _regular_edges(within_z1, cells[2], rng),
                _bipartite_regular_edges(bridge_ties, cells[0], cells[1], rng),
                _bipartite_regular_edges(bridge_ties, cells[3], cells[2], rng),
                _bipartite_regular_edges(cross_ties, cells[1], cells[2], rng),
            ]
        )
        fom = Graph.from_edges(range(4 * n), fom_edges, {"Y": y})
        non = Graph.from_edges(range(4 * n), non_edges, {"Y": y, "Z": z})
        if is_connected(fom) and is_connected(non):
            return fom, non
    raise InfeasibleSpecError(f"no connected contrast pair in {max_retries} attempts")


def population_category_chain(g: Graph, attribute: str) -> CategoryChain:
    """Y-level walk chain of a whole network: the share of tie ends from each
    value that land on each value.  Nodes with a missing value are ignored."""
    y = g.attribute(attribute)
    e = g.edge_array()
    yi, yj = y[e[:, 0]], y[e[:, 1]]
    ok = ~(np.isnan(yi) | np.isnan(yj))
    values = np.unique(y[~np.isnan(y)])
    if len(values) < 2:
        raise ReducibleChainError("attribute takes a single value")
    idx = {v: k for k, v in enumerate(values)}
    T = np.zeros((len(values), len(values)))
    for a, b in zip(yi[ok], yj[ok]):
        T[idx[a], idx[b]] += 1
        T[idx[b], idx[a]] += 1
    ends = T.sum(axis=1)
    if (ends == 0).any() or np.allclose(T - np.diag(np.diag(T)), 0):
        raise ReducibleChainError("attribute groups are not connected by ties")
    return CategoryChain(T / ends[:, None], tuple(values), ends / ends.sum())
