"""Population networks: loading, cleaning, walk operators and cohesion."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

logger = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Raised for unreadable or malformed network input files."""


@dataclass(frozen=True)
class LoadReport:
    lines_read: int = 0
    self_loops: int = 0
    duplicates: int = 0
    reciprocal_merged: int = 0
    missing_attribute_values: int = 0


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph stored as sorted CSR adjacency.

    ``node_ids[i]`` is the external identifier of dense index ``i``; every
    other array in the object is indexed by the dense index.  Attribute
    arrays are float with NaN marking a missing value.
    """

    node_ids: tuple[str, ...]
    indptr: np.ndarray
    indices: np.ndarray
    attributes: Mapping[str, np.ndarray] = field(default_factory=dict)
    report: LoadReport = field(default_factory=LoadReport)

    @classmethod
    def from_edges(
        cls,
        node_ids: Sequence,
        edges: Iterable[tuple[int, int]] | np.ndarray,
        attributes: Mapping[str, Sequence[float]] | None = None,
        report: LoadReport | None = None,
    ) -> "Graph":
        """Build from dense-index edge pairs; symmetrizes and drops loops/duplicates."""
        ids = tuple(str(v) for v in node_ids)
        n = len(ids)
        if len(set(ids)) != n:
            raise ValueError("node ids must be unique")
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValueError("edge endpoint out of range")
        e = e[e[:, 0] != e[:, 1]]
        lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
        und = np.unique(np.stack([lo, hi], axis=1), axis=0) if len(e) else np.empty((0, 2), np.int64)
        rows = np.concatenate([und[:, 0], und[:, 1]])
        cols = np.concatenate([und[:, 1], und[:, 0]])
        adj = sparse.csr_array(
            (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n)
        )
        adj.sort_indices()
        attrs = {}
        for name, values in (attributes or {}).items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"attribute {name!r} has wrong length")
            attrs[name] = arr
        return cls(
            ids,
            adj.indptr.astype(np.int64),
            adj.indices.astype(np.int64),
            attrs,
            report or LoadReport(),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        return int(len(self.indices) // 2)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def has_edge(self, i: int, j: int) -> bool:
        nb = self.neighbors(i)
        k = np.searchsorted(nb, j)
        return bool(k < len(nb) and nb[k] == j)

    def index_of(self, node_id) -> int:
        try:
            return self._index[str(node_id)]
        except KeyError:
            raise KeyError(f"unknown node {node_id!r}") from None

    @property
    def _index(self) -> dict[str, int]:
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {v: i for i, v in enumerate(self.node_ids)}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def adjacency(self) -> sparse.csr_array:
        data = np.ones(len(self.indices), dtype=float)
        return sparse.csr_array((data, self.indices, self.indptr), shape=(self.n_nodes,) * 2)

    def edge_array(self) -> np.ndarray:
        """Each undirected edge once, as (i, j) with i < j."""
        src = np.repeat(np.arange(self.n_nodes), self.degrees)
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def attribute(self, name: str) -> np.ndarray:
        try:
            return self.attributes[name]
        except KeyError:
            raise KeyError(f"graph has no attribute {name!r}") from None

    def with_attribute(self, name: str, values: Sequence[float]) -> "Graph":
        attrs = dict(self.attributes)
        arr = np.asarray(values, dtype=float)
        if arr.shape != (self.n_nodes,):
            raise ValueError(f"attribute {name!r} has wrong length")
        attrs[name] = arr
        return Graph(self.node_ids, self.indptr, self.indices, attrs, self.report)

    def subgraph(self, nodes: Sequence[int]) -> "Graph":
        nodes = np.sort(np.asarray(nodes, dtype=np.int64))
        remap = np.full(self.n_nodes, -1, dtype=np.int64)
        remap[nodes] = np.arange(len(nodes))
        e = self.edge_array()
        e = remap[e]
        e = e[(e >= 0).all(axis=1)]
        attrs = {k: v[nodes] for k, v in self.attributes.items()}
        return Graph.from_edges([self.node_ids[i] for i in nodes], e, attrs, self.report)


def _id_key(node_id: str):
    try:
        return (0, int(node_id), "")
    except ValueError:
        return (1, 0, node_id)


def _split_line(line: str, delimiter: str | None) -> list[str]:
    if delimiter is None:
        return line.replace(",", " ").split()
    return [tok.strip() for tok in line.split(delimiter) if tok.strip()]


def load_edge_list(
    path: str | Path,
    delimiter: str | None = None,
    directed_input: bool = False,
    attributes_path: str | Path | None = None,
) -> Graph:
    """Read an edge list (and optional attribute table) into a simple graph.

    ``delimiter=None`` accepts whitespace or commas.  Lines starting with
    ``#`` are comments.  Self-loops and duplicate edges are dropped and
    counted in ``graph.report``; directed input is symmetrized.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise GraphFormatError(f"cannot read {path}: {exc}") from exc

    index: dict[str, int] = {}
    pairs: list[tuple[int, int]] = []
    n_lines = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = _split_line(line, delimiter)
        if len(toks) != 2:
            raise GraphFormatError(f"{path}:{lineno}: expected two node tokens, got {raw!r}")
        n_lines += 1
        u, v = (index.setdefault(t, len(index)) for t in toks)
        pairs.append((u, v))

    loops = sum(1 for u, v in pairs if u == v)
    seen_directed: set[tuple[int, int]] = set()
    seen: set[tuple[int, int]] = set()
    duplicates = reciprocal = 0
    for u, v in pairs:
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        if directed_input:
            if (u, v) in seen_directed:
                duplicates += 1
            elif key in seen:
                reciprocal += 1
            seen_directed.add((u, v))
        elif key in seen:
            duplicates += 1
        seen.add(key)

    node_ids = list(index)
    attrs: dict[str, np.ndarray] = {}
    missing = 0
    if attributes_path is not None:
        attrs, missing = _read_attributes(Path(attributes_path), index)

    report = LoadReport(n_lines, loops, duplicates, reciprocal, missing)
    if loops or duplicates:
        logger.info("%s: dropped %d self-loops and %d duplicate edges", path, loops, duplicates)
    return Graph.from_edges(node_ids, np.array(pairs, dtype=np.int64).reshape(-1, 2), attrs, report)


def _read_attributes(path: Path, index: Mapping[str, int]) -> tuple[dict[str, np.ndarray], int]:
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise GraphFormatError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GraphFormatError(f"{path}: empty attribute file") from None
        names = [h.strip() for h in header[1:]]
        values = {name: np.full(len(index), np.nan) for name in names}
        missing = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            node = row[0].strip()
            if node not in index:
                raise GraphFormatError(f"{path}:{lineno}: unknown node {node!r}")
            if len(row) - 1 > len(names):
                raise GraphFormatError(f"{path}:{lineno}: too many columns")
            i = index[node]
            for name, tok in zip(names, row[1:]):
                tok = tok.strip()
                if tok in ("0", "1"):
                    values[name][i] = float(tok)
                else:
                    missing += 1
    return values, missing


def write_edge_list(g: Graph, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, j in g.edge_array():
            fh.write(f"{g.node_ids[i]} {g.node_ids[j]}\n")


def write_attributes(g: Graph, path: str | Path) -> None:
    names = sorted(g.attributes)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node", *names])
        for i, node in enumerate(g.node_ids):
            row = [node]
            for name in names:
                v = g.attributes[name][i]
                row.append("" if np.isnan(v) else str(int(v)))
            w.writerow(row)


def largest_connected_component(g: Graph) -> Graph:
    """Maximum-size component; ties go to the component holding the smallest node id."""
    if g.n_nodes == 0:
        raise ValueError("empty graph")
    n_comp, labels = csgraph.connected_components(g.adjacency(), directed=False)
    if n_comp == 1:
        return g
    sizes = np.bincount(labels, minlength=n_comp)
    best = np.flatnonzero(sizes == sizes.max())
    if len(best) > 1:
        best_key = {c: min(_id_key(g.node_ids[i]) for i in np.flatnonzero(labels == c)) for c in best}
        chosen = min(best, key=best_key.__getitem__)
    else:
        chosen = best[0]
    return g.subgraph(np.flatnonzero(labels == chosen))


def is_connected(g: Graph) -> bool:
    if g.n_nodes == 0:
        return False
    n_comp, _ = csgraph.connected_components(g.adjacency(), directed=False)
    return n_comp == 1


def transition_matrix(g: Graph) -> sparse.csr_array:
    """Row-stochastic simple-walk matrix with entries ``G_ij / d_i``."""
    d = g.degrees
    if (d == 0).any():
        raise ValueError(f"isolated node {g.node_ids[int(np.argmin(d))]!r}: walk undefined")
    data = np.repeat(1.0 / d, d)
    return sparse.csr_array((data, g.indices, g.indptr), shape=(g.n_nodes,) * 2)


def stationary_distribution(g: Graph) -> np.ndarray:
    d = g.degrees.astype(float)
    if (d == 0).any():
        raise ValueError("stationary distribution needs every degree >= 1")
    return d / d.sum()


@dataclass(frozen=True)
class CohesionEstimate:
    """Node-independent path counts over evaluated dyads."""

    mean: float
    minimum: int
    maximum: int
    n_dyads: int
    exhaustive: bool
    counts: np.ndarray = field(repr=False)

    @property
    def standard_error(self) -> float:
        if self.n_dyads < 2:
            return 0.0
        return float(np.std(self.counts, ddof=1) / math.sqrt(self.n_dyads))


def _split_network(g: Graph) -> sparse.csr_array:
    # node v -> (v_in = 2v, v_out = 2v + 1); unit capacity everywhere
    n = g.n_nodes
    e = g.edge_array()
    src = np.concatenate([2 * np.arange(n), 2 * e[:, 0] + 1, 2 * e[:, 1] + 1])
    dst = np.concatenate([2 * np.arange(n) + 1, 2 * e[:, 1], 2 * e[:, 0]])
    cap = np.ones(len(src), dtype=np.int32)
    return sparse.csr_array((cap, (src, dst)), shape=(2 * n, 2 * n))


def node_independent_paths(g: Graph, s: int, t: int, _net: sparse.csr_array | None = None) -> int:
    """Vertex-disjoint s-t path count; a direct s-t edge counts as one path."""
    if s == t:
        raise ValueError("dyad endpoints must differ")
    net = _split_network(g) if _net is None else _net
    res = csgraph.maximum_flow(net, 2 * s + 1, 2 * t)
    return int(res.flow_value)


def _decode_pairs(k: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # k-th pair (i < j) in row-major order of the strict upper triangle
    k = k.astype(np.int64)
    i = (n - 2 - np.floor(np.sqrt(-8 * k + 4 * n * (n - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    j = k + i + 1 - n * (n - 1) // 2 + (n - i) * ((n - i) - 1) // 2
    return i, j


def estimate_node_independent_paths(
    g: Graph,
    dyad_sample: int = 10_000,
    rng: np.random.Generator | None = None,
    replace: bool = False,
) -> CohesionEstimate:
    """Average vertex connectivity over sampled dyads by max-flow.

    Falls back to every dyad when there are at most ``dyad_sample`` of them.
    """
    n = g.n_nodes
    if n < 2:
        raise ValueError("need at least two nodes")
    if dyad_sample < 1:
        raise ValueError("dyad_sample must be >= 1")
    total = n * (n - 1) // 2
    exhaustive = total <= dyad_sample
    if exhaustive:
        ks = np.arange(total)
    else:
        rng = np.random.default_rng() if rng is None else rng
        ks = rng.choice(total, size=dyad_sample, replace=replace)
    si, ti = _decode_pairs(np.asarray(ks), n)
    net = _split_network(g)
    counts = np.array([node_independent_paths(g, int(a), int(b), net) for a, b in zip(si, ti)])
    return CohesionEstimate(
        float(counts.mean()), int(counts.min()), int(counts.max()), len(counts), exhaustive, counts
    )
