"""Random-walk and respondent-driven sampling on networks and category chains."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .graph import Graph
from .spectral import CategoryChain, stationary_of

DEFAULT_BRANCHING = (1 / 3, 1 / 6, 1 / 6, 1 / 3)


class SamplingExhaustedError(RuntimeError):
    """Without-replacement sampling ran out of eligible nodes before reaching S."""


@dataclass(frozen=True)
class RdsConfig:
    sample_size: int = 200
    branching: tuple[float, ...] = DEFAULT_BRANCHING
    with_replacement: bool = True
    seed_mode: str = "equilibrium"
    n_seeds: int = 1
    queue: str = "fifo"

    def __post_init__(self):
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        b = np.asarray(self.branching, dtype=float)
        if (b < 0).any() or not math.isclose(b.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("branching probabilities must be non-negative and sum to 1")
        if self.seed_mode not in ("equilibrium", "uniform"):
            raise ValueError(f"unknown seed mode {self.seed_mode!r}")
        if self.queue not in ("fifo", "lifo"):
            raise ValueError(f"unknown queue discipline {self.queue!r}")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        object.__setattr__(self, "branching", tuple(float(x) for x in b))


WALK = RdsConfig(branching=(0.0, 1.0, 0.0, 0.0))


@dataclass(frozen=True, eq=False)
class RecruitmentForest:
    """Sample records in recruitment order.

    ``parent[i]`` is the sample index of record ``i``'s recruiter or -1 for
    a seed.  ``values`` maps attribute names to per-record arrays (NaN for
    missing).
    """

    node: np.ndarray
    node_ids: tuple[str, ...]
    parent: np.ndarray
    tree: np.ndarray
    wave: np.ndarray
    degree: np.ndarray
    values: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.parent)

    @property
    def n_trees(self) -> int:
        return int(self.tree.max()) + 1 if len(self) else 0

    def attribute(self, name: str) -> np.ndarray:
        try:
            return self.values[name]
        except KeyError:
            raise KeyError(f"forest has no attribute {name!r}") from None

    def with_values(self, name: str, values) -> "RecruitmentForest":
        vals = dict(self.values)
        vals[name] = np.asarray(values, dtype=float)
        return RecruitmentForest(self.node, self.node_ids, self.parent, self.tree, self.wave, self.degree, vals)

    def is_walk(self) -> bool:
        """True when the forest is one chain recruited in sample order."""
        return len(self) > 0 and self.parent[0] == -1 and bool(
            np.array_equal(self.parent[1:], np.arange(len(self) - 1))
        )

    def check(self, g: Graph | None = None) -> None:
        """Raise ``ValueError`` unless ordering, tree and neighbour invariants hold."""
        idx = np.arange(len(self))
        has_parent = self.parent >= 0
        if (self.parent[has_parent] >= idx[has_parent]).any():
            raise ValueError("parent must precede child")
        if (self.tree[has_parent] != self.tree[self.parent[has_parent]]).any():
            raise ValueError("child and parent in different trees")
        if (self.wave[has_parent] != self.wave[self.parent[has_parent]] + 1).any():
            raise ValueError("wave must increase by one per recruitment")
        if (self.wave[~has_parent] != 0).any():
            raise ValueError("seeds must be wave 0")
        if g is not None:
            for i in np.flatnonzero(has_parent):
                if not g.has_edge(int(self.node[self.parent[i]]), int(self.node[i])):
                    raise ValueError(f"record {i} is not a neighbour of its recruiter")


def draw_seed(
    g: Graph, mode: str, rng: np.random.Generator, exclude: np.ndarray | None = None
) -> int:
    """Node drawn with probability ``d_i/2m`` (equilibrium) or ``1/N`` (uniform)."""
    if mode == "equilibrium":
        w = g.degrees.astype(float)
    elif mode == "uniform":
        w = np.ones(g.n_nodes)
    else:
        raise ValueError(f"unknown seed mode {mode!r}")
    if exclude is not None:
        w = np.where(exclude, 0.0, w)
    total = w.sum()
    if total <= 0:
        raise SamplingExhaustedError("no eligible seed nodes left")
    c = np.cumsum(w)
    return int(np.searchsorted(c, rng.random() * total, side="right"))


def _build(g: Graph, nodes, parents, trees, waves) -> RecruitmentForest:
    node = np.asarray(nodes, dtype=np.int64)
    values = {name: arr[node] for name, arr in g.attributes.items()}
    return RecruitmentForest(
        node,
        tuple(g.node_ids[i] for i in node),
        np.asarray(parents, dtype=np.int64),
        np.asarray(trees, dtype=np.int64),
        np.asarray(waves, dtype=np.int64),
        g.degrees[node].astype(np.int64),
        values,
    )


def rds_sample(g: Graph, cfg: RdsConfig, rng: np.random.Generator) -> RecruitmentForest:
    """Branching chain-referral sample of exactly ``cfg.sample_size`` records.

    Each respondent taken from the frontier draws a recruit count from
    ``cfg.branching`` and recruits that many uniformly chosen neighbours
    (distinct, unsampled ones when sampling without replacement).  An empty
    frontier before reaching S starts a new tree from a fresh seed.
    """
    S = cfg.sample_size
    if not cfg.with_replacement and g.n_nodes < S:
        raise SamplingExhaustedError(f"without replacement needs N >= S, got N={g.n_nodes}, S={S}")
    branching = np.cumsum(cfg.branching)
    branching[-1] = 1.0
    nodes: list[int] = []
    parents: list[int] = []
    trees: list[int] = []
    waves: list[int] = []
    sampled = np.zeros(g.n_nodes, dtype=bool)
    frontier: deque[int] = deque()
    n_trees = 0

    def add(node: int, parent: int, tree: int, wave: int) -> None:
        nodes.append(node)
        parents.append(parent)
        trees.append(tree)
        waves.append(wave)
        sampled[node] = True
        frontier.append(len(nodes) - 1)

    def new_seed() -> None:
        nonlocal n_trees
        excl = None if cfg.with_replacement else sampled
        add(draw_seed(g, cfg.seed_mode, rng, excl), -1, n_trees, 0)
        n_trees += 1

    for _ in range(min(cfg.n_seeds, S)):
        new_seed()
    while len(nodes) < S:
        if not frontier:
            new_seed()
            continue
        rec = frontier.popleft() if cfg.queue == "fifo" else frontier.pop()
        k = int(np.searchsorted(branching, rng.random(), side="right"))
        nb = g.neighbors(nodes[rec])
        if cfg.with_replacement:
            picks = nb[rng.integers(len(nb), size=k)] if k else ()
        else:
            eligible = nb[~sampled[nb]]
            k = min(k, len(eligible))
            picks = rng.choice(eligible, size=k, replace=False) if k else ()
        for node in picks:
            if len(nodes) >= S:
                break
            add(int(node), rec, trees[rec], waves[rec] + 1)
    return _build(g, nodes, parents, trees, waves)


def random_walk_sample(
    g: Graph, S: int, rng: np.random.Generator, start: int | None = None, seed_mode: str = "equilibrium"
) -> RecruitmentForest:
    """Non-branching, with-replacement walk of ``S`` records."""
    if S < 1:
        raise ValueError("S must be >= 1")
    cur = draw_seed(g, seed_mode, rng) if start is None else int(start)
    nodes = np.empty(S, dtype=np.int64)
    nodes[0] = cur
    u = rng.random(S - 1)
    for s in range(1, S):
        lo, hi = g.indptr[cur], g.indptr[cur + 1]
        cur = int(g.indices[lo + int(u[s - 1] * (hi - lo))])
        nodes[s] = cur
    parents = np.arange(-1, S - 1)
    return _build(g, nodes, parents, np.zeros(S, dtype=np.int64), np.arange(S))


def chain_sample(
    chain: CategoryChain | np.ndarray,
    S: int,
    rng: np.random.Generator,
    n_chains: int | None = None,
    start: np.ndarray | None = None,
) -> np.ndarray:
    """State sequences of length ``S`` started from the stationary law.

    Returns shape ``(S,)`` or ``(n_chains, S)`` when ``n_chains`` is given.
    """
    if isinstance(chain, CategoryChain):
        P, pi = chain.matrix, chain.stationary
    else:
        P = np.asarray(chain, dtype=float)
        pi = stationary_of(P)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    m = 1 if n_chains is None else n_chains
    out = np.empty((m, S), dtype=np.int64)
    if start is None:
        c0 = np.cumsum(pi)
        c0[-1] = 1.0
        out[:, 0] = np.searchsorted(c0, rng.random(m), side="right")
    else:
        out[:, 0] = start
    for s in range(1, S):
        u = rng.random(m)
        out[:, s] = (u[:, None] >= cum[out[:, s - 1]]).sum(axis=1)
    return out[0] if n_chains is None else out


FOREST_COLUMNS = ("sample_index", "node_id", "parent_index", "tree_id", "wave", "degree")


def write_forest(forest: RecruitmentForest, path: str | Path) -> None:
    names = sorted(forest.values)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*FOREST_COLUMNS, *names])
        for i in range(len(forest)):
            p = int(forest.parent[i])
            row = [i, forest.node_ids[i], "" if p < 0 else p, int(forest.tree[i]), int(forest.wave[i]), int(forest.degree[i])]
            for name in names:
                v = forest.values[name][i]
                row.append("" if np.isnan(v) else f"{v:g}")
            w.writerow(row)


def read_forest(path: str | Path) -> RecruitmentForest:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[: len(FOREST_COLUMNS)]) != FOREST_COLUMNS:
            raise ValueError(f"{path}: not a forest file (expected columns {FOREST_COLUMNS})")
        names = header[len(FOREST_COLUMNS) :]
        rows = [r for r in reader if r]
    for lineno, r in enumerate(rows, start=2):
        if int(r[0]) != lineno - 2:
            raise ValueError(f"{path}:{lineno}: sample_index out of order")
    ids = tuple(r[1] for r in rows)
    index: dict[str, int] = {}
    node = np.array([index.setdefault(v, len(index)) for v in ids], dtype=np.int64)
    values = {
        name: np.array([float(r[6 + k]) if r[6 + k] != "" else np.nan for r in rows])
        for k, name in enumerate(names)
    }
    forest = RecruitmentForest(
        node,
        ids,
        np.array([int(r[2]) if r[2] != "" else -1 for r in rows], dtype=np.int64),
        np.array([int(r[3]) for r in rows], dtype=np.int64),
        np.array([int(r[4]) for r in rows], dtype=np.int64),
        np.array([int(r[5]) for r in rows], dtype=np.int64),
        values,
    )
    forest.check()
    return forest


def forest_from_parents(
    parents: Sequence[int],
    values: Mapping[str, Sequence[float]],
    degrees: Sequence[int] | None = None,
) -> RecruitmentForest:
    """Assemble a forest from a parent list (e.g. for hand-built fixtures)."""
    parent = np.asarray(parents, dtype=np.int64)
    n = len(parent)
    tree = np.empty(n, dtype=np.int64)
    wave = np.empty(n, dtype=np.int64)
    t = -1
    for i, p in enumerate(parent):
        if p < 0:
            t += 1
            tree[i], wave[i] = t, 0
        else:
            if p >= i:
                raise ValueError("parent must precede child")
            tree[i], wave[i] = tree[p], wave[p] + 1
    deg = np.ones(n, dtype=np.int64) if degrees is None else np.asarray(degrees, dtype=np.int64)
    vals = {k: np.asarray(v, dtype=float) for k, v in values.items()}
    return RecruitmentForest(np.arange(n), tuple(str(i) for i in range(n)), parent, tree, wave, deg, vals)
