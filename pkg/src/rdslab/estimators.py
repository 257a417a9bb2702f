"""Point and variance estimators for recruitment forests.

All VHE-family estimators share one assembly:

    var = gamma0_hat / S**2 * sum_{i,j} rho(lag_ij)

where ``gamma0_hat = S/(S-1) * sum_i w_i (Y_i - mu_hat)**2`` is the
inverse-degree weighted sample variance, ``rho`` is the autocorrelation of Y
under a category chain fitted to the observed recruitments, and ``lag_ij``
is either the sample-order distance ``|i - j|`` (VHE) or the path distance
in the recruitment forest (VHEwbc, VHEhom).  Pairs in different trees get
``rho = 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .sampler import RecruitmentForest
from .spectral import (
    CategoryChain,
    chain_variance,
    decompose,
    general_autocovariance,
    pair_kernel,
    projection,
    stationary_of,
)

logger = logging.getLogger(__name__)

Z95 = 1.96


class InsufficientDataError(ValueError):
    """The forest has too few usable recruitments for the requested estimator."""


@dataclass(frozen=True)
class VarianceEstimate:
    estimator: str
    variance: float
    mean: float
    sample_size: int
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def half_width(self, z: float = Z95) -> float:
        return z * math.sqrt(self.variance)

    @property
    def design_effect(self) -> float:
        """Variance relative to ``mu_hat(1 - mu_hat)/S``; NaN for a one-category sample."""
        srs = self.mean * (1.0 - self.mean) / self.sample_size
        return self.variance / srs if srs > 0 and not self.degenerate else float("nan")

    def as_dict(self, z: float = Z95) -> dict:
        return {
            "estimator": self.estimator,
            "mean": self.mean,
            "variance": self.variance,
            "design_effect": self.design_effect,
            "ci_half_width": self.half_width(z),
            "ci_low": self.mean - self.half_width(z),
            "ci_high": self.mean + self.half_width(z),
            "sample_size": self.sample_size,
            "degenerate": self.degenerate,
            "diagnostics": self.diagnostics,
        }


# -- point estimates ---------------------------------------------------------


def _usable(forest: RecruitmentForest, attribute: str) -> np.ndarray:
    y = forest.attribute(attribute)
    ok = ~np.isnan(y)
    if not ok.all():
        logger.warning("%d records with missing %r excluded", int((~ok).sum()), attribute)
    return ok


def _vh_weights(degrees: np.ndarray) -> np.ndarray:
    d = np.asarray(degrees, dtype=float)
    if (d <= 0).any():
        raise ValueError("every record needs degree >= 1")
    w = 1.0 / d
    return w / w.sum()


def vh_mean(forest: RecruitmentForest, attribute: str) -> float:
    """Inverse-degree weighted mean ``sum(Y/d) / sum(1/d)``."""
    ok = _usable(forest, attribute)
    if not ok.any():
        raise InsufficientDataError("no records with a known value")
    return float(_vh_weights(forest.degree[ok]) @ forest.attribute(attribute)[ok])


def srs_variance(
    values: Sequence[float],
    probabilities: Sequence[float] | None = None,
    sample_size: int | None = None,
    weights: Sequence[float] | None = None,
) -> float:
    """Variance of the mean under (probability-weighted) random sampling.

    With ``probabilities`` the values are the whole population and the result
    is ``(1/S) sum_i pi_i (Y_i - pi.Y)**2`` for ``S = sample_size``.
    Otherwise the values are a sample and the result is
    ``1/(S-1) sum_i w_i (y_i - w.y)**2`` with ``w`` uniform unless
    ``weights`` are given.
    """
    y = np.asarray(values, dtype=float)
    if y.size == 0:
        raise ValueError("no values")
    if probabilities is not None:
        pi = np.asarray(probabilities, dtype=float)
        if not math.isclose(pi.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("probabilities must sum to 1")
        if sample_size is None or sample_size < 1:
            raise ValueError("population form needs sample_size >= 1")
        return float(pi @ (y - pi @ y) ** 2) / sample_size
    S = len(y)
    if S < 2:
        raise ValueError("sample form needs at least two values")
    w = np.full(S, 1.0 / S) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    return float(w @ (y - w @ y) ** 2) / (S - 1)


def binary_srs_variance(p: float, S: int) -> float:
    return p * (1.0 - p) / S


# -- category chains ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EmpiricalCategoryChain:
    """Transition matrix over the last ``order`` Y values seen along recruitment chains.

    State ``s`` encodes ``(y_{t-order+1}, ..., y_t)`` as a binary number with
    the oldest value as the most significant bit, so from state ``s`` only
    ``((s << 1) & mask) | y`` is reachable.
    """

    order: int
    matrix: np.ndarray
    counts: np.ndarray
    values: np.ndarray
    state_distribution: np.ndarray
    fallback_rows: tuple[int, ...] = ()

    @property
    def n_transitions(self) -> int:
        return int(self.counts.sum())

    def reversible(self) -> tuple[np.ndarray, np.ndarray]:
        """Order-1 only: row-normalized symmetrized counts and their stationary law."""
        if self.order != 1:
            raise ValueError("symmetrization is defined for first-order chains")
        sym = 0.5 * (self.counts + self.counts.T)
        rows = sym.sum(axis=1)
        P = np.where(rows[:, None] > 0, sym / np.where(rows > 0, rows, 1.0)[:, None], 0.0)
        for r in np.flatnonzero(rows == 0):
            P[r, r] = 1.0
        pi = rows / rows.sum()
        return P, pi


def _ancestor_values(forest: RecruitmentForest, y: np.ndarray, order: int) -> np.ndarray:
    """Row r holds Y of r's ancestors at distance order..1 (NaN when absent)."""
    n = len(forest)
    out = np.full((n, order), np.nan)
    anc = np.arange(n)
    for k in range(order):
        anc = np.where(anc >= 0, forest.parent[np.maximum(anc, 0)], -1)
        anc = np.where(anc >= 0, anc, -1)
        out[:, order - 1 - k] = np.where(anc >= 0, y[np.maximum(anc, 0)], np.nan)
    return out


def _next_value_counts(forest: RecruitmentForest, y: np.ndarray, order: int) -> np.ndarray:
    """counts[s, v]: times history state s was followed by value v."""
    hist = _ancestor_values(forest, y, order)
    ok = ~np.isnan(hist).any(axis=1) & ~np.isnan(y)
    h = hist[ok].astype(np.int64)
    state = np.zeros(len(h), dtype=np.int64)
    for k in range(order):
        state = (state << 1) | h[:, k]
    counts = np.zeros((2**order, 2))
    np.add.at(counts, (state, y[ok].astype(np.int64)), 1.0)
    return counts


def fit_category_chain(forest: RecruitmentForest, attribute: str, order: int = 1) -> EmpiricalCategoryChain:
    """Fit the order-``order`` Y chain from parent-to-child recruitments.

    Histories are the ``order`` nearest ancestors of each record.  Rows with
    no observations take the order-``order-1`` row for the same recent
    history (the pooled recruit distribution at order 1) and are listed in
    ``fallback_rows``.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    y = forest.attribute(attribute)
    known = y[~np.isnan(y)]
    if not np.isin(known, (0.0, 1.0)).all():
        raise ValueError(f"attribute {attribute!r} is not binary")
    nv = [_next_value_counts(forest, y, p) for p in range(1, order + 1)]
    if nv[-1].sum() == 0:
        raise InsufficientDataError(f"no recruitment chains of length {order} observed")
    pooled = nv[0].sum(axis=0)
    rows = [pooled / pooled.sum()]
    fallback: list[int] = []
    for p, counts in enumerate(nv, start=1):
        tot = counts.sum(axis=1)
        prob = np.empty_like(counts)
        for s in range(2**p):
            if tot[s] > 0:
                prob[s] = counts[s] / tot[s]
            else:
                prob[s] = rows[p - 1][s & (2 ** (p - 1) - 1)] if p > 1 else rows[0]
                if p == order:
                    fallback.append(s)
        rows.append(prob)
    nxt = rows[order]
    n_states = 2**order
    mask = n_states - 1
    P = np.zeros((n_states, n_states))
    C = np.zeros((n_states, n_states))
    for s in range(n_states):
        for v in (0, 1):
            t = ((s << 1) & mask) | v
            P[s, t] = nxt[s, v]
            C[s, t] = nv[-1][s, v]
    dist = C.sum(axis=0)
    dist = dist / dist.sum()
    values = (np.arange(n_states) & 1).astype(float)
    return EmpiricalCategoryChain(order, P, C, values, dist, tuple(fallback))


# -- lag structures ----------------------------------------------------------


def tree_distance_histogram(forest: RecruitmentForest, mask: np.ndarray | None = None, chunk: int = 512) -> np.ndarray:
    """h[t] = number of ordered record pairs (i != j) at recruitment-tree distance t.

    Pairs in different trees are not counted.  ``h[0]`` is always zero.
    """
    n = len(forest)
    keep = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    child = np.flatnonzero(forest.parent >= 0)
    adj = sparse.csr_array(
        (np.ones(len(child)), (child, forest.parent[child])), shape=(n, n)
    )
    rows = np.flatnonzero(keep)
    hist = np.zeros(1, dtype=np.int64)
    for start in range(0, len(rows), chunk):
        idx = rows[start : start + chunk]
        dist = csgraph.shortest_path(adj, method="D", directed=False, unweighted=True, indices=idx)
        dist = dist[:, keep]
        finite = dist[np.isfinite(dist)].astype(np.int64)
        b = np.bincount(finite)
        if len(b) > len(hist):
            hist = np.pad(hist, (0, len(b) - len(hist)))
        hist[: len(b)] += b
    hist[0] = 0
    return hist


def _walk_histogram(S: int) -> np.ndarray:
    t = np.arange(S)
    h = 2 * (S - t)
    h[0] = 0
    return h


# -- VHE family --------------------------------------------------------------


def _prepare(forest: RecruitmentForest, attribute: str):
    ok = _usable(forest, attribute)
    y = forest.attribute(attribute)
    yv = y[ok]
    S = int(ok.sum())
    if S < 2:
        raise InsufficientDataError("need at least two records with known values")
    w = _vh_weights(forest.degree[ok])
    mu = float(w @ yv)
    gamma0 = S / (S - 1) * float(w @ (yv - mu) ** 2)
    degenerate = bool(np.all(yv == yv[0]))
    return ok, mu, gamma0, S, degenerate


def _degenerate(name, mu, S, order=None):
    diag = {"reason": "single category in sample"}
    if order is not None:
        diag["order"] = order
    return VarianceEstimate(name, 0.0, mu, S, True, diag)


def _first_order_spectrum(forest, attribute):
    fit = fit_category_chain(forest, attribute, 1)
    P, pi = fit.reversible()
    if (pi <= 0).any():
        # one category never appears in a recruitment: no serial dependence is estimable
        return fit, None, None
    decomp = decompose(P, pi)
    proj = projection(decomp, fit.values)
    return fit, decomp, proj


def _c11_power_form(fit: EmpiricalCategoryChain, forest, attribute, ok, mu, S) -> float:
    # Closed-form cross-check using powers of the raw 1->1 transition probability.
    C = fit.matrix
    y = forest.attribute(attribute)[ok]
    w = _vh_weights(forest.degree[ok])
    first = float(w @ (y - mu) ** 2) / (S - 1)
    p01, p10 = C[0, 1], C[1, 0]
    if p01 + p10 <= 0 or y.sum() == 0:
        return float("nan")
    pi1 = p01 / (p01 + p10)
    lam = 1.0 - p01 - p10
    off = pi1 * (S * S - S) + (1 - pi1) * (pair_kernel(lam, S)[0] - S)
    return first + mu**2 / S * (1 - S + off / y.sum())


def vhe_variance(forest: RecruitmentForest, attribute: str) -> VarianceEstimate:
    """Classic VHE: first-order Y chain with sample-order lags ``|i - j|``."""
    ok, mu, gamma0, S, degenerate = _prepare(forest, attribute)
    if degenerate:
        return _degenerate("vhe", mu, S, 1)
    fit, decomp, proj = _first_order_spectrum(forest, attribute)
    diag = {"order": 1, "chain": fit.matrix.tolist(), "n_transitions": fit.n_transitions}
    if decomp is None:
        kern = float(S)
        diag["lambda2"] = 0.0
    else:
        a2 = proj.alpha[1:] ** 2
        kern = float(a2 @ pair_kernel(decomp.eigenvalues[1:], S)) / proj.gamma0
        diag["lambda2"] = decomp.second_largest
        diag["c11_power_form"] = _c11_power_form(fit, forest, attribute, ok, mu, S)
    var = max(gamma0 * kern / S**2, 0.0)
    return VarianceEstimate("vhe", var, mu, S, False, diag)


def vhe_known_chain_variance(forest: RecruitmentForest, attribute: str, chain: CategoryChain) -> VarianceEstimate:
    """VHE with the Y chain supplied rather than fitted (perfect information).

    Uses the chain's stationary variance and sample-order lags, so the value
    depends on the sample only through its size.
    """
    ok = _usable(forest, attribute)
    S = int(ok.sum())
    if S < 2:
        raise InsufficientDataError("need at least two records with known values")
    ex = chain_variance(chain, None, S)
    mu = vh_mean(forest, attribute)
    return VarianceEstimate("vhe-known", ex.variance, mu, S, False, {"design_effect": ex.design_effect})


def _tree_kernel(hist: np.ndarray, rho_at, S: int) -> float:
    t = np.flatnonzero(hist)
    if len(t) == 0:
        return float(S)
    return float(S + hist[t] @ rho_at(t))


def vhe_wbc_variance(forest: RecruitmentForest, attribute: str) -> VarianceEstimate:
    """VHE with recruitment-tree distances as lags; cross-tree pairs contribute zero."""
    ok, mu, gamma0, S, degenerate = _prepare(forest, attribute)
    if degenerate:
        return _degenerate("vhewbc", mu, S, 1)
    if ok.all() and forest.is_walk():
        est = vhe_variance(forest, attribute)
        return VarianceEstimate("vhewbc", est.variance, est.mean, est.sample_size, False, est.diagnostics)
    fit, decomp, proj = _first_order_spectrum(forest, attribute)
    diag = {"order": 1, "chain": fit.matrix.tolist(), "n_transitions": fit.n_transitions}
    hist = tree_distance_histogram(forest, ok)
    if decomp is None:
        kern = float(S)
    else:
        a2 = proj.alpha[1:] ** 2
        lam = decomp.eigenvalues[1:]
        g0 = proj.gamma0
        kern = _tree_kernel(hist, lambda t: np.power.outer(lam, t.astype(float)).T @ a2 / g0, S)
        diag["lambda2"] = decomp.second_largest
    var = max(gamma0 * kern / S**2, 0.0)
    return VarianceEstimate("vhewbc", var, mu, S, False, diag)


def vhe_hom_variance(forest: RecruitmentForest, attribute: str, order: int = 2) -> VarianceEstimate:
    """VHE on a higher-order Y chain (always with tree-distance lags)."""
    if order < 1:
        raise ValueError("order must be >= 1")
    name = f"vhehom{order}"
    ok, mu, gamma0, S, degenerate = _prepare(forest, attribute)
    if degenerate:
        return _degenerate(name, mu, S, order)
    fit = fit_category_chain(forest, attribute, order)
    pi = stationary_of(fit.matrix)
    acov = general_autocovariance(fit.matrix, pi, fit.values)
    g0 = acov.gamma0
    diag = {
        "order": order,
        "chain": fit.matrix.tolist(),
        "n_transitions": fit.n_transitions,
        "fallback_rows": list(fit.fallback_rows),
    }
    if g0 <= 1e-15:
        kern = float(S)
    else:
        hist = _walk_histogram(S) if ok.all() and forest.is_walk() else tree_distance_histogram(forest, ok)
        kern = _tree_kernel(hist, lambda t: acov.at(t) / g0, S)
    var = max(gamma0 * kern / S**2, 0.0)
    return VarianceEstimate(name, var, mu, S, False, diag)


# -- bootstrap ---------------------------------------------------------------


def sbe_variance(
    forest: RecruitmentForest,
    attribute: str,
    B: int = 1000,
    rng: np.random.Generator | None = None,
) -> VarianceEstimate:
    """Bootstrap by regenerating chains from per-recruiter-category urns of recruits.

    Each replicate starts at a uniformly drawn record and repeatedly draws
    the next record from the recruits of recruiters sharing the current
    record's category (the pooled sample when that urn is empty).  The
    returned variance is the variance of the replicate VH means.
    """
    if B < 2:
        raise ValueError("need B >= 2 bootstrap replicates")
    rng = np.random.default_rng() if rng is None else rng
    ok, mu, _, S, degenerate = _prepare(forest, attribute)
    if degenerate:
        return _degenerate("sbe", mu, S)
    y_all = forest.attribute(attribute)
    idx = np.flatnonzero(ok)
    y = y_all[idx].astype(np.int64)
    inv_d = 1.0 / forest.degree[idx].astype(float)
    pos = np.full(len(forest), -1)
    pos[idx] = np.arange(S)
    par = forest.parent[idx]
    has_par = (par >= 0) & (pos[np.maximum(par, 0)] >= 0)
    par_cat = np.where(has_par, y_all[np.maximum(par, 0)], np.nan)
    urns = []
    empty = []
    for c in (0, 1):
        urn = np.flatnonzero(par_cat == c)
        if len(urn) == 0:
            urn = np.arange(S)
            empty.append(c)
        urns.append(urn)
    sizes = np.array([len(u) for u in urns])
    cur = rng.integers(S, size=B)
    num = y[cur] * inv_d[cur]
    den = inv_d[cur].copy()
    for _ in range(S - 1):
        cat = y[cur]
        u = rng.random(B)
        k = (u * sizes[cat]).astype(np.int64)
        nxt = np.where(cat == 0, urns[0][np.minimum(k, sizes[0] - 1)], urns[1][np.minimum(k, sizes[1] - 1)])
        cur = nxt
        num += y[cur] * inv_d[cur]
        den += inv_d[cur]
    stats = num / den
    var = float(np.var(stats, ddof=1))
    diag = {"replicates": B, "empty_urns": empty}
    return VarianceEstimate("sbe", max(var, 0.0), mu, S, False, diag)


ESTIMATORS = ("vhe", "vhewbc", "vhehom2", "vhehom3", "sbe")


def estimate(
    forest: RecruitmentForest,
    attribute: str,
    name: str,
    B: int = 1000,
    rng: np.random.Generator | None = None,
) -> VarianceEstimate:
    if name == "vhe":
        return vhe_variance(forest, attribute)
    if name == "vhewbc":
        return vhe_wbc_variance(forest, attribute)
    if name.startswith("vhehom"):
        return vhe_hom_variance(forest, attribute, int(name[len("vhehom") :]))
    if name == "sbe":
        return sbe_variance(forest, attribute, B, rng)
    raise ValueError(f"unknown estimator {name!r}")
