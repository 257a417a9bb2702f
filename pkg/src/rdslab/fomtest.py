"""Two-step Markov dependence test on networks and recruitment samples.

Both levels regress the next Y on the current Y, the previous Y and their
product, and test the previous-Y terms jointly with an HC1 Wald F test.
Rejection means Y depends on how the current state was reached, i.e. the
Y sequence is not first-order Markov.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .graph import Graph
from .sampler import RecruitmentForest

NOT_FOM = "not-FOM"
MAY_BE_FOM = "may-be-FOM"
INCONCLUSIVE = "inconclusive"


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class OlsFTest:
    coef: np.ndarray
    cov: np.ndarray
    f_stat: float
    p_value: float
    n_obs: int
    df: tuple[int, int]
    degenerate: bool = False


def ols_robust_ftest(X, y, restricted) -> OlsFTest:
    """OLS with HC1 covariance and a Wald F test that ``coef[restricted] == 0``.

    A fit with (numerically) zero residuals has no usable covariance and is
    returned with ``degenerate=True`` and NaN statistics.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n <= k:
        raise RankDeficientError(f"{n} observations for {k} parameters")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise RankDeficientError("design matrix is rank deficient")
    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ beta
    R_inv = np.linalg.inv(R)
    bread = R_inv @ R_inv.T
    q = len(restricted)
    scale = max(float(np.mean(y**2)), 1.0)
    if float(resid @ resid) <= n * scale * 1e-24:
        nan = float("nan")
        return OlsFTest(beta, np.full((k, k), nan), nan, nan, n, (q, n - k), True)
    meat = (X * resid[:, None] ** 2).T @ X
    cov = n / (n - k) * bread @ meat @ bread
    Rm = np.zeros((q, k))
    Rm[np.arange(q), list(restricted)] = 1.0
    rb = Rm @ beta
    V = Rm @ cov @ Rm.T
    try:
        f = float(rb @ np.linalg.solve(V, rb)) / q
    except np.linalg.LinAlgError:
        nan = float("nan")
        return OlsFTest(beta, cov, nan, nan, n, (q, n - k), True)
    if not np.isfinite(f) or np.linalg.cond(V) > 1e14:
        nan = float("nan")
        return OlsFTest(beta, cov, nan, nan, n, (q, n - k), True)
    p = float(stats.f.sf(f, q, n - k))
    return OlsFTest(beta, cov, f, p, n, (q, n - k))


@dataclass(frozen=True)
class FomTestResult:
    coef: np.ndarray
    cov: np.ndarray
    f_stat: float
    p_value: float
    n_obs: int
    verdict: str
    alpha: float
    reason: str = ""

    def rejects(self, alpha: float | None = None) -> bool:
        a = self.alpha if alpha is None else alpha
        return self.verdict != INCONCLUSIVE and self.p_value < a

    def as_dict(self) -> dict:
        return {
            "coefficients": {
                "intercept": float(self.coef[0]) if len(self.coef) else None,
                "y_current": float(self.coef[1]) if len(self.coef) > 1 else None,
                "y_previous": float(self.coef[2]) if len(self.coef) > 2 else None,
                "interaction": float(self.coef[3]) if len(self.coef) > 3 else None,
            },
            "robust_cov": np.asarray(self.cov).tolist(),
            "f_stat": None if np.isnan(self.f_stat) else self.f_stat,
            "p_value": None if np.isnan(self.p_value) else self.p_value,
            "n_obs": self.n_obs,
            "verdict": self.verdict,
            "alpha": self.alpha,
            "reason": self.reason,
        }


def _inconclusive(n_obs: int, alpha: float, reason: str) -> FomTestResult:
    nan = float("nan")
    return FomTestResult(np.full(4, nan), np.full((4, 4), nan), nan, nan, n_obs, INCONCLUSIVE, alpha, reason)


def _fit(dep, current, previous, alpha) -> FomTestResult:
    n = len(dep)
    if n < 5:
        return _inconclusive(n, alpha, "fewer observations than parameters + 1")
    X = np.column_stack([np.ones(n), current, previous, current * previous])
    try:
        res = ols_robust_ftest(X, dep, (2, 3))
    except RankDeficientError as exc:
        return _inconclusive(n, alpha, str(exc))
    if res.degenerate:
        return FomTestResult(res.coef, res.cov, res.f_stat, res.p_value, n, INCONCLUSIVE, alpha, "zero residual variance")
    verdict = NOT_FOM if res.p_value < alpha else MAY_BE_FOM
    return FomTestResult(res.coef, res.cov, res.f_stat, res.p_value, n, verdict, alpha)


def network_observations(g: Graph, attribute: str):
    """(dependent, alter Y, ego Y) for every ordered adjacent pair ego -> alter.

    The dependent value is the share of the alter's neighbours with Y=1,
    counting the ego among them.
    """
    y = g.attribute(attribute)
    known = ~np.isnan(y)
    yk = np.where(known, y, 0.0)
    adj = g.adjacency()
    ones = adj @ yk
    n_known = adj @ known.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = ones / n_known
    ego = np.repeat(np.arange(g.n_nodes), g.degrees)
    alter = g.indices
    keep = known[ego] & known[alter] & (n_known[alter] > 0)
    return frac[alter[keep]], y[alter[keep]], y[ego[keep]]


def network_fom_test(g: Graph, attribute: str, alpha: float = 0.05) -> FomTestResult:
    dep, cur, prev = network_observations(g, attribute)
    if len(np.unique(cur)) < 2:
        return _inconclusive(len(dep), alpha, "attribute is constant")
    return _fit(dep, cur, prev, alpha)


def sample_observations(forest: RecruitmentForest, attribute: str):
    """(recruit Y, recruiter Y, grand-recruiter Y) for every record with two ancestors."""
    y = forest.attribute(attribute)
    p = forest.parent
    has_p = p >= 0
    gp = np.where(has_p, p[np.maximum(p, 0)], -1)
    ok = has_p & (gp >= 0)
    r = np.flatnonzero(ok)
    triple = np.column_stack([y[r], y[p[r]], y[gp[r]]])
    triple = triple[~np.isnan(triple).any(axis=1)]
    return triple[:, 0], triple[:, 1], triple[:, 2]


def sample_fom_test(forest: RecruitmentForest, attribute: str, alpha: float = 0.05) -> FomTestResult:
    dep, cur, prev = sample_observations(forest, attribute)
    if len(dep) == 0:
        return _inconclusive(0, alpha, "no recruiter/grand-recruiter triples")
    return _fit(dep, cur, prev, alpha)
