"""Eigen-expansion of reversible walks and exact random-walk sampling variance.

For a chain ``P`` reversible with respect to ``pi`` the matrix
``D^{1/2} P D^{-1/2}`` (``D = diag(pi)``) is symmetric, so

    P^t = D^{-1/2} V diag(lam)^t V' D^{1/2}

with orthonormal ``V``.  Projecting the centred, ``sqrt(pi)``-scaled values
onto ``V`` gives coefficients ``alpha`` and the stationary lag covariances
``gamma_t = sum_{k>=2} alpha_k**2 * lam_k**t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse


class NonReversibleChainError(ValueError):
    """The chain violates detailed balance, so the symmetric expansion does not exist."""


@dataclass(frozen=True, eq=False)
class CategoryChain:
    """Finite Markov chain over categories, each carrying a Y value."""

    matrix: np.ndarray
    values: np.ndarray
    stationary: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        P = np.asarray(self.matrix, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("transition matrix must be square")
        if not np.allclose(P.sum(axis=1), 1.0, atol=1e-12, rtol=0) or (P < 0).any():
            raise ValueError("transition matrix must be row-stochastic")
        object.__setattr__(self, "matrix", P)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "stationary", np.asarray(self.stationary, dtype=float))

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(cls, matrix, values, labels: Sequence[str] = ()) -> "CategoryChain":
        P = np.asarray(matrix, dtype=float)
        return cls(P, values, stationary_of(P), tuple(labels))


def stationary_of(P: np.ndarray) -> np.ndarray:
    """Left Perron vector of an irreducible stochastic matrix."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigensystem of the symmetrized walk operator.

    ``eigenvalues[0]`` is the unit eigenvalue; the rest are ordered by
    decreasing magnitude.  Columns of ``eigenvectors`` are orthonormal and
    the first equals ``sqrt(stationary)``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    stationary: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.eigenvalues)

    @property
    def second_largest(self) -> float:
        """Largest eigenvalue other than the unit one (by value, not modulus)."""
        return float(self.eigenvalues[1:].max()) if self.n_states > 1 else float("nan")

    def reconstruct(self) -> np.ndarray:
        return step_matrix(self, 1)


@dataclass(frozen=True)
class ProjectionCoefficients:
    alpha: np.ndarray
    mean: float

    @property
    def gamma0(self) -> float:
        return float(np.sum(self.alpha[1:] ** 2))


def _as_dense(chain) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(chain, CategoryChain):
        return chain.matrix, chain.stationary
    if sparse.issparse(chain):
        return np.asarray(chain.toarray(), dtype=float), None
    return np.asarray(chain, dtype=float), None


def decompose(chain, stationary: Sequence[float] | None = None, tol: float = 1e-8) -> SpectralDecomposition:
    """Symmetric eigendecomposition of a reversible chain.

    ``chain`` is a dense or sparse transition matrix or a ``CategoryChain``.
    Raises ``NonReversibleChainError`` when detailed balance fails by more
    than ``tol``.
    """
    P, own_pi = _as_dense(chain)
    if stationary is None:
        stationary = own_pi if own_pi is not None else stationary_of(P)
    pi = np.asarray(stationary, dtype=float)
    if pi.shape != (P.shape[0],):
        raise ValueError("stationary vector has wrong length")
    if (pi <= 0).any():
        raise ValueError("stationary distribution must be strictly positive (irreducible chain)")
    flux = pi[:, None] * P
    imbalance = np.abs(flux - flux.T).max() if P.size else 0.0
    if imbalance > tol:
        raise NonReversibleChainError(f"detailed balance violated by {imbalance:.3g}")
    r = np.sqrt(pi)
    sym = r[:, None] * P / r[None, :]
    sym = 0.5 * (sym + sym.T)
    lam, V = np.linalg.eigh(sym)
    # Unit eigenvector first, then by decreasing modulus.
    first = int(np.argmax(np.abs(V.T @ r)))
    rest = [k for k in np.lexsort((-lam, -np.abs(lam))) if k != first]
    order = [first, *rest]
    lam, V = lam[order], V[:, order]
    if V[:, 0] @ r < 0:
        V[:, 0] = -V[:, 0]
    return SpectralDecomposition(lam, V, pi)


def projection(decomp: SpectralDecomposition, values: Sequence[float]) -> ProjectionCoefficients:
    """Coordinates of ``sqrt(pi) * (Y - pi.Y)`` in the eigenbasis."""
    y = np.asarray(values, dtype=float)
    pi = decomp.stationary
    mean = float(pi @ y)
    alpha = decomp.eigenvectors.T @ (np.sqrt(pi) * (y - mean))
    return ProjectionCoefficients(alpha, mean)


def step_matrix(decomp: SpectralDecomposition, s: int) -> np.ndarray:
    r = np.sqrt(decomp.stationary)
    V = decomp.eigenvectors
    core = (V * decomp.eigenvalues**s) @ V.T
    return core / r[:, None] * r[None, :]


def step_distribution(decomp: SpectralDecomposition, p0: Sequence[float], s: int) -> np.ndarray:
    """Distribution after ``s`` steps from ``p0`` (row-vector times ``P^s``)."""
    if s < 0:
        raise ValueError("step count must be >= 0")
    p0 = np.asarray(p0, dtype=float)
    if s == 0:
        return p0.copy()
    r = np.sqrt(decomp.stationary)
    V = decomp.eigenvectors
    coords = (p0 / r) @ V
    return ((coords * decomp.eigenvalues**s) @ V.T) * r


def lag_covariance(proj: ProjectionCoefficients, decomp: SpectralDecomposition, lag):
    """Stationary covariance between states ``lag`` steps apart."""
    lag = np.asarray(lag)
    if (lag < 0).any():
        raise ValueError("lag must be >= 0")
    a2 = proj.alpha[1:] ** 2
    lam = decomp.eigenvalues[1:]
    out = np.power.outer(lam, lag.astype(float)).T @ a2 if lag.ndim else float(a2 @ lam ** float(lag))
    return out


def pair_kernel(lam, S: int) -> np.ndarray:
    """``sum_{i,j=1..S} lam**|i-j|`` for each eigenvalue, closed form where stable."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    out = np.empty_like(lam)
    close = np.abs(1.0 - lam) < 1e-2
    far = ~close
    lf = lam[far]
    # S + 2 * sum_{t=1}^{S-1} (S - t) lam^t
    out[far] = S + 2.0 * (S * lf * (1.0 - lf) - lf * (1.0 - lf**S)) / (1.0 - lf) ** 2
    if close.any():
        t = np.arange(1, S, dtype=float)
        for k in np.flatnonzero(close):
            out[k] = S + 2.0 * np.sum((S - t) * lam[k] ** t)
    return out


def pair_kernel_direct(lam, S: int) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    t = np.arange(1, S, dtype=float)
    return np.array([S + 2.0 * np.sum((S - t) * l**t) for l in lam])


@dataclass(frozen=True)
class RwsVariance:
    variance: float
    design_effect: float
    sample_size: int

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.variance))


def exact_rws_variance(
    proj: ProjectionCoefficients,
    decomp: SpectralDecomposition,
    S: int,
    method: str = "closed",
) -> RwsVariance:
    """Variance of the mean of ``S`` consecutive stationary walk states.

    ``(1/S**2) * sum_{i,j} gamma_{|i-j|}``; the design effect divides by the
    with-replacement SRS variance ``gamma_0 / S`` (``p(1-p)/S`` for binary Y).
    """
    if S < 2:
        raise ValueError("sample size must be >= 2")
    a2 = proj.alpha[1:] ** 2
    lam = decomp.eigenvalues[1:]
    kern = pair_kernel(lam, S) if method == "closed" else pair_kernel_direct(lam, S)
    var = max(float(a2 @ kern) / S**2, 0.0)
    g0 = proj.gamma0
    de = var * S / g0 if g0 > 0 else float("nan")
    return RwsVariance(var, de, S)


def chain_variance(chain, values: Sequence[float] | None, S: int) -> RwsVariance:
    """Convenience wrapper: decompose, project and evaluate the exact variance."""
    if isinstance(chain, CategoryChain) and values is None:
        values = chain.values
    decomp = decompose(chain)
    return exact_rws_variance(projection(decomp, values), decomp, S)


@dataclass(frozen=True, eq=False)
class GeneralAutocovariance:
    """Lag covariances of a stationary, possibly non-reversible chain.

    ``gamma_t = Re(sum_k coef_k * lam_k**t)`` from the (complex)
    eigendecomposition of ``P``.  When the eigenvector basis is
    ill-conditioned the covariances come from repeated multiplication.
    """

    matrix: np.ndarray
    stationary: np.ndarray
    values: np.ndarray
    eigenvalues: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)
    use_powers: bool = False

    @property
    def gamma0(self) -> float:
        y = self.values - self.stationary @ self.values
        return float(self.stationary @ y**2)

    def at(self, lags) -> np.ndarray:
        lags = np.atleast_1d(np.asarray(lags, dtype=np.int64))
        if self.use_powers:
            return self._by_powers(lags)
        out = np.real(np.power.outer(self.eigenvalues, lags.astype(float)).T @ self.coefficients)
        return out

    def _by_powers(self, lags: np.ndarray) -> np.ndarray:
        pi, P = self.stationary, self.matrix
        y = self.values - pi @ self.values
        w = pi * y
        top = int(lags.max()) if lags.size else 0
        series = np.empty(top + 1)
        v = y.copy()
        for t in range(top + 1):
            series[t] = w @ v
            v = P @ v
        return series[lags]


def general_autocovariance(P, stationary, values) -> GeneralAutocovariance:
    P = np.asarray(P, dtype=float)
    pi = np.asarray(stationary, dtype=float)
    y = np.asarray(values, dtype=float)
    yc = y - pi @ y
    lam, R = np.linalg.eig(P)
    use_powers = np.linalg.cond(R) > 1e8
    if use_powers:
        coef = np.zeros_like(lam)
    else:
        left = (pi * yc) @ R
        right = np.linalg.solve(R, yc.astype(complex))
        coef = left * right
    return GeneralAutocovariance(P, pi, y, lam, coef, bool(use_powers))
