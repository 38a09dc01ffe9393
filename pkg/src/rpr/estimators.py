"""Robust location and scatter estimators.

All estimators here are deterministic functions of their inputs; no random
numbers are drawn. The effective corruption level

    eps' = c1 * log(1/delta) / m + epsilon

sets the trimming depth, the filter's removal budget and the number of
blocks in the covariance surrogate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DegenerateInputError

MAD_TO_SD = 1.4826
COV_METHODS = ("winsorized", "geometric_median", "medoid")


@dataclass(frozen=True)
class EstimatorParams:
    epsilon: float = 0.0
    delta: float = 0.01
    m: Optional[int] = None
    c1: float = 1.0
    eps_cap: float = 0.25
    theta: float = 9.0
    removal_divisor: float = 4.0
    budget_factor: float = 4.0
    block_factor: float = 8.0
    min_blocks: int = 10
    cov_method: str = "winsorized"
    winsor_quantile: float = 0.9

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.cov_method not in COV_METHODS:
            raise ConfigError(f"unknown cov_method {self.cov_method!r}")

    def eps_prime(self, m: Optional[int] = None) -> float:
        m = self.m if m is None else m
        if not m:
            raise ValueError("sample size unknown")
        e = self.c1 * math.log(1.0 / self.delta) / m + self.epsilon
        if e > self.eps_cap:
            raise ConfigError(f"effective corruption {e:.4f} exceeds cap {self.eps_cap}")
        return e

    def with_(self, **kw) -> "EstimatorParams":
        return replace(self, **kw)

    # keys accepted under "estimators" in the harness config
    TUNABLE = ("c1", "eps_cap", "theta", "removal_divisor", "budget_factor",
               "block_factor", "min_blocks", "cov_method", "winsor_quantile")


@dataclass(frozen=True)
class FilterReport:
    removed_count: int
    iterations: int
    final_top_eigenvalue: float
    final_weight_mass: float
    budget_exhausted: bool = False


class EigenPair(NamedTuple):
    value: float
    vector: np.ndarray
    converged: bool


def _ceil(x: float) -> int:
    # guards against 0.25 * 4 landing a hair above 1.0
    return math.ceil(x - 1e-9)


def robust_scalar_mean(values, params: EstimatorParams) -> float:
    """Trimmed mean dropping the ``ceil(eps' m)`` smallest and largest values."""
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    m = v.size
    if m == 0:
        raise DegenerateInputError("no values")
    k = _ceil(params.eps_prime(m) * m)
    if m <= 2 * k:
        raise DegenerateInputError(f"trimming {k} from each end leaves nothing of {m} values")
    return float(np.mean(v[k:m - k]))


def _robust_variance_scale(P: np.ndarray) -> float:
    med = np.median(P, axis=0)
    mad = np.median(np.abs(P - med), axis=0)
    return float(np.median((MAD_TO_SD * mad) ** 2))


def stable_mean(points, params: EstimatorParams):
    """Iterative-filtering mean estimate; see :func:`stable_filter`."""
    _, mu, report = stable_filter(points, params)
    return mu, report


def stable_filter(points, params: EstimatorParams):
    """Iterative filtering.

    Each round computes the mean and covariance of the retained points and
    stops once the top covariance eigenvalue is at most ``theta`` times a
    MAD-based per-coordinate variance scale (median over coordinates, taken
    on the full input). Otherwise the ``ceil(eps' * m_retained / 4)``
    points with the largest squared projection on the top eigenvector are
    dropped. At most ``4 eps' m`` points are ever dropped.

    Returns
    -------
    keep : ndarray of bool, shape (m,)
        Retained points.
    mean : ndarray of shape (n,)
        Average of the retained points.
    report : FilterReport
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    m = P.shape[0]
    if m == 0:
        raise DegenerateInputError("no points")
    ep = params.eps_prime(m)
    budget = math.floor(params.budget_factor * ep * m + 1e-9)
    thresh = params.theta * _robust_variance_scale(P)
    keep = np.ones(m, dtype=bool)
    removed = 0
    rounds = 0
    while True:
        R = P[keep]
        mu = R.mean(axis=0)
        D = R - mu
        C = D.T @ D / R.shape[0]
        w, V = np.linalg.eigh(C)
        lam = float(w[-1])
        floor_tol = 1e-20 * float(np.mean(np.einsum("ij,ij->i", R, R)))
        if lam <= thresh or lam <= floor_tol:
            exhausted = False
            break
        if removed >= budget:
            exhausted = True
            break
        r = min(_ceil(ep * R.shape[0] / params.removal_divisor), budget - removed)
        scores = (D @ V[:, -1]) ** 2
        drop = np.argsort(-scores, kind="stable")[:r]
        keep[np.flatnonzero(keep)[drop]] = False
        removed += r
        rounds += 1
    return keep, mu, FilterReport(removed, rounds, lam, keep.sum() / m, exhausted)


def empirical_mean(points, params: Optional[EstimatorParams] = None):
    """Plain average, with the same return shape as :func:`stable_mean`."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    mu = P.mean(axis=0)
    D = P - mu
    C = D.T @ D / P.shape[0]
    # a diverging naive run produces inf/nan points; report rather than fail
    lam = float(np.linalg.eigvalsh(C)[-1]) if np.all(np.isfinite(C)) else float("nan")
    return mu, FilterReport(0, 0, lam, 1.0, False)


def n_blocks(m: int, params: EstimatorParams) -> int:
    ep = params.eps_prime(m)
    return max(params.min_blocks,
               _ceil(params.block_factor * (ep * m + math.log(1.0 / params.delta))))


def _geometric_median(F: np.ndarray, tol: float = 1e-10, max_iter: int = 500) -> np.ndarray:
    # Weiszfeld iterations started at the coordinatewise median
    z = np.median(F, axis=0)
    scale = max(float(np.max(np.abs(F))), 1e-300)
    for _ in range(max_iter):
        d = np.linalg.norm(F - z, axis=1)
        hit = d < 1e-12 * scale
        if hit.all():
            return z
        w = 1.0 / np.where(hit, np.inf, d)
        z_new = (w[:, None] * F).sum(axis=0) / w.sum()
        if hit.any():
            # Vardi-Zhang correction for an iterate sitting on a data point
            r = np.linalg.norm(((F - z)[~hit] * w[~hit, None]).sum(axis=0))
            k = hit.sum()
            t = min(1.0, k / r) if r > 0 else 1.0
            z_new = (1 - t) * z_new + t * z
        if np.linalg.norm(z_new - z) <= tol * scale:
            return z_new
        z = z_new
    return z


def _medoid(F: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", F, F)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2 * F @ F.T, 0.0)
    return F[int(np.argmin(np.sqrt(D2).sum(axis=1)))]


def _psd_clip(M: np.ndarray) -> np.ndarray:
    M = (M + M.T) / 2
    w, V = np.linalg.eigh(M)
    if w[0] >= 0:
        return M
    return (V * np.maximum(w, 0.0)) @ V.T


def block_second_moments(points, k: int) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    return np.stack([B.T @ B / B.shape[0] for B in np.array_split(P, k)])


def robust_covariance(points, params: EstimatorParams) -> np.ndarray:
    """Second-moment matrix of mean-zero data, robust to outliers and heavy tails.

    ``winsorized`` (default): drop the ``ceil(eps' m)`` points of largest
    norm, then shrink every remaining point whose norm exceeds the
    ``winsor_quantile`` of the remaining norms back to that norm, and
    average the outer products. Norm-based weights commute with rotations,
    so any eigenvector the clean law's second moment has is kept in
    expectation; the overall scale is biased low, which does not move
    eigenvectors.

    ``geometric_median`` / ``medoid``: cut the sample into contiguous
    blocks, take each block's empirical second moment and aggregate by
    Frobenius geometric median or by the block matrix closest in summed
    Frobenius distance to all others.

    The result is symmetrised and clipped to be positive semidefinite.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    m, n = P.shape
    if m == 0:
        raise DegenerateInputError("no points")
    if np.all(P == P[0]):
        return np.outer(P[0], P[0])
    if params.cov_method == "winsorized":
        return _psd_clip(_winsorized_second_moment(P, params))
    k = n_blocks(m, params)
    if m < k:
        raise DegenerateInputError(f"{m} points cannot fill {k} blocks")
    return aggregate_blocks(block_second_moments(P, k), params.cov_method)


def _winsorized_second_moment(P: np.ndarray, params: EstimatorParams) -> np.ndarray:
    m = P.shape[0]
    k = _ceil(params.eps_prime(m) * m)
    if m <= k:
        raise DegenerateInputError(f"trimming {k} of {m} points leaves nothing")
    norms = np.sqrt(np.einsum("ij,ij->i", P, P))
    keep = np.argsort(norms, kind="stable")[:m - k]
    R, r = P[keep], norms[keep]
    tau = np.quantile(r, params.winsor_quantile)
    w = np.where(r > tau, tau / np.where(r > 0, r, 1.0), 1.0)
    R = R * w[:, None]
    return R.T @ R / R.shape[0]


def aggregate_blocks(blocks: np.ndarray, method: str = "geometric_median") -> np.ndarray:
    k, n, _ = blocks.shape
    F = blocks.reshape(k, n * n)
    if np.all(F == F[0]):
        agg = F[0]
    elif method == "medoid":
        agg = _medoid(F)
    else:
        agg = _geometric_median(F)
    return _psd_clip(agg.reshape(n, n))


def top_eigenpair(M, tol: float = 1e-12, max_iter: int = 10_000) -> EigenPair:
    """Largest eigenvalue and unit eigenvector of ``(M + M^T)/2`` by power iteration.

    The matrix is shifted by a Gershgorin lower bound when needed so the
    algebraically largest eigenvalue dominates. The start vector is fixed,
    and the returned vector has its first nonzero coordinate positive.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("top_eigenpair needs a square matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    S = (M + M.T) / 2
    n = S.shape[0]
    radius = np.abs(S).sum(axis=1) - np.abs(np.diag(S))
    shift = max(0.0, -float(np.min(np.diag(S) - radius)))
    A = S + shift * np.eye(n)

    v = np.zeros(n)
    v[0] = 1.0
    v += 1e-3 * np.cos(np.arange(1, n + 1) * 2.399963229728653)
    v /= np.linalg.norm(v)
    converged = False
    for _ in range(max_iter):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            # zero matrix; any unit vector is an eigenvector
            converged = True
            break
        w /= nw
        if np.linalg.norm(w - v) < tol:
            v = w
            converged = True
            break
        v = w
    v = _sign_fix(v)
    return EigenPair(float(v @ S @ v), v, converged)


def _sign_fix(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-14)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v
