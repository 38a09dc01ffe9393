"""Spectral initialization from a contaminated batch.

The direction comes from the top eigenvector of a robust estimate of
``E[y a a^T] = ||x*||^2 I + 2 x* x*^T`` (``mean_est``: column by column with
the filter) or of ``Cov(y a) = (3||x*||^4 + sigma^2) I + 12 ||x*||^2 x* x*^T``
(``cov_est``). The scale comes from a robust mean of the responses, since
``E[y] = ||x*||^2``. The paired variant runs the same recipe on the
differenced triples.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .estimators import (EstimatorParams, robust_covariance, robust_scalar_mean,
                         stable_mean, top_eigenpair)
from .model import Batch, pair_transform
from .risk import ModelVariant

CONFIGURATIONS = ("mean_est", "cov_est")


@dataclass(frozen=True)
class InitConfig:
    configuration: str = "cov_est"
    variant: ModelVariant = ModelVariant.ZERO_MEAN
    m0: int = 5000
    epsilon: float = 0.0
    delta: float = 0.01
    estimator: EstimatorParams = field(default_factory=EstimatorParams)

    def __post_init__(self):
        if self.configuration not in CONFIGURATIONS:
            raise ConfigError(f"unknown init configuration {self.configuration!r}")
        object.__setattr__(self, "variant", ModelVariant(self.variant))
        if self.m0 < 1:
            raise ConfigError("m0 must be positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")

    @property
    def raw_size(self) -> int:
        return 2 * self.m0 if self.variant is ModelVariant.PAIRED else self.m0

    @property
    def effective_epsilon(self) -> float:
        # differencing doubles the corrupted fraction
        return 2 * self.epsilon if self.variant is ModelVariant.PAIRED else self.epsilon


@dataclass
class InitResult:
    x0: np.ndarray
    scale_sq: float
    eigenvalue: float
    degenerate: bool
    converged: bool
    Y: np.ndarray = field(repr=False)
    removed_total: int = 0


def _weights_and_directions(batch, cfg: InitConfig):
    """Scalar weights ``w``, vectors ``u`` (the estimate's rows) and partner ``s``.

    The matrix estimated is ``E[w s u^T]``-shaped: zero-mean uses
    ``w = y, u = s = a``; paired uses ``w = upsilon, u = b, s = c``.
    """
    if cfg.variant is ModelVariant.PAIRED:
        pb = pair_transform(batch)
        return pb.upsilon, pb.b, pb.c
    return batch.y, batch.a, batch.a


def spectral_init(batch: Batch, cfg: InitConfig) -> InitResult:
    """Initial iterate ``x0`` with ``||x0||^2`` equal to a robust estimate of ``||x*||^2``.

    A negative scale estimate yields the zero vector with ``degenerate=True``.
    """
    if batch.m != cfg.raw_size:
        raise ValueError(f"expected a batch of {cfg.raw_size} samples, got {batch.m}")
    w, u, s = _weights_and_directions(batch, cfg)
    m, n = u.shape
    eps = cfg.effective_epsilon
    base = cfg.estimator.with_(epsilon=eps, m=m)
    removed = 0
    if cfg.configuration == "mean_est":
        col = base.with_(delta=cfg.delta / (2 * n))
        Y = np.empty((n, n))
        for i in range(n):
            mu, rep = stable_mean((w * s[:, i])[:, None] * u, col)
            Y[:, i] = mu
            removed += rep.removed_count
    else:
        Y = robust_covariance(w[:, None] * u, base.with_(delta=cfg.delta / 2))

    if cfg.variant is ModelVariant.PAIRED:
        scale_vals = w * np.einsum("ij,ij->i", u, s)
    else:
        scale_vals = w
    scale_sq = robust_scalar_mean(scale_vals, base.with_(delta=cfg.delta / 2))
    if scale_sq < 0:
        return InitResult(np.zeros(n), scale_sq, float("nan"), True, True, Y, removed)
    lam, v, ok = top_eigenpair(Y)
    return InitResult(np.sqrt(scale_sq) * v, scale_sq, lam, False, ok, Y, removed)
