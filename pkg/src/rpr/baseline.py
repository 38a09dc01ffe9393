"""Non-robust reference pipeline: plain averages everywhere.

Used only to show what the robust estimators buy. The initialization takes
the empirical ``E[y a a^T]`` (or the empirical ``E[upsilon b c^T]`` for the
paired model), the plain mean of the responses for the scale and the top
eigenvector; descent averages the sample gradients.
"""
from __future__ import annotations

import numpy as np

from .estimators import empirical_mean, top_eigenpair
from .initialization import InitConfig, InitResult
from .model import Batch, pair_transform
from .risk import ModelVariant


def naive_init(batch: Batch, cfg: InitConfig) -> InitResult:
    if batch.m != cfg.raw_size:
        raise ValueError(f"expected a batch of {cfg.raw_size} samples, got {batch.m}")
    if cfg.variant is ModelVariant.PAIRED:
        pb = pair_transform(batch)
        Y = (pb.b * pb.upsilon[:, None]).T @ pb.c / pb.m
        scale_sq = float(np.mean(pb.upsilon * np.einsum("ij,ij->i", pb.b, pb.c)))
    else:
        Y = (batch.a * batch.y[:, None]).T @ batch.a / batch.m
        scale_sq = float(np.mean(batch.y))
    n = Y.shape[0]
    if scale_sq < 0:
        return InitResult(np.zeros(n), scale_sq, float("nan"), True, True, Y)
    lam, v, ok = top_eigenpair(Y)
    return InitResult(np.sqrt(scale_sq) * v, scale_sq, lam, False, ok, Y)


naive_mean = empirical_mean
