"""Robust gradient descent with a fresh contaminated batch per iteration."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, List, Optional

import numpy as np

from .errors import ConfigError
from .estimators import EstimatorParams, FilterReport, stable_mean
from .model import Batch, PairedBatch, pair_transform
from .risk import ModelVariant, batch_grads, dist

ZERO_MEAN_STEP = 128 / 981
PAIRED_STEP = 1024 / 1647
# 2 / (alpha + beta) for curvature bounds alpha = ||x*||^2 and
# beta = 73/9 ||x*||^2 (zero-mean) or 49/12 ||x*||^2 (paired), with ||x0||
# standing in for ||x*||
BALANCED_STEP = {ModelVariant.ZERO_MEAN: 2 / (1 + 73 / 9), ModelVariant.PAIRED: 2 / (1 + 49 / 12)}
STEP_RULES = ("default", "balanced")


def step_size(x0_norm: float, variant=ModelVariant.ZERO_MEAN, rule: str = "default") -> float:
    """Constant step ``c / ||x0||^2``.

    ``rule="default"`` uses ``c = 128/981`` (zero-mean) or ``1024/1647``
    (paired). The paired default exceeds ``2 / lambda_max`` of the paired
    Hessian at the solution (``4 ||x*||^2``), so even exact gradients
    oscillate away from ``x*``; ``rule="balanced"`` picks ``2/(alpha+beta)``
    from the curvature bounds instead.
    """
    if not x0_norm > 0:
        raise ValueError("step size undefined for a zero initial iterate")
    variant = ModelVariant(variant)
    if rule == "default":
        c = ZERO_MEAN_STEP if variant is ModelVariant.ZERO_MEAN else PAIRED_STEP
    elif rule == "balanced":
        c = BALANCED_STEP[variant]
    else:
        raise ConfigError(f"unknown step rule {rule!r}")
    return c / x0_norm**2


def default_iterations(x0_norm: float, sigma_guess: float) -> int:
    """``max(10, ceil(log(||x0||^2 / sigma_guess)))``; harness convenience only."""
    if sigma_guess <= 0:
        return 10
    return max(10, math.ceil(math.log(x0_norm**2 / sigma_guess)))


@dataclass(frozen=True)
class DescentParams:
    T: int = 30
    m_tilde: int = 2000
    epsilon: float = 0.0
    delta: float = 0.01
    variant: ModelVariant = ModelVariant.ZERO_MEAN
    eta_override: Optional[float] = None
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    step_rule: str = "default"

    def __post_init__(self):
        object.__setattr__(self, "variant", ModelVariant(self.variant))
        if self.T < 0:
            raise ConfigError("T must be nonnegative")
        if self.m_tilde < 1:
            raise ConfigError("m_tilde must be positive")
        if self.eta_override is not None and not self.eta_override > 0:
            raise ConfigError("eta override must be positive")
        if self.step_rule not in STEP_RULES:
            raise ConfigError(f"unknown step rule {self.step_rule!r}")

    @property
    def raw_batch_size(self) -> int:
        return 2 * self.m_tilde if self.variant is ModelVariant.PAIRED else self.m_tilde

    @property
    def effective_epsilon(self) -> float:
        return 2 * self.epsilon if self.variant is ModelVariant.PAIRED else self.epsilon


@dataclass
class DescentTrace:
    iterates: List[np.ndarray] = field(default_factory=list)
    dist_curve: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    per_iter_filter_reports: List[FilterReport] = field(default_factory=list)
    elapsed_ms: List[float] = field(default_factory=list)
    ball_excursions: List[int] = field(default_factory=list)
    eta: float = float("nan")

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]


MeanEstimator = Callable[[np.ndarray, EstimatorParams], tuple]


def rgd_step(x_t, batch, eta: float, params: DescentParams,
             mean_estimator: MeanEstimator = stable_mean):
    """One update ``x_{t+1} = x_t - eta * g_t`` with ``g_t`` a robust mean of sample gradients.

    ``batch`` must already be in the variant's form (a :class:`PairedBatch`
    for the paired model).
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    if params.variant is ModelVariant.PAIRED and not isinstance(batch, PairedBatch):
        raise TypeError("paired descent needs a PairedBatch")
    if params.variant is ModelVariant.ZERO_MEAN and not isinstance(batch, Batch):
        raise TypeError("zero-mean descent needs a Batch")
    P = batch_grads(x_t, batch)
    est = params.estimator.with_(epsilon=params.effective_epsilon, delta=params.delta, m=P.shape[0])
    g, report = mean_estimator(P, est)
    return np.asarray(x_t, dtype=float) - eta * g, report, g


class FreshBatchSource:
    """Hands out batches built by ``make(t)`` for ``t = 0, 1, ...``, each exactly once."""

    def __init__(self, make: Callable[[int], Batch], limit: Optional[int] = None):
        self._make = make
        self._limit = limit
        self.issued = 0

    def __iter__(self) -> Iterator[Batch]:
        return self

    def __next__(self) -> Batch:
        if self._limit is not None and self.issued >= self._limit:
            raise StopIteration
        b = self._make(self.issued)
        self.issued += 1
        return b


def solve(x0, source: Iterable, params: DescentParams, x_star=None,
          mean_estimator: MeanEstimator = stable_mean) -> DescentTrace:
    """Run ``T`` robust gradient steps from ``x0``.

    ``source`` yields raw batches of ``m_tilde`` samples (``2 m_tilde`` for
    the paired variant, which are differenced here). When ``x_star`` is given
    the trace records ``dist`` to it and counts iterates that leave the
    contraction ball (radius ``||x*||/9``, or ``/6`` for paired).
    """
    x = np.asarray(x0, dtype=float).copy()
    x0_norm = float(np.linalg.norm(x))
    if x0_norm == 0:
        raise ValueError("refusing to descend from a zero initial iterate")
    eta = params.eta_override
    if eta is None:
        eta = step_size(x0_norm, params.variant, params.step_rule)
    radius = None
    if x_star is not None:
        x_star = np.asarray(x_star, dtype=float)
        div = 6.0 if params.variant is ModelVariant.PAIRED else 9.0
        radius = np.linalg.norm(x_star) / div

    trace = DescentTrace(eta=eta)
    _record(trace, x, x_star, radius)
    it = iter(source)
    for t in range(params.T):
        t0 = time.perf_counter()
        raw = next(it)
        if getattr(raw, "consumed", False):
            raise RuntimeError("batch consumed twice")
        raw.consumed = True
        if raw.m != params.raw_batch_size:
            raise ValueError(f"expected {params.raw_batch_size} samples, got {raw.m}")
        batch = pair_transform(raw) if params.variant is ModelVariant.PAIRED else raw
        x, report, g = rgd_step(x, batch, eta, params, mean_estimator)
        trace.grad_norms.append(float(np.linalg.norm(g)))
        trace.per_iter_filter_reports.append(report)
        _record(trace, x, x_star, radius)
        trace.elapsed_ms.append((time.perf_counter() - t0) * 1e3)
    return trace


def _record(trace, x, x_star, radius):
    trace.iterates.append(x.copy())
    if x_star is not None:
        d = dist(x, x_star)
        trace.dist_curve.append(d)
        if d > radius:
            trace.ball_excursions.append(len(trace.iterates) - 1)


def oracle_descent(x0, grad: Callable[[np.ndarray], np.ndarray], eta: float, steps: int):
    """Plain gradient descent on a known gradient map; returns all iterates."""
    xs = [np.asarray(x0, dtype=float)]
    for _ in range(steps):
        xs.append(xs[-1] - eta * grad(xs[-1]))
    return xs
