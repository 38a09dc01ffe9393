"""Monte-Carlo check of every closed-form moment against simulated draws."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from ..risk import (MomentKind, ModelVariant, grad_cov_bounds, moment_oracle, pop_grad)

Z_LIMIT = 5.0
CHUNK = 100_000


@dataclass
class MomentRow:
    kind: str
    components: int
    max_abs_z: float
    max_abs_err: float
    passed: bool


@dataclass
class BoundRow:
    variant: str
    trace: float
    trace_bound: float
    opnorm: float
    opnorm_bound: float
    passed: bool


@dataclass
class MomentReport:
    rows: List[MomentRow]
    bounds: List[BoundRow]

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.rows) and all(b.passed for b in self.bounds)

    def format(self) -> str:
        lines = [f"{'kind':<18}{'comps':>6}{'max|z|':>10}{'max|err|':>12}  result"]
        for r in self.rows:
            lines.append(f"{r.kind:<18}{r.components:>6}{r.max_abs_z:>10.3f}{r.max_abs_err:>12.3e}  "
                         f"{'pass' if r.passed else 'FAIL'}")
        for b in self.bounds:
            lines.append(f"bound[{b.variant}] trace {b.trace:.4g} <= {b.trace_bound:.4g}, "
                         f"opnorm {b.opnorm:.4g} <= {b.opnorm_bound:.4g}  {'pass' if b.passed else 'FAIL'}")
        return "\n".join(lines)


def _outer_flat(U: np.ndarray) -> np.ndarray:
    return np.einsum("ki,kj->kij", U, U).reshape(U.shape[0], -1)


def _draw_functions(x, xs) -> Dict[MomentKind, Callable]:
    """Per-draw quantities whose mean is the matching closed form (flattened)."""
    g_mean = pop_grad(x, xs, ModelVariant.ZERO_MEAN)
    g_mean_p = pop_grad(x, xs, ModelVariant.PAIRED)
    S = xs @ xs

    def zm(d):
        return d["a"], d["y"], d["a"] @ x, d["a"] @ xs

    def pr(d):
        return d["b"], d["c"], d["u"]

    def grad(d):
        a, y, ax, _ = zm(d)
        return ((ax**2 - y) * ax)[:, None] * a

    def grad_p(d):
        b, c, u = pr(d)
        bx, cx = b @ x, c @ x
        return (bx * cx - u)[:, None] * (b * cx[:, None] + c * bx[:, None])

    def cov_ui(d):
        b, c, u = pr(d)
        # slice i is the centred outer product of upsilon c_i b
        mu = np.outer(xs, xs)
        out = [_outer_flat(u[:, None] * c[:, [i]] * b - mu[:, i]) for i in range(xs.size)]
        return np.concatenate(out, axis=1)

    return {
        MomentKind.E_Y: lambda d: d["y"][:, None],
        MomentKind.VAR_Y: lambda d: ((d["y"] - S) ** 2)[:, None],
        MomentKind.E_GRAD: grad,
        MomentKind.E_Y_AAT: lambda d: _outer_flat(d["a"]) * d["y"][:, None],
        MomentKind.E_X2_XSTAR4_AAT: lambda d: _outer_flat(d["a"]) * ((d["a"] @ x) ** 2 * (d["a"] @ xs) ** 4)[:, None],
        MomentKind.GRAD_COV: lambda d: _outer_flat(grad(d) - g_mean),
        MomentKind.COV_YA: lambda d: _outer_flat(d["y"][:, None] * d["a"]),
        MomentKind.E_UPSILON_BCT: lambda d: np.einsum("ki,kj->kij", d["b"], d["c"]).reshape(len(d["u"]), -1) * d["u"][:, None],
        MomentKind.COV_UPSILON_CI_B: cov_ui,
        MomentKind.GRAD_COV_PAIRED: lambda d: _outer_flat(grad_p(d) - g_mean_p),
    }


def _draw_chunk(rng, k, xs, sigma):
    n = xs.size
    a = rng.standard_normal((k, n))
    y = (a @ xs) ** 2 + sigma * rng.standard_normal(k)
    # an independent pair of raw draws for the differenced model
    a1 = rng.standard_normal((k, n))
    a2 = rng.standard_normal((k, n))
    y1 = (a1 @ xs) ** 2 + sigma * rng.standard_normal(k)
    y2 = (a2 @ xs) ** 2 + sigma * rng.standard_normal(k)
    r2 = math.sqrt(2.0)
    return {"a": a, "y": y, "b": (a1 + a2) / r2, "c": (a1 - a2) / r2, "u": (y1 - y2) / 2}


def verify_moments(x, x_star, sigma: float = 1.0, draws: int = 1_000_000, seed: int = 0,
                   kinds: Optional[List[MomentKind]] = None, z_limit: float = Z_LIMIT,
                   bound_h_ratio: float = 0.1) -> MomentReport:
    """Compare every closed form with a Monte-Carlo average over ``draws`` samples.

    Noise is gaussian with standard deviation ``sigma``. Each component gets
    a z-score ``(mc - exact) / stderr``; a kind passes when every
    ``|z| <= z_limit``. Separately, the gradient-covariance trace and
    operator-norm bounds are checked at ``x* + h`` with
    ``||h|| = bound_h_ratio * ||x*||``.
    """
    if draws < 10_000:
        raise ValueError("draws must be at least 10^4")
    x = np.asarray(x, dtype=float)
    xs = np.asarray(x_star, dtype=float)
    kinds = list(MomentKind) if kinds is None else [MomentKind(k) for k in kinds]
    funcs = _draw_functions(x, xs)
    rng = np.random.default_rng(seed)
    sums: Dict[MomentKind, np.ndarray] = {}
    sqs: Dict[MomentKind, np.ndarray] = {}
    done = 0
    while done < draws:
        k = min(CHUNK, draws - done)
        d = _draw_chunk(rng, k, xs, sigma)
        for kind in kinds:
            f = funcs[kind](d)
            sums[kind] = sums.get(kind, 0.0) + f.sum(axis=0)
            sqs[kind] = sqs.get(kind, 0.0) + (f * f).sum(axis=0)
        done += k

    rows = []
    for kind in kinds:
        exact = np.asarray(moment_oracle(kind, x=x, signal=xs, sigma=sigma), dtype=float).reshape(-1)
        mean = sums[kind] / draws
        var = np.maximum(sqs[kind] / draws - mean**2, 0.0)
        se = np.sqrt(var / draws)
        err = mean - exact
        scale = max(1.0, float(np.max(np.abs(exact))))
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, err / np.where(se > 0, se, 1.0),
                         np.where(np.abs(err) <= 1e-12 * scale, 0.0, np.inf))
        mz = float(np.max(np.abs(z)))
        rows.append(MomentRow(kind.value, exact.size, mz, float(np.max(np.abs(err))), mz <= z_limit))

    bounds = []
    h = rng.standard_normal(xs.size)
    h *= bound_h_ratio * np.linalg.norm(xs) / np.linalg.norm(h)
    for variant, kind in ((ModelVariant.ZERO_MEAN, MomentKind.GRAD_COV),
                          (ModelVariant.PAIRED, MomentKind.GRAD_COV_PAIRED)):
        C = moment_oracle(kind, x=xs + h, signal=xs, sigma=sigma)
        tb, ob = grad_cov_bounds(xs + h, xs, sigma, variant)
        tr, op = float(np.trace(C)), float(np.linalg.eigvalsh(C)[-1])
        bounds.append(BoundRow(variant.value, tr, tb, op, ob, tr <= tb and op <= ob))
    return MomentReport(rows, bounds)
