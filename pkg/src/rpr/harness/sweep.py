"""Cartesian parameter sweeps over ``run``."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ..errors import ConfigError
from .config import ExperimentConfig, version_string
from .runner import run_trials

log = logging.getLogger(__name__)

GRID_KEYS = ("epsilon", "sigma", "n", "m_tilde")
SWEEP_COLUMNS = ("point", "epsilon", "sigma", "n", "m_tilde", "trial", "x0_dist", "final_dist",
                 "plateau_dist", "success", "error")


@dataclass
class PointResult:
    index: int
    values: Dict[str, float]
    rows: List[dict]
    plateau_median: float
    final_median: float
    success_rate: float
    error: Optional[str] = None


def apply_point(base: ExperimentConfig, point: Dict[str, float]) -> ExperimentConfig:
    """``base`` with one grid point applied; ``epsilon`` moves adversary, init and descent together."""
    d = base.to_dict()
    if "epsilon" in point:
        e = float(point["epsilon"])
        d["adversary"]["epsilon"] = e
        d["init"]["epsilon"] = e
        d["descent"]["epsilon"] = e
    if "sigma" in point:
        d["noise"]["sigma"] = float(point["sigma"])
    if "n" in point:
        d["n"] = int(point["n"])
    if "m_tilde" in point:
        d["descent"]["m_tilde"] = int(point["m_tilde"])
    return ExperimentConfig.from_dict(d)


def grid_points(grid: Dict[str, list]) -> List[Dict[str, float]]:
    if not grid:
        raise ConfigError("sweep grid is empty")
    bad = set(grid) - set(GRID_KEYS)
    if bad:
        raise ConfigError(f"unknown grid keys {sorted(bad)}")
    keys = [k for k in GRID_KEYS if k in grid]
    for k in keys:
        if not grid[k]:
            raise ConfigError(f"grid axis {k!r} is empty")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _median(vals):
    a = np.array([v if np.isfinite(v) else np.inf for v in vals])
    if a.size == 0:
        return float("nan")
    return float(np.quantile(a, 0.5, method="lower"))


def sweep(base: ExperimentConfig, grid: Dict[str, list], jobs: Optional[int] = None) -> List[PointResult]:
    """Run ``base`` at every grid point with the same seed, so trials are matched across points."""
    results = []
    for i, point in enumerate(grid_points(grid)):
        full = {"epsilon": base.epsilon, "sigma": base.noise.sigma, "n": base.n,
                "m_tilde": base.descent.m_tilde, **point}
        try:
            cfg = apply_point(base, point)
            reports = run_trials(cfg, jobs)
        except (ConfigError, ValueError) as exc:
            log.warning("sweep point %d failed: %s", i, exc)
            results.append(PointResult(i, full, [], float("nan"), float("nan"), 0.0, str(exc)))
            continue
        rows = [{"point": i, **full, "trial": r.trial_index, "x0_dist": r.x0_dist,
                 "final_dist": r.final_dist, "plateau_dist": r.plateau_dist,
                 "success": int(r.success), "error": r.error or ""} for r in reports]
        results.append(PointResult(
            i, full, rows, _median([r.plateau_dist for r in reports]),
            _median([r.final_dist for r in reports]),
            sum(r.success for r in reports) / len(reports)))
    return results


def grid_hash(base: ExperimentConfig, grid) -> str:
    blob = json.dumps({"base": base.config_hash(), "grid": grid}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_sweep_csv(path, base: ExperimentConfig, grid, results: List[PointResult]) -> None:
    """One row per (point, trial) and one ``trial=aggregate`` row per point.

    Aggregate rows hold medians of ``x0_dist``, ``final_dist`` and
    ``plateau_dist`` and the success rate in ``success``.
    """
    with open(path, "w", newline="") as fh:
        fh.write(f"# {version_string()} config_hash={grid_hash(base, grid)}\n")
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for p in results:
            for row in p.rows:
                w.writerow({k: _fmt(row[k]) for k in SWEEP_COLUMNS})
            w.writerow({"point": p.index, **{k: _fmt(v) for k, v in p.values.items()},
                        "trial": "aggregate",
                        "x0_dist": _fmt(_median([r["x0_dist"] for r in p.rows])),
                        "final_dist": _fmt(p.final_median), "plateau_dist": _fmt(p.plateau_median),
                        "success": _fmt(p.success_rate), "error": p.error or ""})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def load_grid(path):
    with open(path) as fh:
        doc = json.load(fh)
    if "base" not in doc or "grid" not in doc:
        raise ConfigError("grid file needs 'base' and 'grid'")
    return ExperimentConfig.from_dict(doc["base"]), doc["grid"]
