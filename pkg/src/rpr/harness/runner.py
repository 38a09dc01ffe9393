"""Seeded end-to-end trials: draw, contaminate, initialise, descend, report."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..baseline import naive_init, naive_mean
from ..descent import DescentTrace, FreshBatchSource, solve
from ..errors import DegenerateInputError
from ..estimators import stable_mean
from ..initialization import spectral_init
from ..model import (PHASE_DESCENT_ADVERSARY, PHASE_DESCENT_DATA, PHASE_INIT_ADVERSARY,
                     PHASE_INIT_DATA, PHASE_SIGNAL, Signal, corrupt, draw_clean, substream)
from ..risk import dist
from .config import RANDOM_ORTHOGONAL, ExperimentConfig, version_string

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("trial", "t", "dist", "grad_norm", "removed_count", "eta", "elapsed_ms")


@dataclass
class TrialReport:
    trial_index: int
    x0_dist: float
    final_dist: float
    plateau_dist: float
    success: bool
    wall_time: float
    init_removed: int = 0
    removed_total: int = 0
    budget_exhausted_steps: int = 0
    ball_excursions: int = 0
    degenerate_init: bool = False
    error: Optional[str] = None
    signal_norm: float = 1.0
    trace: Optional[DescentTrace] = field(default=None, repr=False, compare=False)

    def as_row(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        return d


@dataclass
class RunResult:
    reports: List[TrialReport]
    summary: dict


def plateau(dist_curve) -> float:
    """Median ``dist`` over the last ``ceil(T/4)`` iterates (the whole curve if ``T = 0``)."""
    d = np.asarray(dist_curve, dtype=float)
    if d.size <= 1:
        return float(d[-1])
    k = math.ceil((d.size - 1) / 4)
    return float(np.median(d[-k:]))


def trial_signal(cfg: ExperimentConfig, trial: int) -> Signal:
    if cfg.signal.kind == "explicit":
        return Signal(np.asarray(cfg.signal.vector))
    return Signal.random(cfg.n, cfg.signal.scale, substream(cfg.seed, trial, PHASE_SIGNAL))


def trial_adversary(cfg: ExperimentConfig, trial: int, signal: Signal):
    v = None
    if cfg.adversary.get("kind") == "direction_plant" and cfg.adversary.get("v") in (None, RANDOM_ORTHOGONAL):
        rng = substream(cfg.seed, trial, PHASE_SIGNAL, 1)
        u = signal.x_star / signal.norm
        v = rng.standard_normal(cfg.n)
        v -= (v @ u) * u
        nv = np.linalg.norm(v)
        if nv == 0:
            # n = 1 leaves no orthogonal direction; plant along the signal itself
            v = u
        else:
            v /= nv
    return cfg.adversary_template(v)


def _batch_maker(cfg, trial, signal, adversary, size):
    def make(t: int):
        clean = draw_clean(size, signal, cfg.noise, substream(cfg.seed, trial, PHASE_DESCENT_DATA, t),
                           provenance=(cfg.seed, trial, PHASE_DESCENT_DATA, t))
        return corrupt(clean, adversary, substream(cfg.seed, trial, PHASE_DESCENT_ADVERSARY, t))
    return make


def initial_point(cfg: ExperimentConfig, trial: int, signal: Signal, adversary):
    clean = draw_clean(cfg.init.raw_size, signal, cfg.noise, substream(cfg.seed, trial, PHASE_INIT_DATA),
                       provenance=(cfg.seed, trial, PHASE_INIT_DATA, 0))
    batch = corrupt(clean, adversary, substream(cfg.seed, trial, PHASE_INIT_ADVERSARY))
    init_fn = spectral_init if cfg.pipeline == "robust" else naive_init
    return init_fn(batch, cfg.init)


def run_trial(cfg: ExperimentConfig, trial: int, x0=None) -> TrialReport:
    """One seeded trial. ``x0`` replaces the spectral initialization when given."""
    t0 = time.perf_counter()
    signal = trial_signal(cfg, trial)
    adversary = trial_adversary(cfg, trial, signal)
    nan = float("nan")
    init_removed = 0
    try:
        if x0 is None:
            res = initial_point(cfg, trial, signal, adversary)
            init_removed = res.removed_total
            if res.degenerate:
                return TrialReport(trial, dist(res.x0, signal.x_star), nan, nan, False,
                                   time.perf_counter() - t0, init_removed, degenerate_init=True,
                                   error="initial scale estimate was negative",
                                   signal_norm=signal.norm)
            x0 = res.x0
        x0 = np.asarray(x0, dtype=float)
        source = FreshBatchSource(_batch_maker(cfg, trial, signal, adversary, cfg.descent.raw_batch_size),
                                  limit=cfg.descent.T)
        mean_fn = stable_mean if cfg.pipeline == "robust" else naive_mean
        with np.errstate(over="ignore", invalid="ignore"):
            trace = solve(x0, source, cfg.descent, x_star=signal.x_star, mean_estimator=mean_fn)
    except (DegenerateInputError, np.linalg.LinAlgError) as exc:
        log.warning("trial %d failed: %s", trial, exc)
        return TrialReport(trial, nan, nan, nan, False, time.perf_counter() - t0, init_removed,
                           error=f"{type(exc).__name__}: {exc}", signal_norm=signal.norm)
    final = trace.dist_curve[-1]
    if trace.ball_excursions:
        log.info("trial %d left the contraction ball at %d iterates", trial, len(trace.ball_excursions))
    ok = bool(np.isfinite(final) and final / signal.norm <= cfg.success_threshold)
    return TrialReport(
        trial, trace.dist_curve[0], float(final), plateau(trace.dist_curve), ok,
        time.perf_counter() - t0, init_removed,
        sum(r.removed_count for r in trace.per_iter_filter_reports),
        sum(r.budget_exhausted for r in trace.per_iter_filter_reports),
        len(trace.ball_excursions), signal_norm=signal.norm, trace=trace,
    )


def _run_trial_star(args):
    return run_trial(*args)


def resolve_jobs(jobs: Optional[int]) -> int:
    if jobs is None:
        jobs = int(os.environ.get("RPR_JOBS", "1") or 1)
    return max(1, int(jobs))


def run_trials(cfg: ExperimentConfig, jobs: Optional[int] = None) -> List[TrialReport]:
    jobs = resolve_jobs(jobs)
    args = [(cfg, t) for t in range(cfg.trials)]
    if jobs == 1 or cfg.trials == 1:
        reports = [run_trial(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_trial_star, args))
    return sorted(reports, key=lambda r: r.trial_index)


def _finite_or_none(v):
    v = float(v)
    return v if math.isfinite(v) else None


def summarize(cfg: ExperimentConfig, reports: List[TrialReport]) -> dict:
    finals = np.array([r.final_dist if np.isfinite(r.final_dist) else np.inf for r in reports])
    plateaus = np.array([r.plateau_dist if np.isfinite(r.plateau_dist) else np.inf for r in reports])
    q = lambda a, p: _finite_or_none(np.quantile(a, p, method="lower"))
    return {
        "config_hash": cfg.config_hash(),
        "version": version_string(),
        "trials": len(reports),
        "success_rate": sum(r.success for r in reports) / len(reports),
        "dist_median": q(finals, 0.5),
        "dist_q10": q(finals, 0.1),
        "dist_q90": q(finals, 0.9),
        "plateau_median": q(plateaus, 0.5),
        "failed_trials": sum(r.error is not None for r in reports),
        "delta_total": cfg.descent.T * cfg.descent.delta + cfg.init.delta,
        "success_threshold": cfg.success_threshold,
    }


def write_trace(dest, cfg: ExperimentConfig, report: TrialReport) -> None:
    """Trace CSV for one trial; ``dest`` is a path or an open text stream.

    Row ``t = 0`` is the initial iterate and has an empty ``grad_norm``.
    """
    if hasattr(dest, "write"):
        _write_trace_rows(dest, cfg, report)
        return
    with open(dest, "w", newline="") as fh:
        _write_trace_rows(fh, cfg, report)


def _write_trace_rows(fh, cfg, report):
    fh.write(f"# {version_string()} config_hash={cfg.config_hash()}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    tr = report.trace
    if tr is None:
        return
    for t, d in enumerate(tr.dist_curve):
        if t == 0:
            w.writerow([report.trial_index, 0, repr(d), "", 0, repr(tr.eta), "0.0"])
        else:
            w.writerow([report.trial_index, t, repr(d), repr(tr.grad_norms[t - 1]),
                        tr.per_iter_filter_reports[t - 1].removed_count, repr(tr.eta),
                        f"{tr.elapsed_ms[t - 1]:.3f}"])


def write_summary(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")


def run(cfg: ExperimentConfig, jobs: Optional[int] = None, output_dir=None) -> RunResult:
    """Run every trial and, when an output directory is set, write traces and ``summary.json``."""
    reports = run_trials(cfg, jobs)
    summary = summarize(cfg, reports)
    out = output_dir if output_dir is not None else cfg.output_dir
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for r in reports:
            write_trace(out / f"trace_trial{r.trial_index:03d}.csv", cfg, r)
        write_summary(out / "summary.json", summary)
    return RunResult(reports, summary)
