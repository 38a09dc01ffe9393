"""``rpr`` command line: run, init, solve, verify-moments, sweep."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DegenerateInputError
from ..risk import dist
from .config import ExperimentConfig, load_config, version_string
from .moments import verify_moments
from .runner import initial_point, run, run_trial, trial_adversary, trial_signal, write_trace
from .sweep import load_grid, sweep, write_sweep_csv

VARIANTS = {"zero-mean": "zero_mean", "paired": "paired", "zero_mean": "zero_mean"}


def _add_experiment_flags(p):
    p.add_argument("--experiment", metavar="PATH", help="base experiment JSON; flags override it")
    p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--n", type=int)
    p.add_argument("--sigma", type=float, help="noise standard deviation")
    p.add_argument("--noise-mean", type=float)
    p.add_argument("--noise-family", choices=["gaussian", "student_t", "scaled_pareto", "point_mass_zero"])
    p.add_argument("--adversary", choices=["none", "response_spike", "direction_plant",
                                           "sign_flip_largest", "replace_iid"])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--trial", type=int, default=0, help="trial index whose substreams are used")
    p.add_argument("--config", choices=["mean", "cov"], help="initialization configuration")
    p.add_argument("--m0", type=int, help="initialization sample size")


def _experiment_from_args(args) -> ExperimentConfig:
    if args.experiment:
        with open(args.experiment) as fh:
            d = json.load(fh)
    else:
        d = {"n": 10, "noise": {"family": "gaussian", "sigma": 0.1}}
    d.setdefault("init", {})
    d.setdefault("descent", {})
    d.setdefault("noise", {})
    d.setdefault("adversary", {"kind": "none", "epsilon": 0.0})
    if args.variant:
        d["variant"] = VARIANTS[args.variant]
    if args.n is not None:
        d["n"] = args.n
    if args.sigma is not None:
        d["noise"]["sigma"] = args.sigma
    if args.noise_mean is not None:
        d["noise"]["mean"] = args.noise_mean
    if args.noise_family:
        d["noise"]["family"] = args.noise_family
        if args.noise_family == "student_t":
            d["noise"].setdefault("df", 4.5)
        if args.noise_family == "scaled_pareto":
            d["noise"].setdefault("shape", 4.2)
    if args.adversary:
        d["adversary"]["kind"] = args.adversary
        if args.adversary == "direction_plant":
            d["adversary"].setdefault("v", "random_orthogonal")
    if args.epsilon is not None:
        for sub in ("adversary", "init", "descent"):
            d[sub]["epsilon"] = args.epsilon
    if args.delta is not None:
        d["init"]["delta"] = args.delta
        d["descent"]["delta"] = args.delta
    if args.seed is not None:
        d["seed"] = args.seed
    if getattr(args, "config", None):
        d["init"]["configuration"] = {"mean": "mean_est", "cov": "cov_est"}[args.config]
    if getattr(args, "m0", None) is not None:
        d["init"]["m0"] = args.m0
    for flag, key in (("T", "T"), ("m_tilde", "m_tilde"), ("eta", "eta_override"),
                      ("step_rule", "step_rule")):
        v = getattr(args, flag, None)
        if v is not None:
            d["descent"][key] = v
    return ExperimentConfig.from_dict(d)


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    res = run(cfg, jobs=args.jobs, output_dir=args.output_dir)
    print(json.dumps(res.summary, sort_keys=True, indent=2))
    return 0


def cmd_init(args) -> int:
    cfg = _experiment_from_args(args)
    signal = trial_signal(cfg, args.trial)
    res = initial_point(cfg, args.trial, signal, trial_adversary(cfg, args.trial, signal))
    doc = {
        "version": version_string(),
        "config_hash": cfg.config_hash(),
        "trial": args.trial,
        "x0": res.x0.tolist(),
        "x0_norm": float(np.linalg.norm(res.x0)),
        "scale_sq": res.scale_sq,
        "eigenvalue": res.eigenvalue if np.isfinite(res.eigenvalue) else None,
        "degenerate": res.degenerate,
        "converged": res.converged,
        "removed_total": res.removed_total,
        "dist": dist(res.x0, signal.x_star),
        "relative_dist": dist(res.x0, signal.x_star) / signal.norm,
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


def _load_x0(path):
    with open(path) as fh:
        doc = json.load(fh)
    return np.asarray(doc["x0"] if isinstance(doc, dict) else doc, dtype=float)


def cmd_solve(args) -> int:
    cfg = _experiment_from_args(args)
    x0 = None if args.init == "auto" else _load_x0(args.init)
    if x0 is not None and np.linalg.norm(x0) == 0:
        print("error: initial iterate is zero; descent refuses to start", file=sys.stderr)
        return 2
    rep = run_trial(cfg, args.trial, x0=x0)
    if rep.trace is None:
        print(f"error: {rep.error}", file=sys.stderr)
        return 2
    write_trace(args.out or sys.stdout, cfg, rep)
    print(f"final dist {rep.final_dist:.6g} (relative {rep.final_dist / rep.signal_norm:.6g})",
          file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    xs = np.asarray(args.x_star, dtype=float) if args.x_star else rng.standard_normal(args.n)
    x = np.asarray(args.x, dtype=float) if args.x else rng.standard_normal(xs.size)
    rep = verify_moments(x, xs, args.sigma, args.draws, args.seed + 1)
    print(f"{version_string()} n={xs.size} sigma={args.sigma} draws={args.draws}")
    print(rep.format())
    return 0 if rep.ok else 1


def cmd_sweep(args) -> int:
    base, grid = load_grid(args.grid)
    results = sweep(base, grid, jobs=args.jobs)
    out = args.out or "sweep.csv"
    write_sweep_csv(out, base, grid, results)
    for p in results:
        print(f"point {p.index} {p.values}: plateau median {p.plateau_median:.4g}, "
              f"success {p.success_rate:.2f}" + (f" error {p.error}" if p.error else ""))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rpr", description="Robust phase retrieval experiments.")
    ap.add_argument("--version", action="version", version=version_string())
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run every trial of an experiment JSON")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, help="parallel trials (default RPR_JOBS or 1)")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("init", help="spectral initialization for one trial, as JSON")
    _add_experiment_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("solve", help="robust gradient descent for one trial, trace as CSV")
    _add_experiment_flags(p)
    p.add_argument("--T", type=int)
    p.add_argument("--m-tilde", dest="m_tilde", type=int)
    p.add_argument("--eta", type=float, help="override the step size")
    p.add_argument("--step-rule", choices=["default", "balanced"])
    p.add_argument("--init", default="auto", help="'auto' or a JSON file holding x0")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify-moments", help="Monte-Carlo check of all closed-form moments")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--draws", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x", type=float, nargs="+")
    p.add_argument("--x-star", type=float, nargs="+")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="grid of runs from a JSON {base, grid} file")
    p.add_argument("grid")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DegenerateInputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
