"""Experiment configuration: one JSON document describes a whole run."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import __version__
from ..descent import DescentParams
from ..errors import ConfigError
from ..estimators import EstimatorParams
from ..initialization import CONFIGURATIONS, InitConfig
from ..model import AdversarySpec, NoiseSpec, Signal
from ..risk import ModelVariant

PIPELINES = ("robust", "naive")
# direction_plant may name this instead of an explicit vector; the harness
# then draws a unit vector orthogonal to each trial's signal
RANDOM_ORTHOGONAL = "random_orthogonal"

_TOP_KEYS = {"n", "signal", "noise", "adversary", "init", "descent", "trials", "seed",
             "output_dir", "variant", "pipeline", "success_threshold", "estimators"}
_INIT_KEYS = {"configuration", "m0", "epsilon", "delta"}
_DESCENT_KEYS = {"T", "m_tilde", "epsilon", "delta", "eta_override", "step_rule"}


def version_string() -> str:
    return f"rpr {__version__}"


@dataclass(frozen=True)
class SignalConfig:
    """Either an explicit ``vector`` or a uniformly random direction of norm ``scale``."""

    kind: str = "random_unit"
    scale: float = 1.0
    vector: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("random_unit", "explicit"):
            raise ConfigError(f"unknown signal kind {self.kind!r}")
        if self.kind == "explicit":
            if self.vector is None:
                raise ConfigError("explicit signal needs a vector")
            object.__setattr__(self, "vector", tuple(float(t) for t in self.vector))
            Signal(np.asarray(self.vector))
        elif not self.scale > 0:
            raise ConfigError("signal scale must be positive")

    def to_dict(self):
        if self.kind == "explicit":
            return {"kind": "explicit", "vector": list(self.vector)}
        return {"kind": "random_unit", "scale": self.scale}


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    signal: SignalConfig = field(default_factory=SignalConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    adversary: dict = field(default_factory=lambda: {"kind": "none", "epsilon": 0.0})
    init: InitConfig = field(default_factory=InitConfig)
    descent: DescentParams = field(default_factory=DescentParams)
    trials: int = 1
    seed: int = 0
    output_dir: Optional[str] = None
    variant: ModelVariant = ModelVariant.ZERO_MEAN
    pipeline: str = "robust"
    success_threshold: float = 0.1
    estimators: EstimatorParams = field(default_factory=EstimatorParams)

    def __post_init__(self):
        object.__setattr__(self, "variant", ModelVariant(self.variant))
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"unknown pipeline {self.pipeline!r}")
        if not self.success_threshold > 0:
            raise ConfigError("success_threshold must be positive")
        if self.signal.kind == "explicit" and len(self.signal.vector) != self.n:
            raise ConfigError("explicit signal has the wrong dimension")
        if self.init.variant is not self.variant or self.descent.variant is not self.variant:
            raise ConfigError("init, descent and experiment variants disagree")
        if self.init.m0 < self.n:
            raise ConfigError("m0 must be at least n")
        # validate the adversary with a stand-in direction
        self.adversary_template()

    @property
    def epsilon(self) -> float:
        return float(self.adversary.get("epsilon", 0.0))

    def adversary_template(self, v=None) -> AdversarySpec:
        d = dict(self.adversary)
        if d.get("kind") == "direction_plant" and (d.get("v") in (None, RANDOM_ORTHOGONAL)):
            if v is None:
                v = np.eye(self.n)[0]
            d["v"] = list(v)
        spec = AdversarySpec.from_dict(d)
        if spec.v is not None and len(spec.v) != self.n:
            raise ConfigError("direction_plant.v has the wrong dimension")
        return spec

    # -- serialisation -------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "n" not in d:
            raise ConfigError("config needs n")
        variant = ModelVariant(d.get("variant", "zero_mean"))
        adversary = dict(d.get("adversary", {"kind": "none", "epsilon": 0.0}))
        adversary.setdefault("epsilon", 0.0)
        eps = float(adversary["epsilon"])

        est_over = dict(d.get("estimators", {}))
        bad = set(est_over) - set(EstimatorParams.TUNABLE)
        if bad:
            raise ConfigError(f"unknown estimator keys {sorted(bad)}")
        est = EstimatorParams(**est_over)

        ini = dict(d.get("init", {}))
        bad = set(ini) - _INIT_KEYS
        if bad:
            raise ConfigError(f"unknown init keys {sorted(bad)}")
        conf = ini.get("configuration", "cov_est")
        conf = {"mean": "mean_est", "cov": "cov_est"}.get(conf, conf)
        if conf not in CONFIGURATIONS:
            raise ConfigError(f"unknown init configuration {conf!r}")
        init = InitConfig(conf, variant, int(ini.get("m0", 5000)), float(ini.get("epsilon", eps)),
                          float(ini.get("delta", 0.01)), est)

        des = dict(d.get("descent", {}))
        bad = set(des) - _DESCENT_KEYS
        if bad:
            raise ConfigError(f"unknown descent keys {sorted(bad)}")
        descent = DescentParams(int(des.get("T", 30)), int(des.get("m_tilde", 2000)),
                                float(des.get("epsilon", eps)), float(des.get("delta", 0.01)),
                                variant, des.get("eta_override"), est,
                                des.get("step_rule", "default"))

        sig = dict(d.get("signal", {"kind": "random_unit", "scale": 1.0}))
        if "vector" in sig and "kind" not in sig:
            sig["kind"] = "explicit"
        bad = set(sig) - {"kind", "scale", "vector"}
        if bad:
            raise ConfigError(f"unknown signal keys {sorted(bad)}")
        signal = SignalConfig(**sig)

        return cls(
            n=int(d["n"]), signal=signal, noise=NoiseSpec.from_dict(d.get("noise", {})),
            adversary=adversary, init=init, descent=descent, trials=int(d.get("trials", 1)),
            seed=int(d.get("seed", 0)), output_dir=d.get("output_dir"), variant=variant,
            pipeline=d.get("pipeline", "robust"),
            success_threshold=float(d.get("success_threshold", 0.1)), estimators=est,
        )

    def to_dict(self) -> dict:
        est_default = EstimatorParams()
        est = {k: getattr(self.estimators, k) for k in EstimatorParams.TUNABLE
               if getattr(self.estimators, k) != getattr(est_default, k)}
        d = {
            "n": self.n,
            "signal": self.signal.to_dict(),
            "noise": self.noise.to_dict(),
            "adversary": _jsonable(self.adversary),
            "init": {"configuration": self.init.configuration, "m0": self.init.m0,
                     "epsilon": self.init.epsilon, "delta": self.init.delta},
            "descent": {"T": self.descent.T, "m_tilde": self.descent.m_tilde,
                        "epsilon": self.descent.epsilon, "delta": self.descent.delta,
                        "eta_override": self.descent.eta_override,
                        "step_rule": self.descent.step_rule},
            "trials": self.trials,
            "seed": self.seed,
            "variant": self.variant.value,
            "pipeline": self.pipeline,
            "success_threshold": self.success_threshold,
            "estimators": est,
        }
        if self.output_dir is not None:
            d["output_dir"] = self.output_dir
        return d

    def config_hash(self) -> str:
        """First 16 hex digits of SHA-256 over the canonical JSON (``output_dir`` excluded)."""
        d = self.to_dict()
        d.pop("output_dir", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with top-level keys changed; dict values are merged into the old ones.

        Init and descent epsilons that equalled the adversary's follow a
        changed adversary epsilon unless they are set explicitly.
        """
        d = self.to_dict()
        old_eps = self.epsilon
        for k, v in changes.items():
            if isinstance(v, dict) and isinstance(d.get(k), dict):
                d[k] = {**d[k], **v}
            else:
                d[k] = v
        new_eps = float(d["adversary"].get("epsilon", 0.0))
        for sub in ("init", "descent"):
            if "epsilon" not in changes.get(sub, {}) and d[sub]["epsilon"] == old_eps:
                d[sub]["epsilon"] = new_eps
        return ExperimentConfig.from_dict(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, NoiseSpec):
        return obj.to_dict()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))
