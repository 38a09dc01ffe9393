"""Data generation for robust phase retrieval.

Clean measurements follow ``y = (a^T x*)^2 + z`` with ``a ~ N(0, I_n)`` and
noise ``z`` independent of ``a``. An adversary then replaces a fraction of
each batch, and :func:`pair_transform` turns a batch of ``2m`` samples into
``m`` differenced triples whose noise has mean zero whatever the original
noise mean was.
"""
from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError

NOISE_FAMILIES = ("gaussian", "student_t", "scaled_pareto", "point_mass_zero")
ADVERSARY_KINDS = ("none", "response_spike", "direction_plant", "sign_flip_largest", "replace_iid")

# phase codes for substream derivation
PHASE_SIGNAL = 0
PHASE_INIT_DATA = 1
PHASE_INIT_ADVERSARY = 2
PHASE_DESCENT_DATA = 3
PHASE_DESCENT_ADVERSARY = 4


def stream_key(seed: int, trial: int = 0, phase: int = 0, batch: int = 0) -> int:
    """Stable 64-bit stream index for ``(seed, trial, phase, batch)``.

    The four integers are packed little-endian as unsigned 64-bit words and
    hashed with BLAKE2b (8-byte digest). The digest is the seed of the
    returned stream, so the mapping never depends on numpy internals beyond
    ``default_rng``.
    """
    mask = (1 << 64) - 1
    packed = struct.pack("<4Q", seed & mask, trial & mask, phase & mask, batch & mask)
    return int.from_bytes(hashlib.blake2b(packed, digest_size=8).digest(), "little")


def substream(seed: int, trial: int = 0, phase: int = 0, batch: int = 0) -> np.random.Generator:
    return np.random.default_rng(stream_key(seed, trial, phase, batch))


@dataclass(frozen=True)
class Signal:
    x_star: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_star, dtype=float).reshape(-1)
        if x.size < 1:
            raise ConfigError("signal must have dimension n >= 1")
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) == 0:
            raise ConfigError("signal must be finite with nonzero norm")
        object.__setattr__(self, "x_star", x)

    @property
    def n(self) -> int:
        return self.x_star.size

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.x_star))

    def snr(self, sigma: float) -> float:
        """Variance-form signal-to-noise ratio ``||x*||^2 / sigma``."""
        return math.inf if sigma == 0 else self.norm**2 / sigma

    @classmethod
    def random(cls, n: int, scale: float, rng: np.random.Generator) -> "Signal":
        v = rng.standard_normal(n)
        return cls(scale * v / np.linalg.norm(v))


@dataclass(frozen=True)
class NoiseSpec:
    """Noise law with mean ``mean`` and standard deviation ``sigma``.

    ``df`` is the Student-t degrees of freedom and ``shape`` the Pareto tail
    index; both laws are standardised before being shifted and scaled, and
    both must exceed 4 so the central fourth moment is finite.
    """

    family: str = "gaussian"
    mean: float = 0.0
    sigma: float = 0.0
    df: Optional[float] = None
    shape: Optional[float] = None

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ConfigError(f"unknown noise family {self.family!r}")
        if not self.sigma >= 0:
            raise ConfigError("noise sigma must be nonnegative")
        if self.family == "student_t" and not (self.df is not None and self.df > 4):
            raise ConfigError("student_t noise needs df > 4 for a finite fourth moment")
        if self.family == "scaled_pareto" and not (self.shape is not None and self.shape > 4):
            raise ConfigError("scaled_pareto noise needs shape > 4 for a finite fourth moment")
        if self.family == "point_mass_zero" and (self.mean != 0 or self.sigma != 0):
            raise ConfigError("point_mass_zero noise has mean 0 and sigma 0")

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.family == "point_mass_zero":
            return np.zeros(size)
        if self.family == "gaussian":
            std = rng.standard_normal(size)
        elif self.family == "student_t":
            std = rng.standard_t(self.df, size) * math.sqrt((self.df - 2) / self.df)
        else:
            a = self.shape
            # classical Pareto with x_m = 1 is 1 + Lomax(a)
            raw = 1.0 + rng.pareto(a, size)
            mu = a / (a - 1)
            sd = math.sqrt(a / ((a - 1) ** 2 * (a - 2)))
            std = (raw - mu) / sd
        return self.mean + self.sigma * std

    def central_fourth_moment(self) -> float:
        """``K_4^4 = E[(z - E z)^4]``."""
        s4 = self.sigma**4
        if self.family == "point_mass_zero":
            return 0.0
        if self.family == "gaussian":
            return 3.0 * s4
        if self.family == "student_t":
            return s4 * (3.0 + 6.0 / (self.df - 4))
        a = self.shape
        excess = 6.0 * (a**3 + a**2 - 6 * a - 2) / (a * (a - 3) * (a - 4))
        return s4 * (3.0 + excess)

    def to_dict(self) -> dict:
        d = {"family": self.family, "mean": self.mean, "sigma": self.sigma}
        if self.df is not None:
            d["df"] = self.df
        if self.shape is not None:
            d["shape"] = self.shape
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        unknown = set(d) - {"family", "mean", "sigma", "df", "shape"}
        if unknown:
            raise ConfigError(f"unknown noise keys {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class AdversarySpec:
    """Contamination strategy.

    kind-specific fields: ``magnitude`` (response_spike), ``v`` and ``scale``
    (direction_plant), ``a_scale`` and ``alt_noise`` (replace_iid, whose
    replacements have ``a ~ N(0, a_scale^2 I)`` and a response drawn from
    ``alt_noise`` independently of ``a``).
    """

    kind: str = "none"
    epsilon: float = 0.0
    magnitude: float = 1e3
    v: Optional[tuple] = None
    scale: float = 10.0
    a_scale: float = 1.0
    alt_noise: Optional[NoiseSpec] = None

    def __post_init__(self):
        if self.kind not in ADVERSARY_KINDS:
            raise ConfigError(f"unknown adversary kind {self.kind!r}")
        if not 0 <= self.epsilon < 0.5:
            raise ConfigError("epsilon must lie in [0, 1/2)")
        if self.kind == "direction_plant":
            if self.v is None:
                raise ConfigError("direction_plant needs a unit vector v")
            v = np.asarray(self.v, dtype=float)
            if abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise ConfigError("direction_plant.v must have unit norm")
            object.__setattr__(self, "v", tuple(float(t) for t in v))
        if self.kind == "replace_iid" and self.alt_noise is None:
            object.__setattr__(self, "alt_noise", NoiseSpec("gaussian", 0.0, 1.0))

    def count(self, m: int) -> int:
        if self.kind == "none":
            return 0
        return math.floor(self.epsilon * m)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "epsilon": self.epsilon}
        if self.kind == "response_spike":
            d["magnitude"] = self.magnitude
        elif self.kind == "direction_plant":
            d["v"] = list(self.v)
            d["scale"] = self.scale
        elif self.kind == "replace_iid":
            d["a_scale"] = self.a_scale
            d["alt_noise"] = self.alt_noise.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AdversarySpec":
        d = dict(d)
        unknown = set(d) - {"kind", "epsilon", "magnitude", "v", "scale", "a_scale", "alt_noise"}
        if unknown:
            raise ConfigError(f"unknown adversary keys {sorted(unknown)}")
        if isinstance(d.get("alt_noise"), dict):
            d["alt_noise"] = NoiseSpec.from_dict(d["alt_noise"])
        if d.get("v") is not None:
            d["v"] = tuple(d["v"])
        return cls(**d)


@dataclass(frozen=True)
class Sample:
    a: np.ndarray
    y: float
    corrupted: bool = False


@dataclass(frozen=True)
class PairedSample:
    b: np.ndarray
    c: np.ndarray
    upsilon: float
    corrupted: bool = False


@dataclass
class Batch:
    """``m`` measurements stored row-wise: ``a[j]`` is the j-th covariate.

    ``corrupted`` is diagnostic bookkeeping for evaluation only.
    """

    a: np.ndarray
    y: np.ndarray
    corrupted: np.ndarray = None
    seed_provenance: Optional[tuple] = None

    def __post_init__(self):
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.a.shape[0] != self.y.shape[0]:
            raise ValueError("a and y must have the same number of samples")
        if self.corrupted is None:
            self.corrupted = np.zeros(self.y.shape[0], dtype=bool)
        self.corrupted = np.asarray(self.corrupted, dtype=bool)

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.a.shape[1]

    def __len__(self):
        return self.m

    def __getitem__(self, j) -> Sample:
        return Sample(self.a[j], float(self.y[j]), bool(self.corrupted[j]))

    def dump_csv(self, path) -> None:
        """Debug dump, one sample per row: index, corrupted, y, a_0..a_{n-1}."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "corrupted", "y"] + [f"a_{i}" for i in range(self.n)])
            for j in range(self.m):
                w.writerow([j, int(self.corrupted[j]), repr(float(self.y[j]))]
                           + [repr(float(t)) for t in self.a[j]])


@dataclass
class PairedBatch:
    b: np.ndarray
    c: np.ndarray
    upsilon: np.ndarray
    corrupted: np.ndarray = None
    seed_provenance: Optional[tuple] = None

    def __post_init__(self):
        self.b = np.atleast_2d(np.asarray(self.b, dtype=float))
        self.c = np.atleast_2d(np.asarray(self.c, dtype=float))
        self.upsilon = np.asarray(self.upsilon, dtype=float).reshape(-1)
        if not (self.b.shape == self.c.shape and self.b.shape[0] == self.upsilon.shape[0]):
            raise ValueError("b, c and upsilon disagree in shape")
        if self.corrupted is None:
            self.corrupted = np.zeros(self.upsilon.shape[0], dtype=bool)
        self.corrupted = np.asarray(self.corrupted, dtype=bool)

    @property
    def m(self) -> int:
        return self.upsilon.shape[0]

    @property
    def n(self) -> int:
        return self.b.shape[1]

    def __len__(self):
        return self.m

    def __getitem__(self, j) -> PairedSample:
        return PairedSample(self.b[j], self.c[j], float(self.upsilon[j]), bool(self.corrupted[j]))


def draw_clean(m: int, signal: Signal, noise: NoiseSpec, rng: np.random.Generator,
               provenance: Optional[tuple] = None) -> Batch:
    """Draw ``m`` clean samples ``y = (a^T x*)^2 + z``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    a = rng.standard_normal((m, signal.n))
    z = noise.sample(m, rng)
    y = (a @ signal.x_star) ** 2 + z
    return Batch(a, y, np.zeros(m, dtype=bool), provenance)


def corrupt(batch: Batch, adversary: AdversarySpec, rng: np.random.Generator) -> Batch:
    """Replace ``floor(epsilon * m)`` samples and shuffle the result.

    ``direction_plant`` and ``sign_flip_largest`` look at the clean batch
    before choosing what to replace.
    """
    m, n = batch.a.shape
    if m == 0:
        raise ValueError("cannot corrupt an empty batch")
    a = batch.a.copy()
    y = batch.y.copy()
    flags = batch.corrupted.copy()
    k = adversary.count(m)
    if k > 0:
        kind = adversary.kind
        if kind == "sign_flip_largest":
            idx = np.argsort(-y, kind="stable")[:k]
            y[idx] = -y[idx]
        else:
            idx = rng.choice(m, size=k, replace=False)
            if kind == "response_spike":
                y[idx] = adversary.magnitude
            elif kind == "direction_plant":
                v = np.asarray(adversary.v)
                if v.size != n:
                    raise ConfigError("direction_plant.v has the wrong dimension")
                L = adversary.scale
                a[idx] = L * v
                y[idx] = L**2
            elif kind == "replace_iid":
                a[idx] = adversary.a_scale * rng.standard_normal((k, n))
                y[idx] = adversary.alt_noise.sample(k, rng)
        flags[idx] = True
    perm = rng.permutation(m)
    return Batch(a[perm], y[perm], flags[perm], batch.seed_provenance)


def pair_transform(batch: Batch) -> PairedBatch:
    """Difference sample ``j`` against sample ``m + j``.

    ``b = (a_j + a_{m+j})/sqrt(2)``, ``c = (a_j - a_{m+j})/sqrt(2)`` and
    ``upsilon = (y_j - y_{m+j})/2``; a triple is flagged if either parent is.
    """
    if batch.m % 2:
        raise ValueError("pair_transform needs an even batch size")
    m = batch.m // 2
    a1, a2 = batch.a[:m], batch.a[m:]
    r2 = math.sqrt(2.0)
    return PairedBatch(
        (a1 + a2) / r2,
        (a1 - a2) / r2,
        (batch.y[:m] - batch.y[m:]) / 2.0,
        batch.corrupted[:m] | batch.corrupted[m:],
        batch.seed_provenance,
    )
