"""Experiment configuration: YAML files validated by a strict pydantic schema.

Unknown keys are rejected everywhere (``extra="forbid"``), so a misspelt
tolerance fails loudly with its field path instead of silently taking a
default.  Builders turn a validated config into map sequences and
pulled-back systems.
"""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import maps

__all__ = [
    "ConfigError", "ExperimentConfig", "load_config", "bundled_config", "bundled_names",
    "config_hash", "build_sequence", "build_system", "build_gibbs", "parse_complex",
]


class ConfigError(ValueError):
    """Configuration could not be parsed or validated."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------------------
# system
# ---------------------------------------------------------------------------

class StageSpec(_Strict):
    type: Literal["doubling", "tent", "triple", "markov_w", "mobius_distorted",
                  "full_shift", "golden_mean", "random_sft", "sft"]
    b: float = 0.5                              # mobius_distorted
    d: int = Field(2, ge=1)                     # full_shift
    potential: float | list[list[float]] | None = None
    adjacency: list[list[int]] | None = None    # random_sft, sft
    scale: float = Field(0.5, ge=0)             # random_sft
    seed: int = 0                               # random_sft

    @model_validator(mode="after")
    def _needs_adjacency(self):
        if self.type in ("random_sft", "sft") and self.adjacency is None:
            raise ValueError(f"stage type {self.type!r} needs 'adjacency'")
        if self.type == "sft" and not isinstance(self.potential, list):
            raise ValueError("stage type 'sft' needs a 'potential' table")
        return self


class ScheduleSpec(_Strict):
    kind: Literal["periodic", "explicit", "seeded"] = "periodic"
    pattern: list[int] = [0]
    seed: int = 0


class TrigTerms(_Strict):
    const: float = 0.0
    cos: list[tuple[int, float]] = []
    sin: list[tuple[int, float]] = []


class ObservableSpec(_Strict):
    type: Literal["trig", "poly", "coboundary", "symbol"]
    const: float = 0.0
    cos: list[tuple[int, float]] = []
    sin: list[tuple[int, float]] = []
    coeffs: list[float] = []
    values: list[float] = []
    v: TrigTerms | None = None                  # coboundary transfer function
    extra: TrigTerms | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.type == "coboundary" and self.v is None:
            raise ValueError("coboundary observable needs 'v'")
        if self.type == "symbol" and not self.values:
            raise ValueError("symbol observable needs 'values'")
        return self


class SystemSpec(_Strict):
    kind: Literal["interval", "sft"]
    family: list[StageSpec] = Field(min_length=1)
    schedule: ScheduleSpec = ScheduleSpec()
    observables: list[ObservableSpec] = Field(min_length=1)
    observable_schedule: ScheduleSpec | None = None
    mixing_horizon: int = Field(1, ge=1)
    grid: int = Field(4096, ge=2)               # interval: G
    order: int = Field(5, ge=1, le=9)           # interval: interpolation order
    initial_density: TrigTerms | None = None    # interval: rho_0 (normalised)
    window: tuple[int, int] = (0, 1100)         # sft: Gibbs window
    burn_in: int = Field(60, ge=0)
    depth: int = Field(2, ge=1)                 # sft: word depth of function tables

    @model_validator(mode="after")
    def _check(self):
        sch = self.schedule
        if sch.kind != "seeded" and any(p < 0 or p >= len(self.family) for p in sch.pattern):
            raise ValueError("schedule references a missing stage")
        if self.window[1] <= self.window[0]:
            raise ValueError("window must be increasing")
        kinds = {"interval" if s.type in ("doubling", "tent", "triple", "markov_w", "mobius_distorted")
                 else "sft" for s in self.family}
        if kinds != {self.kind}:
            raise ValueError(f"family stages do not match system kind {self.kind!r}")
        return self


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------

def _increasing(v):
    if any(b <= a for a, b in zip(v, v[1:])):
        raise ValueError("n_list must be strictly increasing")
    if v and v[0] < 1:
        raise ValueError("n_list entries must be >= 1")
    return v


class RpfStage(_Strict):
    stage: Literal["rpf"]
    samples: int = Field(20, ge=1)
    n_max: int = Field(40, ge=6)
    equivariance_tol: float = Field(1e-8, gt=0)
    rate_max: float = Field(0.9, gt=0)
    r2_min: float = Field(0.98, gt=0)


class GibbsStage(_Strict):
    stage: Literal["gibbs"]
    depth_max: int = Field(12, ge=1)
    tol: float = Field(1e-10, gt=0)
    drift_tol: float = Field(1e-8, gt=0)


class MartingaleStage(_Strict):
    stage: Literal["martingale"]
    window: tuple[int, int] = (0, 200)
    n_max: int = Field(10_000, ge=4)
    residual_tol: float = Field(1e-8, gt=0)
    reconstruction_tol: float = Field(1e-10, gt=0)
    dichotomy_tol: float = Field(1e-6, gt=0)


class CumulantStage(_Strict):
    stage: Literal["cumulant"]
    z_list: list[tuple[float, float]] = [(0.02, 0.0), (0.05, 0.0), (0.0, 0.05)]
    j_list: list[int] = [0, 10, 50, 100]
    n_max: int = Field(400, ge=4)
    slope_tol: float = Field(1e-4, gt=0)
    growth_n: list[int] = []
    growth_k: list[int] = [3, 4]
    delta: float = Field(0.05, gt=0)
    growth_slope_tol: float = Field(0.1, gt=0)

    @field_validator("growth_n")
    @classmethod
    def _n(cls, v):
        return _increasing(v)


class LimitsStage(_Strict):
    stage: Literal["limits"]
    n_list: list[int] = [2 ** k for k in range(4, 13)]
    N: int = Field(1_000_000, ge=1)
    slope_window: tuple[float, float] = (-1.35, -0.65)
    moment_slope_tol: float = Field(0.05, gt=0)
    workers: int = Field(1, ge=1)

    @field_validator("n_list")
    @classmethod
    def _n(cls, v):
        return _increasing(v)


class AsipStage(_Strict):
    stage: Literal["asip"]
    B: float = Field(25.0, gt=0)
    n_list: list[int] = [256, 512, 1024, 2048]
    k_max: int = Field(8, ge=2)
    band_max: float = Field(3.0, gt=1)
    r2_min: float = Field(0.95, gt=0)
    gouzel: bool = False
    gouzel_k: int = Field(30, ge=2)

    @field_validator("n_list")
    @classmethod
    def _n(cls, v):
        return _increasing(v)


PipelineStage = Annotated[Union[RpfStage, GibbsStage, MartingaleStage, CumulantStage, LimitsStage, AsipStage],
                          Field(discriminator="stage")]


class ExperimentConfig(_Strict):
    name: str
    seed: int = Field(0, ge=0, lt=2 ** 64)
    system: SystemSpec
    pipeline: list[PipelineStage] = []
    output: str | None = None

    @model_validator(mode="after")
    def _check(self):
        names = [s.stage for s in self.pipeline]
        if len(set(names)) != len(names):
            raise ValueError("pipeline stages must be unique")
        if self.system.kind == "interval" and "gibbs" in names:
            raise ValueError("the gibbs stage needs an SFT system")
        return self

    def stage(self, name):
        for s in self.pipeline:
            if s.stage == name:
                return s
        return None


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"])
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        bundled = bundled_names()
        if str(path) in bundled:
            return bundled_config(str(path))
        raise ConfigError(f"config file {path} not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"YAML parse error: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError("top level of a config must be a mapping")
    return parse_config(data)


def bundled_names() -> list:
    root = resources.files("seqlimits") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_config(name: str) -> ExperimentConfig:
    root = resources.files("seqlimits") / "configs"
    f = root / f"{name}.yaml"
    if not f.is_file():
        raise ConfigError(f"no bundled config {name!r}")
    return parse_config(yaml.safe_load(f.read_text()))


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_complex(pair) -> complex:
    return complex(float(pair[0]), float(pair[1]))


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def _stage(spec: StageSpec):
    t = spec.type
    if t == "doubling":
        return maps.doubling()
    if t == "tent":
        return maps.tent()
    if t == "triple":
        return maps.triple()
    if t == "markov_w":
        return maps.markov_w()
    if t == "mobius_distorted":
        return maps.mobius_distorted(spec.b)
    if t == "full_shift":
        return maps.full_shift(spec.d, spec.potential)
    if t == "golden_mean":
        return maps.golden_mean(spec.potential)
    if t == "random_sft":
        return maps.random_sft_stage(np.random.default_rng(spec.seed), spec.adjacency, spec.scale,
                                     f"random{spec.seed}")
    return maps.SftStage(np.asarray(spec.adjacency, dtype=np.int8), np.asarray(spec.potential, dtype=float), "sft")


def _trig(t: TrigTerms | None):
    if t is None:
        return None
    return maps.TrigObservable(t.const, tuple(map(tuple, t.cos)), tuple(map(tuple, t.sin)))


def _observable(spec: ObservableSpec):
    if spec.type == "trig":
        return maps.TrigObservable(spec.const, tuple(map(tuple, spec.cos)), tuple(map(tuple, spec.sin)))
    if spec.type == "poly":
        return maps.PolyObservable(tuple(spec.coeffs))
    if spec.type == "coboundary":
        return maps.CoboundaryObservable(_trig(spec.v), _trig(spec.extra))
    return maps.SymbolObservable(tuple(spec.values))


def _schedule(spec: ScheduleSpec | None, size: int):
    if spec is None:
        return None
    return maps.Schedule(spec.kind, tuple(spec.pattern) if spec.kind != "seeded" else (), spec.seed, size)


def build_sequence(cfg: ExperimentConfig) -> maps.MapSequence:
    s = cfg.system
    fam = tuple(_stage(f) for f in s.family)
    obs = tuple(_observable(o) for o in s.observables)
    return maps.MapSequence(fam, _schedule(s.schedule, len(fam)), obs,
                            _schedule(s.observable_schedule, len(obs)), s.mixing_horizon, cfg.name)


def build_gibbs(cfg: ExperimentConfig, seq=None):
    from .gibbs import build
    seq = build_sequence(cfg) if seq is None else seq
    return build(seq, cfg.system.window, cfg.system.burn_in)


def build_system(cfg: ExperimentConfig, seq=None, grid: int | None = None):
    """Pulled-back system: interval grid operators with rho_0, or the Gibbs word system."""
    from .transfer import IntervalSystem, PulledBack
    seq = build_sequence(cfg) if seq is None else seq
    s = cfg.system
    if s.kind == "interval":
        raw = IntervalSystem(seq, grid or s.grid, s.order)
        rho0 = None
        if s.initial_density is not None:
            rho0 = _trig(s.initial_density)(raw.nodes(0))
        return PulledBack(raw, rho0)
    from .gibbs import GibbsWordSystem
    return GibbsWordSystem(build_gibbs(cfg, seq), s.depth)
