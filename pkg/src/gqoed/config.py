"""Experiment configuration: nested dataclasses with YAML round-trip and validation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

PROBLEMS = ("example1", "example2")
METHODS = ("aopt", "gell", "gq")
ESTIMATORS = ("spectral", "svd", "randomized", "dense")


class ConfigError(ValueError):
    pass


@dataclass
class Bump:
    center: list = field(default_factory=lambda: [0.5, 0.5])
    width: float = 0.1
    amplitude: float = 1.0


@dataclass
class PriorConfig:
    a1: float = 0.8
    a2: float = 0.0625
    mean: float = 4.0


@dataclass
class KappaConfig:
    """Horizontal channel of higher permeability."""

    center: float = 0.5
    width: float = 0.12
    contrast: float = 10.0
    low: float = 0.1


@dataclass
class GoalConfig:
    rectangles: list = field(default_factory=lambda: [[0.55, 0.85, 0.15, 0.45]])
    alpha: float = 0.1
    velocity: list = field(default_factory=lambda: [0.1, -0.1])
    kappa: KappaConfig = field(default_factory=KappaConfig)
    source: Bump = field(default_factory=lambda: Bump([0.2, 0.55], 0.08, 10.0))
    p_left: float = 0.5


@dataclass
class CriterionConfig:
    estimator: str = "spectral"
    rank: int = 50
    probes: int = 20
    seed: int = 0


@dataclass
class ExpansionConfig:
    policy: str = "prior_mean"
    count: int = 0
    seed: int = 11


@dataclass
class TruthConfig:
    baseline: float = 0.0
    bumps: list = field(default_factory=lambda: [
        Bump([0.3, 0.7], 0.12, 8.0), Bump([0.7, 0.35], 0.15, 6.0)])


@dataclass
class ExperimentConfig:
    problem: str = "example1"
    mesh_n: int = 16
    sensors_per_side: int = 7
    sensor_margin: float = 0.1
    sigma2: float = 1e-4
    prior: PriorConfig = field(default_factory=PriorConfig)
    goal: GoalConfig = field(default_factory=GoalConfig)
    criterion: CriterionConfig = field(default_factory=CriterionConfig)
    methods: list = field(default_factory=lambda: list(METHODS))
    design_sizes: list = field(default_factory=lambda: list(range(3, 11)))
    expansion: ExpansionConfig = field(default_factory=ExpansionConfig)
    m_true: TruthConfig = field(default_factory=TruthConfig)
    posterior_samples: int = 10000
    random_designs: int = 20
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        for name in ("mesh_n", "sensors_per_side"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name} must be at least 2")
        positive = {"sigma2": self.sigma2, "prior.a1": self.prior.a1, "prior.a2": self.prior.a2,
                    "goal.alpha": self.goal.alpha, "goal.kappa.width": self.goal.kappa.width,
                    "goal.kappa.contrast": self.goal.kappa.contrast,
                    "goal.kappa.low": self.goal.kappa.low, "goal.source.width": self.goal.source.width}
        for name, val in positive.items():
            if not val > 0:
                raise ConfigError(f"{name} must be positive, got {val}")
        if not 0 <= self.sensor_margin < 0.5:
            raise ConfigError("sensor_margin must lie in [0, 0.5)")
        for rect in self.goal.rectangles:
            if len(rect) != 4:
                raise ConfigError(f"rectangle {rect} must be [x0, x1, y0, y1]")
            x0, x1, y0, y1 = rect
            if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
                raise ConfigError(f"rectangle {rect} must lie inside the unit square")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if self.criterion.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}")
        if self.criterion.rank < 1 or self.criterion.probes < 1:
            raise ConfigError("criterion rank and probes must be positive")
        d = self.sensors_per_side ** 2
        for k in self.design_sizes:
            if not 1 <= k <= d:
                raise ConfigError(f"design size {k} outside [1, {d}]")
        if self.expansion.policy not in ("prior_mean", "prior_samples"):
            raise ConfigError("expansion.policy must be prior_mean or prior_samples")
        if self.expansion.count < 0 or self.posterior_samples < 0 or self.random_designs < 0:
            raise ConfigError("counts must be non-negative")
        return self

    @property
    def d(self) -> int:
        return self.sensors_per_side ** 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ExperimentConfig":
        return _build(cls, data or {}, "").validate()

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(yaml.safe_load(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())


_NESTED = {"prior": PriorConfig, "goal": GoalConfig, "criterion": CriterionConfig,
           "expansion": ExpansionConfig, "m_true": TruthConfig, "kappa": KappaConfig,
           "source": Bump}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {where or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for key, val in data.items():
        sub = _NESTED.get(key)
        if sub is not None and isinstance(val, dict):
            val = _build(sub, val, f"{where}{key}.")
        elif key == "bumps":
            val = [_build(Bump, b, f"{where}bumps.") for b in val]
        kwargs[key] = val
    return cls(**kwargs)


def example1_defaults(**overrides) -> ExperimentConfig:
    return dataclasses.replace(ExperimentConfig(), **overrides).validate()


def example2_defaults(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(
        problem="example2", sigma2=1e-5, prior=PriorConfig(0.8, 0.04, 4.0),
        goal=GoalConfig(rectangles=[[0.18, 0.32, 0.46, 0.68], [0.54, 0.75, 0.39, 0.75]],
                        alpha=0.12, velocity=[0.0, 0.0]),
        expansion=ExpansionConfig("prior_samples", 4, 11),
        m_true=TruthConfig(0.0, [Bump([0.3, 0.3], 0.12, 8.0), Bump([0.65, 0.7], 0.1, 6.0)]),
    )
    return dataclasses.replace(cfg, **overrides).validate()
