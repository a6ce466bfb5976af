"""Fitting configuration and its JSON form."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .robust import RobustEstimator

BLOCKS = ("translation", "root", "body", "betas")

HALF_PI = math.pi / 2.0


class ConfigError(ValueError):
    """Invalid fit configuration; the message names the field."""


@dataclass(frozen=True)
class StageConfig:
    name: str
    blocks: tuple[str, ...]
    estimator: RobustEstimator
    max_iterations: int
    gradient_tolerance: float = 1e-6
    priors: bool = True
    temporal: bool = True
    first_frame_iterations: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for b in self.blocks:
            if b not in BLOCKS:
                raise ConfigError(f"stage {self.name}: unknown variable block {b!r}")
        if self.max_iterations < 0:
            raise ConfigError(f"stage {self.name}: max_iterations must be >= 0")
        if not self.gradient_tolerance > 0:
            raise ConfigError(f"stage {self.name}: gradient_tolerance must be > 0")

    def iterations_for(self, frame: int) -> int:
        if frame == 0 and self.first_frame_iterations is not None:
            return self.first_frame_iterations
        return self.max_iterations


def default_stages() -> tuple[StageConfig, ...]:
    return (
        StageConfig("rigid", ("translation", "root"), RobustEstimator("none"), 30,
                    priors=False, temporal=False, first_frame_iterations=100),
        StageConfig("full", ("translation", "root", "body", "betas"),
                    RobustEstimator("geman_mcclure", c=20.0), 60, first_frame_iterations=300),
        StageConfig("refine", ("translation", "root", "body"), RobustEstimator("huber", delta=1.0), 30),
    )


def default_init_pose() -> dict[str, tuple[float, float, float]]:
    """Upper arms horizontal (the rest pose) and elbows bent 90 degrees, forearms down."""
    return {
        "left_elbow": (0.0, 0.0, -HALF_PI),
        "right_elbow": (0.0, 0.0, HALF_PI),
    }


@dataclass(frozen=True)
class FitConfig:
    lambda_shape: float = 1e-3
    lambda_pose: float = 1e-4
    lambda_temp: float = 1e-2
    stages: tuple[StageConfig, ...] = field(default_factory=default_stages)
    history: int = 10
    p_min: float = 0.5
    init_pose: dict = field(default_factory=default_init_pose)
    precondition: bool = True
    precondition_interval: int = 20
    precondition_floor: float = 1e-4
    precondition_warmup: int = 20

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        for key in ("lambda_shape", "lambda_pose", "lambda_temp"):
            if not getattr(self, key) >= 0:
                raise ConfigError(f"{key} must be >= 0")
        if len(self.stages) != 3:
            raise ConfigError("stages must list exactly 3 stages")
        if self.history < 1:
            raise ConfigError("history must be >= 1")
        if self.precondition_interval < 1:
            raise ConfigError("precondition_interval must be >= 1")
        if not 0.0 < self.precondition_floor <= 1.0:
            raise ConfigError("precondition_floor must be in (0, 1]")
        if self.precondition_warmup < 0:
            raise ConfigError("precondition_warmup must be >= 0")
        if not 0.0 <= self.p_min < 1.0:
            raise ConfigError("p_min must be in [0, 1)")
        for name, v in self.init_pose.items():
            if len(v) != 3 or not all(math.isfinite(float(a)) for a in v):
                raise ConfigError(f"init_pose.{name} must be three finite numbers")

    def with_stage(self, index: int, **changes) -> "FitConfig":
        stages = list(self.stages)
        stages[index] = replace(stages[index], **changes)
        return replace(self, stages=tuple(stages))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [
            {**asdict(s), "blocks": list(s.blocks), "estimator": s.estimator.to_dict()}
            for s in self.stages
        ]
        d["init_pose"] = {k: list(v) for k, v in self.init_pose.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        """Build from a (possibly partial) dict; absent keys take defaults."""
        d = dict(d)
        known = {"lambda_shape", "lambda_pose", "lambda_temp", "stages", "history", "p_min", "init_pose",
                 "precondition", "precondition_interval", "precondition_floor",
                 "precondition_warmup"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown fit config field {sorted(unknown)[0]!r}")
        if "stages" in d:
            base = default_stages()
            raw = d["stages"]
            if not isinstance(raw, list) or len(raw) != 3:
                raise ConfigError("stages must list exactly 3 stages")
            stages = []
            for i, (s, dflt) in enumerate(zip(raw, base)):
                s = dict(s)
                if "estimator" in s:
                    try:
                        s["estimator"] = RobustEstimator.from_dict(s["estimator"])
                    except (TypeError, ValueError) as exc:
                        raise ConfigError(f"stages[{i}].estimator: {exc}") from None
                try:
                    stages.append(replace(dflt, **s))
                except TypeError as exc:
                    raise ConfigError(f"stages[{i}]: {exc}") from None
            d["stages"] = tuple(stages)
        if "init_pose" in d:
            d["init_pose"] = {k: tuple(float(a) for a in v) for k, v in d["init_pose"].items()}
        return cls(**d)


def load_fit_config(path) -> FitConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return FitConfig.from_dict(raw)
