"""Run configuration: one JSON document per run, overridable by CLI flags.

Every report embeds the resolved configuration, so results are
self-describing and reruns are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

METHODS = ("pis3r", "homography-baseline")
DIFFUSION_MODES = ("pass-through", "external")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration."""


@dataclass
class RansacParams:
    threshold: float = 2.0  # symmetric transfer error, px
    max_iters: int = 1000
    seed: int = 0


@dataclass
class RegistrationParams:
    max_corners: int = 800
    nms_radius: int = 6
    patch: int = 11
    min_ncc: float = 0.7
    match_ratio: float = 0.85
    sampson_min_ncc: float = 0.85
    min_inliers: int = 12
    max_refit_error: float = 5.0  # px; beyond this a registration counts as failed


@dataclass
class DiffusionParams:
    mode: str = "pass-through"
    command: str | None = None
    steps: int = 10
    stage2_steps: int = 5
    seed: int = 0


@dataclass
class MetricParams:
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03


@dataclass
class ParallaxParams:
    tau1: float = 0.02
    tau2: float = 0.25


@dataclass
class RunConfig:
    method: str = "pis3r"
    reference: int = 0
    max_dim: int = 8192
    jobs: int = 1
    ransac: RansacParams = field(default_factory=RansacParams)
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)
    metrics: MetricParams = field(default_factory=MetricParams)
    parallax: ParallaxParams = field(default_factory=ParallaxParams)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.diffusion.mode not in DIFFUSION_MODES:
            raise ConfigError(
                f"diffusion mode must be one of {DIFFUSION_MODES}, got {self.diffusion.mode!r}"
            )
        if self.diffusion.mode == "external" and not self.diffusion.command:
            raise ConfigError("external diffusion mode requires a command")
        if self.max_dim < 1 or self.jobs < 1:
            raise ConfigError("max_dim and jobs must be positive")
        reg = self.registration
        if reg.patch < 5 or reg.patch % 2 == 0:
            raise ConfigError(f"registration patch must be odd and >= 5, got {reg.patch}")
        if reg.nms_radius < 1 or reg.max_corners < 1:
            raise ConfigError("nms_radius and max_corners must be positive")
        if self.ransac.threshold <= 0 or self.ransac.max_iters < 1:
            raise ConfigError("RANSAC threshold and max_iters must be positive")
        if not (self.parallax.tau1 < self.parallax.tau2):
            raise ConfigError(
                f"parallax thresholds must satisfy tau1 < tau2, got {self.parallax.tau1}, {self.parallax.tau2}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "ransac": RansacParams,
    "registration": RegistrationParams,
    "diffusion": DiffusionParams,
    "metrics": MetricParams,
    "parallax": ParallaxParams,
}


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config document must be an object, got {type(data).__name__}")
    kwargs = {}
    known = {f.name for f in fields(RunConfig)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            section_fields = {f.name for f in fields(cls)}
            bad = set(value) - section_fields
            if bad:
                raise ConfigError(f"unknown {key} config keys: {sorted(bad)}")
            kwargs[key] = cls(**value)
        else:
            kwargs[key] = value
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)
