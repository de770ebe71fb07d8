"""Pipeline configuration: one flat key=value text file, CLI flags win.

All defaults match the constants used by the owning modules; any field can be
overridden from a config file and again from command-line flags.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # dense feature extraction
    feature_step_m: float = 40.0
    feature_support_m: float = 240.0
    distance_ratio: float = 0.7
    # voting space
    rot_bins: int = 18
    trans_bin_m: float = 1.0
    top_k_matches: int = 100_000
    zoning_cell_m: float = 100.0
    smooth_sigma_m: float = 5.0
    extent_m: float = 5000.0
    # optimization
    pso_particles: int = 150
    pso_max_iters: int = 300
    pso_inertia: float = 0.7298
    pso_cognitive: float = 1.4962
    pso_social: float = 1.4962
    pso_stall_iters: int = 40
    random_confidence_fraction: float = 0.3
    translation_noise_sigma_m: float = 3.0
    reference_particles: int = 5
    refine_step_m: float = 0.5
    refine_step_deg: float = 0.5
    # guided matching
    guided_position_threshold_m: float = 500.0
    guided_scale_ratio_max: float = 1.4
    guided_distance_ratio: float = 0.7
    ransac_iters: int = 2000
    ransac_inlier_threshold_m: float = 5.0
    ransac_min_inliers: int = 12
    # orchestration
    rng_seed: int = 0
    runs: int = 50
    threads: int = 1

    def __post_init__(self):
        if self.feature_support_m <= 0 or self.feature_step_m <= 0:
            raise ConfigError("feature geometry must be positive")
        if not 0 < self.distance_ratio < 1:
            raise ConfigError("distance_ratio must lie in (0, 1)")
        if self.extent_m <= 0:
            raise ConfigError("extent_m must be positive")
        if self.runs < 1 or self.threads < 1:
            raise ConfigError("runs and threads must be >= 1")


_FIELDS = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _parse_value(name: str, raw: str):
    kind = _FIELDS[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"invalid value for {name}: {raw!r}") from e
    raise ConfigError(f"unsupported field type for {name}")


def parse_config_text(text: str) -> dict:
    """key=value lines into typed overrides; '#' starts a comment."""
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {ln}: unknown config key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, updated by the config file, updated by explicit overrides."""
    values: dict = {}
    if path is not None:
        with open(path) as f:
            values.update(parse_config_text(f.read()))
    for key, val in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        if val is not None:
            values[key] = val
    return PipelineConfig(**values)
