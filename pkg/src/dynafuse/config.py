"""Pipeline configuration: ``key = value`` text files plus CLI overrides.

Every knob has a default; a config file sets any subset; CLI flags win over
the file.  Unknown keys and unparsable values fail fast with
:class:`ConfigError` so typos surface before any stage runs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

__all__ = ["ConfigError", "PipelineConfig", "load_config", "parse_config_file", "coerce"]


class ConfigError(ValueError):
    """Bad configuration: unknown key, wrong type, or invalid value."""


@dataclass
class PipelineConfig:
    """All pipeline settings.  Field names double as config-file keys."""

    # Dataset
    rgb_index: str = ""  # color index file: "timestamp filename" lines
    depth_index: str = ""  # depth index file
    detections: str = ""  # detections JSONL ("" = no detections)
    strokes_dir: str = ""  # optional per-frame stroke PNGs "<timestamp>.strokes.png"
    depth_scale: float = 5000.0  # depth PNG value for 1 meter
    max_dt: float = 0.02  # association tolerance, seconds

    # Intrinsics (image size comes from the data)
    fx: float = 525.0
    fy: float = 525.0
    ox: float = 319.5
    oy: float = 239.5

    # Dynamic-detection policy
    dynamic_classes: str = "person"  # comma-separated labels
    min_confidence: float = 0.0

    # Segmentation
    gmm_components: int = 5
    gamma: float = 50.0
    grabcut_max_iters: int = 10
    grabcut_tol: float = 1e-4
    mask_dilation_px: int = 2

    # Odometry
    pyramid_levels: int = 4
    w_intensity: float = 1.0
    w_depth: float = 1.0
    gn_max_iters: int = 20
    gn_tol: float = 1e-6
    min_valid_fraction: float = 0.1
    stride: int = 1  # odometry pixel sampling stride
    huber: bool = False
    huber_delta_i: float = 0.1
    huber_delta_z: float = 0.05
    init_from_previous: bool = True

    # Fusion
    fusion_stride: int = 2
    voxel_size: float = 0.01  # meters

    # Outputs
    out_ply: str = "cloud.ply"
    out_traj: str = "trajectory.txt"
    debug_mask_dir: str = ""  # write per-frame dynamic masks here ("" = off)
    report_dir: str = ""  # write report figures here ("" = off)

    def dynamic_class_set(self) -> frozenset[str]:
        return frozenset(s.strip() for s in self.dynamic_classes.split(",") if s.strip())

    def validate(self) -> None:
        positive = (
            "depth_scale", "fx", "fy", "gamma", "grabcut_tol", "gn_tol", "voxel_size",
            "huber_delta_i", "huber_delta_z", "w_intensity", "w_depth",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        at_least_one = ("gmm_components", "pyramid_levels", "stride", "fusion_stride")
        for name in at_least_one:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("max_dt", "min_confidence", "mask_dilation_px", "grabcut_max_iters",
                     "gn_max_iters", "min_valid_fraction"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.min_confidence > 1.0:
            raise ConfigError(f"min_confidence must be <= 1, got {self.min_confidence}")


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def coerce(key: str, raw: str):
    """Parse a raw string for config key ``key`` to its declared type."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key: {key!r}")
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if ftype == "bool" or ftype is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if ftype == "int" or ftype is int:
            return int(raw)
        if ftype == "float" or ftype is float:
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"config key {key!r}: {e}") from e


def parse_config_file(path: str | Path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    values: dict = {}
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value', got {line!r}")
            key, raw = line.split("=", 1)
            key = key.strip()
            values[key] = coerce(key, raw)
    return values


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults <- config file (if any) <- overrides; validates the result.

    ``overrides`` maps field names to already-typed values or raw strings.
    """
    values: dict = {}
    if path is not None:
        values.update(parse_config_file(path))
    for key, val in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key: {key!r}")
        values[key] = coerce(key, val) if isinstance(val, str) else val
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg


def describe_defaults() -> str:
    """One line per config key with its default (used by CLI --help)."""
    cfg = PipelineConfig()
    return "\n".join(f"  {f.name} = {getattr(cfg, f.name)!r}" for f in fields(PipelineConfig))
