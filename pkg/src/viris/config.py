"""Toolkit configuration: one JSON file, every default materialized."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import DEFAULT_DET_POINTS, DEFAULT_FAR_TARGETS
from .gate import SHARPNESS_GATE_DEFAULT, TARGET_PER_EYE_DEFAULT
from .iriscode import (
    DEFAULT_COLS,
    DEFAULT_MAX_SHIFT,
    DEFAULT_ROWS,
    DEFAULT_SIGMA_RATIO,
    DEFAULT_WAVELENGTHS,
    MIN_BITS_FRACTION,
    CodeGrid,
    FilterBank,
)
from .normalize import STRIP_HEIGHT, STRIP_WIDTH
from .quality import QualityThresholds
from .raster import DEFAULT_GAMMA
from .segment import MAP_THRESHOLD

CONFIG_ENV_VAR = "VIRIS_CONFIG"


@dataclass(frozen=True)
class ToolkitConfig:
    """All tunables for the pipeline commands.

    Construction validates each field against the owning module's bounds
    (thresholds via QualityThresholds, the code geometry by building a
    throwaway grid and bank).
    """

    thresholds: QualityThresholds = field(default_factory=QualityThresholds)
    sharpness_gate: float = SHARPNESS_GATE_DEFAULT
    gamma: float = DEFAULT_GAMMA
    strip_width: int = STRIP_WIDTH
    strip_height: int = STRIP_HEIGHT
    code_rows: int = DEFAULT_ROWS
    code_cols: int = DEFAULT_COLS
    wavelengths: tuple[float, ...] = DEFAULT_WAVELENGTHS
    sigma_ratio: float = DEFAULT_SIGMA_RATIO
    max_shift: int = DEFAULT_MAX_SHIFT
    min_bits_fraction: float = MIN_BITS_FRACTION
    far_targets: tuple[float, ...] = DEFAULT_FAR_TARGETS
    target_per_eye: int = TARGET_PER_EYE_DEFAULT
    map_threshold: float = MAP_THRESHOLD
    det_points: int = DEFAULT_DET_POINTS

    def __post_init__(self):
        object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))
        object.__setattr__(self, "far_targets", tuple(float(t) for t in self.far_targets))
        if self.sharpness_gate <= 0:
            raise ValueError("sharpness_gate must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.strip_width < 1 or self.strip_height < 1:
            raise ValueError("strip dimensions must be positive")
        if self.strip_height % self.code_rows != 0:
            raise ValueError("code_rows must divide strip_height")
        if self.code_cols > self.strip_width:
            raise ValueError("code_cols cannot exceed strip_width")
        if self.max_shift < 0:
            raise ValueError("max_shift must be non-negative")
        if not 0.0 < self.min_bits_fraction <= 1.0:
            raise ValueError("min_bits_fraction must lie in (0, 1]")
        if not all(0.0 < t < 1.0 for t in self.far_targets):
            raise ValueError("far_targets must lie in (0, 1)")
        if self.target_per_eye < 1:
            raise ValueError("target_per_eye must be at least 1")
        if not 0.0 < self.map_threshold < 1.0:
            raise ValueError("map_threshold must lie in (0, 1)")
        if self.det_points < 2:
            raise ValueError("det_points must be at least 2")
        # Bounds owned by the code modules.
        FilterBank(self.code_cols, self.wavelengths, self.sigma_ratio)
        CodeGrid(self.code_rows, self.code_cols)

    def grid(self) -> CodeGrid:
        return CodeGrid(self.code_rows, self.code_cols)

    def bank(self) -> FilterBank:
        return FilterBank(self.code_cols, self.wavelengths, self.sigma_ratio)

    def to_json_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["thresholds"]["iris_pupil_ratio"] = list(self.thresholds.iris_pupil_ratio)
        d["wavelengths"] = list(self.wavelengths)
        d["far_targets"] = list(self.far_targets)
        return d

    @classmethod
    def from_json_dict(cls, data: dict) -> "ToolkitConfig":
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "thresholds" in kwargs:
            t = dict(kwargs["thresholds"])
            if "iris_pupil_ratio" in t:
                t["iris_pupil_ratio"] = tuple(t["iris_pupil_ratio"])
            kwargs["thresholds"] = QualityThresholds(**t)
        return cls(**kwargs)


def save_config(cfg: ToolkitConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_json_dict(), indent=2) + "\n")


def load_config(path: str | Path | None = None) -> ToolkitConfig:
    """Resolve the config: explicit path, then $VIRIS_CONFIG, then defaults.

    A named but missing file is created with all defaults written out, so
    the run's settings are on disk afterwards either way.
    """
    if path is None:
        env = os.environ.get(CONFIG_ENV_VAR)
        path = env if env else None
    if path is None:
        return ToolkitConfig()
    p = Path(path)
    if not p.exists():
        cfg = ToolkitConfig()
        save_config(cfg, p)
        return cfg
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {p}: invalid JSON ({exc})") from exc
    return ToolkitConfig.from_json_dict(data)
