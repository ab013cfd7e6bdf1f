"""Central hyperparameter registry.

Defaults follow the published settings of the method; values marked
"tuned" were chosen on the synthetic harness where no published value
exists. Configs load from a flat ``key = value`` text file with ``#``
comments.
"""

import dataclasses
import math
from dataclasses import dataclass


@dataclass
class PipelineConfig:
    # stage switches (ablations)
    estimate_distortion: bool = True
    run_epipolar_adjustment: bool = True
    # distortion search
    distortion_levels: int = 3
    distortion_samples_per_level: int = 10
    distortion_min: float = -1.0
    distortion_max: float = 1.0
    distortion_max_pairs: int = 120
    # focal voting
    fov_min_deg: float = 20.0
    fov_max_deg: float = 160.0
    focal_samples: int = 100
    tau: float = 0.01
    fallback_fov_deg: float = 60.0
    # rotation alignment
    rotation_lr: float = 1e-4
    rotation_steps: int = 2000
    pair_inlier_threshold_start: int = 100
    pair_inlier_threshold_min: int = 15
    # translation
    translation_lr: float = 1e-3
    translation_steps: int = 6000
    translation_inits: int = 3
    sphere_samples: int = 1024
    sphere_refine_levels: int = 2
    # epipolar adjustment
    epipolar_lr: float = 1e-4
    lr_decay: float = 2.0
    prune_rounds: int = 3
    prune_threshold_start: float = 0.01
    prune_threshold_end: float = 0.005
    irls_iters_between_prunes: int = 3
    epipolar_epoch_steps: int = 100
    refine_focal: bool = True
    # optimizer
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # tracks
    max_track_size_for_completion: int = 200
    # triangulation
    triangulation_min_track_inliers: int = 3
    triangulation_min_angle_deg: float = 1.5
    reproj_outlier_px: float = 4.0

    def __post_init__(self):
        counts = [
            "distortion_levels", "distortion_samples_per_level", "focal_samples",
            "rotation_steps", "translation_steps", "translation_inits",
            "sphere_samples", "sphere_refine_levels", "prune_rounds",
            "irls_iters_between_prunes", "epipolar_epoch_steps",
            "pair_inlier_threshold_min", "triangulation_min_track_inliers",
            "max_track_size_for_completion",
        ]
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.distortion_min < self.distortion_max:
            raise ValueError("degenerate distortion interval")
        if not 0 < self.fov_min_deg < self.fov_max_deg < 180:
            raise ValueError("degenerate FoV interval")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        for name in ("rotation_lr", "translation_lr", "epipolar_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.prune_threshold_start < self.prune_threshold_end:
            raise ValueError("prune thresholds must be non-increasing")
        if self.prune_threshold_end <= 0:
            raise ValueError("prune thresholds must be positive")


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _parse_value(name, text):
    f = _FIELDS[name]
    if f.type == "bool" or isinstance(f.default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean for {name}: {text!r}")
    if isinstance(f.default, int):
        return int(text)
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value for {name}")
    return value


def loads(text):
    """Parse a config from ``key = value`` text; unspecified keys take defaults."""
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        overrides[key] = _parse_value(key, value.strip())
    return PipelineConfig(**overrides)


def load(path=None):
    if path is None:
        return PipelineConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def serialize(config):
    lines = []
    for f in dataclasses.fields(PipelineConfig):
        value = getattr(config, f.name)
        lines.append(f"{f.name} = {value!r}" if isinstance(value, bool)
                     else f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def save(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(config))
