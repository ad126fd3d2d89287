"""Pipeline configuration: flat TOML key/value files plus flag overrides."""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields, replace
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PRESETS = ("desk", "paper")


@dataclass
class PipelineConfig:
    """Every knob of the pipeline; defaults form the desk preset.

    The paper preset (presets/paper.toml) records the published scale:
    windows of 100 snippets, matching maximum duration, widths 256/512,
    128-channel sampling at 32 points. Note the confidence branch holds a
    quadratic attention matrix over valid proposal cells, so interactive
    configurations should keep l_w and duration_bins at or below 48.
    """

    # synthetic data
    seed: int = 7
    n_videos: int = 16
    n_classes: int = 3
    feature_dim: int = 10
    snippet_min: int = 40
    snippet_max: int = 100
    stride_frames: int = 16
    fps: float = 25.0
    noise_amp: float = 0.35
    bump_height: float = 1.5
    transient_height: float = 2.0
    class_score_accuracy: float = 0.85
    validation_fraction: float = 0.25

    # model
    l_w: int = 20
    duration_bins: int = 20
    base_width: int = 12
    u_width: int = 12
    sample_channels: int = 8
    n_samples: int = 8
    reduced_channels: int = 12
    attention_enabled: bool = True
    extension_ratio: float = 0.0

    # training
    steps: int = 100
    step_size: float = 0.012
    train_seed: int = 11
    sample_count: int = 32
    boost_lambda: float = 0.15
    pos_threshold: float = 0.7
    neg_threshold: float = 0.3
    train_windows: str = "rescale"  # or "sliding"
    window_overlap: float = 0.75
    min_inside: float = 0.5
    beta: float = 10.0
    gamma: float = 1e-4

    # post-processing
    sigma_nms: float = 0.75
    top_k: int = 100
    keep_threshold: float = 0.0
    max_keep: int = 100
    class_top_k: int = 2

    # ensembling / evaluation / execution
    scales: tuple = (30, 80, 100)
    ensemble_weights: tuple = ()
    eval_subset: str = "validation"
    jobs: int = 1

    def __post_init__(self):
        if self.duration_bins > self.l_w:
            raise ValueError(
                f"duration_bins ({self.duration_bins}) must not exceed l_w ({self.l_w})"
            )
        if self.l_w < 2:
            raise ValueError(f"l_w must be >= 2, got {self.l_w}")


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(updates: dict) -> dict:
    out = {}
    for key, value in updates.items():
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key: {key!r}")
        if isinstance(value, list):
            value = tuple(value)
        out[key] = value
    return out


def load_preset(name: str) -> PipelineConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("tapg.presets").joinpath(f"{name}.toml").read_text()
    return replace(PipelineConfig(), **_coerce(tomllib.loads(text)))


def load_config(
    preset: str = "desk", config_path=None, overrides: dict | None = None
) -> PipelineConfig:
    """Resolve a config: preset, then the config file, then flags win."""
    cfg = load_preset(preset)
    if config_path is not None:
        with open(config_path, "rb") as f:
            cfg = replace(cfg, **_coerce(tomllib.load(f)))
    if overrides:
        cfg = replace(cfg, **_coerce(overrides))
    return cfg
