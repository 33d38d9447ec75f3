"""
Run configuration.

A run config is a key=value text file (parsed with python-dotenv) whose keys
are either top-level settings (seed, data_dir, ...) or dotted section keys
(model.heads, train.epochs, data.num_classes, ...). Command-line flags are
applied on top of the file and always win.
"""

from pathlib import Path
from typing import Any, Optional

import toml
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.errors import ConfigError, FeatureIOError


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    encoder_blocks: int = Field(2, ge=1)
    decoder_blocks: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    d_audio: int = Field(16, ge=1)
    d_visual: int = Field(32, ge=1)
    d_embed: int = Field(32, ge=1)
    # 0 means "size of the vocabulary built from the training manifest"
    vocab_size: int = Field(0, ge=0)
    ffn_audio: int = Field(64, ge=1)
    ffn_visual: int = Field(64, ge=1)
    ffn_decoder: int = Field(64, ge=1)
    detector_kernel: int = Field(3, ge=1)
    detector_channels: int = Field(64, ge=1)
    detector_hidden: int = Field(64, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    max_decode_len: int = Field(30, ge=1)

    @model_validator(mode="after")
    def check_widths(self):
        for name in ("d_audio", "d_visual", "d_embed"):
            if getattr(self, name) % self.heads:
                raise ValueError(f"{name}={getattr(self, name)} is not divisible by heads={self.heads}")
        if self.detector_kernel % 2 == 0:
            raise ValueError(f"detector_kernel must be odd for same padding, got {self.detector_kernel}")
        return self

    @classmethod
    def reference_scale(cls) -> "ModelConfig":
        """Widths of the full-size system trained on real audio/visual features."""
        return cls(
            d_audio=128, d_visual=1024, d_embed=300, vocab_size=10172,
            ffn_audio=512, ffn_visual=2048, ffn_decoder=1024,
        )


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(1 / 3, ge=0.0)
    beta: float = Field(1 / 3, ge=0.0)
    gamma: float = Field(1 / 3, ge=0.0)
    similarity_threshold: float = Field(0.6, gt=0.0, le=1.0)
    label_smoothing: float = Field(0.1, ge=0.0, lt=1.0)
    learning_rate: float = Field(1e-3, gt=0.0)
    warmup_steps: int = Field(200, ge=1)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.98, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-9, gt=0.0)
    grad_clip: float = Field(1.0, gt=0.0)
    batch_size: int = Field(8, ge=1)
    epochs: int = Field(30, ge=1)
    seed: int = 0
    checkpoint_every: int = Field(5, ge=1)
    distill: bool = True
    # firing threshold used for the per-epoch validation pass of the student
    validation_threshold: float = Field(0.5, gt=0.0, lt=1.0)


class SyntheticSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_train: int = Field(500, ge=1)
    num_val: int = Field(100, ge=1)
    vocab_size: int = Field(50, ge=8)
    num_classes: int = Field(8, ge=1)
    clip_min: float = Field(20.0, gt=0.0)
    clip_max: float = Field(40.0, gt=0.0)
    cue_min: float = Field(0.2, gt=0.0, lt=1.0)
    cue_max: float = Field(0.4, gt=0.0, lt=1.0)
    # probabilities of the cue appearing in audio only, visual only, both
    cue_mix: tuple[float, float, float] = (0.3, 0.3, 0.4)
    noise: float = Field(0.1, ge=0.0)
    lead_max: float = Field(4.0, ge=0.0)
    seed: int = 0
    audio_dim: int = Field(16, ge=1)
    visual_dim: int = Field(32, ge=1)
    audio_period: float = Field(0.96, gt=0.0)
    visual_period: float = Field(2.56, gt=0.0)

    split_cue_mix = field_validator("cue_mix", mode="before")(_split_list)

    @model_validator(mode="after")
    def check_ranges(self):
        if self.clip_min > self.clip_max:
            raise ValueError(f"clip_min={self.clip_min} exceeds clip_max={self.clip_max}")
        if self.cue_min > self.cue_max:
            raise ValueError(f"cue_min={self.cue_min} exceeds cue_max={self.cue_max}")
        if self.clip_min < self.visual_period:
            raise ValueError("clips must last at least one visual frame period")
        if min(self.cue_mix) < 0 or abs(sum(self.cue_mix) - 1.0) > 1e-9:
            raise ValueError(f"cue_mix must be nonnegative and sum to 1, got {self.cue_mix}")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs"
    threshold: float = Field(0.5, gt=0.0, lt=1.0)
    thresholds: list[float] = Field(default_factory=lambda: [0.3, 0.5, 0.7, 0.9])
    beam_width: int = Field(1, ge=1)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: SyntheticSpec = Field(default_factory=SyntheticSpec)

    split_thresholds = field_validator("thresholds", mode="before")(_split_list)

    @field_validator("thresholds")
    @classmethod
    def check_thresholds(cls, values: list[float]) -> list[float]:
        if not values:
            raise ValueError("thresholds must not be empty")
        if any(not 0.0 < value < 1.0 for value in values):
            raise ValueError(f"every threshold must lie in (0, 1), got {values}")
        if len(set(values)) != len(values):
            raise ValueError(f"thresholds must be distinct, got {values}")
        return sorted(values)

    @model_validator(mode="after")
    def check_feature_widths(self):
        if self.data.audio_dim != self.model.d_audio or self.data.visual_dim != self.model.d_visual:
            raise ValueError(
                f"feature widths ({self.data.audio_dim}, {self.data.visual_dim}) do not match "
                f"model widths ({self.model.d_audio}, {self.model.d_visual})"
            )
        return self


_SECTIONS = ("model", "train", "data")


def load_run_config(path: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Read a key=value file, apply non-None overrides, and validate the result."""
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FeatureIOError(f"config file not found: {path}")
        values.update(dotenv_values(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            # path options arrive as Path objects
            values[key] = str(value) if isinstance(value, Path) else value

    top: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    for key, value in values.items():
        if value is None:
            raise ConfigError(f"config key '{key}' has no value")
        section, _, field = key.partition(".")
        if not field:
            top[key] = value
        elif section in sections:
            sections[section][field] = value
        else:
            raise ConfigError(f"unknown config key '{key}'")

    # one seed drives every component unless a section sets its own
    if "seed" in top:
        sections["train"].setdefault("seed", top["seed"])
        sections["data"].setdefault("seed", top["seed"])
    # generated features take the model's input widths unless set explicitly
    if "d_audio" in sections["model"]:
        sections["data"].setdefault("audio_dim", sections["model"]["d_audio"])
    if "d_visual" in sections["model"]:
        sections["data"].setdefault("visual_dim", sections["model"]["d_visual"])

    try:
        return RunConfig(**top, **sections)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def write_resolved_config(config: RunConfig, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved_config.toml"
    with open(path, "w", encoding="utf-8") as handle:
        toml.dump(config.model_dump(mode="json"), handle)
    return path


def flatten_config(config: RunConfig) -> dict[str, Any]:
    """Dotted key=value view of a config, the inverse of load_run_config."""
    flat: dict[str, Any] = {}
    for key, value in config.model_dump(mode="json").items():
        if isinstance(value, dict):
            for field, inner in value.items():
                flat[f"{key}.{field}"] = inner
        else:
            flat[key] = value
    return flat
