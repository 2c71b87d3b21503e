"""Pipeline configuration: a flat, typed key = value text format.

Unknown keys are rejected so a typo cannot silently fall back to a default.
The stage count is fixed at two (coarse, fine).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError

STAGE_COUNT = 2

FEATURE_MODES = ("learned", "photometric")
REGULARIZER_MODES = ("auto", "learned", "bypass")
SPACING_MODES = ("uniform-depth", "uniform-inverse-depth")


@dataclass
class PipelineConfig:
    seed: int = 0
    feature_mode: str = "photometric"
    regularizer: str = "auto"
    coarse_hypotheses: int = 64
    fine_hypotheses: int = 8
    hypothesis_spacing: str = "uniform-depth"
    fine_radius_scale: float = 4.0
    # Softmax temperatures over depth logits. The defaults are calibrated for
    # photometric (negated variance) logits; learned runs usually want 1.0.
    coarse_temperature: float = 1e-5
    fine_temperature: float = 3e-6
    encoder_width_coarse: int = 16
    encoder_width_fine: int = 8
    feature_channels: int = 8
    attention_dim: int = 16
    gaussian_feature_dim: int = 24
    head_hidden_width: int = 32
    regularizer_base_channels: int = 8
    tile_size: int = 16
    source_views: int = 3
    beta_structure: float = 0.1
    beta_perceptual: float = 0.05
    gamma_coarse: float = 0.5
    gamma_fine: float = 1.0
    photometric_opacity: float = 0.98
    photometric_scale: float = 0.75

    def validate(self) -> "PipelineConfig":
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"feature_mode {self.feature_mode!r} not in {FEATURE_MODES}")
        if self.regularizer not in REGULARIZER_MODES:
            raise ConfigError(f"regularizer {self.regularizer!r} not in {REGULARIZER_MODES}")
        if self.hypothesis_spacing not in SPACING_MODES:
            raise ConfigError(f"hypothesis_spacing {self.hypothesis_spacing!r} not in {SPACING_MODES}")
        if self.coarse_hypotheses < 2 or self.fine_hypotheses < 2:
            raise ConfigError("hypothesis counts must be at least 2")
        if self.coarse_temperature <= 0 or self.fine_temperature <= 0:
            raise ConfigError("softmax temperatures must be positive")
        if self.tile_size < 1:
            raise ConfigError("tile_size must be at least 1")
        if self.source_views < 2:
            raise ConfigError("source_views must be at least 2")
        if min(self.beta_structure, self.beta_perceptual, self.gamma_coarse, self.gamma_fine) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if not 0 < self.photometric_opacity < 1:
            raise ConfigError("photometric_opacity must lie in (0, 1)")
        for name in (
            "fine_radius_scale",
            "encoder_width_coarse",
            "encoder_width_fine",
            "feature_channels",
            "attention_dim",
            "gaussian_feature_dim",
            "head_hidden_width",
            "regularizer_base_channels",
            "photometric_scale",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        return self

    def resolved_regularizer(self) -> str:
        if self.regularizer != "auto":
            return self.regularizer
        return "bypass" if self.feature_mode == "photometric" else "learned"

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = (part.strip() for part in line.partition("="))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            kind = type(getattr(defaults, key))
            try:
                values[key] = kind(value) if kind is not bool else value.lower() == "true"
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
        return cls(**values).validate()

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_text(f.read())
