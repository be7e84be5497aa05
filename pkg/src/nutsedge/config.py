"""Flat ``key = value`` pipeline configuration.

Blank lines and ``#`` comments are ignored.  Every key has a default, unknown
keys are rejected, and :meth:`PipelineConfig.to_text` writes a canonical form
that parses back to the same config.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

from .compose import ComposeConfig
from .evaluation import EvalConfig
from .skeldecode import DecodeParams
from .texsynth import SynthParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # recombination
    density_min: float = 5.0          # plants per 10**6 px
    density_max: float = 10.0
    brightness_min: float = 0.8       # HSV value scale factor
    brightness_max: float = 1.2
    seed: int = 0                     # master seed for every stage
    count: int = 1                    # images (or backgrounds) to generate
    min_visible_fraction: float = 0.2
    # labels
    sigma: float = 12.0               # Gaussian falloff of the label map, px
    # sampling
    strata_count: int = 3
    sample_fraction: float = 0.05
    # texture synthesis
    neighborhood: int = 25            # odd window side
    epsilon: float = 0.1              # candidate tolerance; inf accepts every pixel
    # decoding
    dilate_radius: int = 2
    erode_radius: int = 2
    blur_sigma: float = 3.0
    nms_threshold: float = 0.3
    min_component: int = 10
    # evaluation
    threshold_t: float = 0.5
    corr_dist_d: float = 12.0
    iou_min: float = 0.5
    cs_min: float = 0.7
    normalized: bool = False

    def __post_init__(self):
        self.validate()

    # -- views for each stage

    def compose(self) -> ComposeConfig:
        return ComposeConfig(self.density_min, self.density_max, self.brightness_min,
                             self.brightness_max, self.seed, self.count, self.min_visible_fraction)

    def synth(self, width: int, height: int, seed: int) -> SynthParams:
        return SynthParams(self.neighborhood, self.epsilon, width, height, seed)

    def decode(self) -> DecodeParams:
        return DecodeParams(self.dilate_radius, self.erode_radius, self.blur_sigma,
                            self.nms_threshold, self.min_component)

    def evaluation(self) -> EvalConfig:
        return EvalConfig(self.threshold_t, self.corr_dist_d, self.sigma, self.iou_min,
                          self.cs_min, self.normalized, self.decode())

    def validate(self) -> None:
        try:
            self.compose()
            self.synth(max(self.neighborhood, 3), max(self.neighborhood, 3), 0)
            self.evaluation()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.strata_count < 1:
            raise ConfigError("strata_count must be >= 1")
        if not 0 < self.sample_fraction <= 1:
            raise ConfigError("sample_fraction must be in (0, 1]")

    # -- text form

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(self).items())

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        val = float(raw)
        if math.isnan(val):
            raise ValueError(raw)
        return val
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def parse_config(text: str) -> PipelineConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw)
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return parse_config(fh.read())
