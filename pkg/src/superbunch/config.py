"""Experiment configuration: dataclasses, YAML round trip and cross-field validation.

Example document::

    name: vpp10
    seed: 7
    duration: 0.5          # seconds of simulated light
    dt: 1.28e-6            # trace sampling step
    mean_rate_target: 2.0e5  # detected HBT rate, both detectors together
    speckle: {coherence_time: 46.3e-6, shape: gaussian}
    modulation: {correlation_time: 12.8e-6, v_pp: 10.0, v_pi: 8.0, bias_phase: 0.5236}
    mix: {coherent_fraction: 0.33, model: field}
    detector: {dead_time: 35e-9, jitter_rms: 0.35e-9, efficiency: 1.0, dark_rate: 0}
    window: {width: 5e-6, n_windows: 100000, mean_counts: [0.1, 0.25, 0.5]}
    coincidence: {bin: 165e-12, max_lag: 20e-6}
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .detection import DetectorParams
from .light import MixParams, ModulationParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SpeckleConfig:
    coherence_time: float = 4.63e-6
    shape: str = "gaussian"


@dataclass(frozen=True)
class WindowConfig:
    width: float = 5e-6
    n_windows: int = 100_000
    stride: Optional[float] = None
    mean_counts: tuple = (0.1, 0.25, 0.5)
    # "single_trace": one trace, rates rescaled; "separate_runs": a fresh trace per level
    rescale: str = "single_trace"


@dataclass(frozen=True)
class CoincidenceConfig:
    bin: float = 165e-12
    max_lag: float = 20e-6
    # half-width pooled for the zero-lag estimate; default: shortest timescale / 20
    zero_window: Optional[float] = None
    # coarse bin width used for the two-timescale fit; default: max_lag / 100
    fit_bin: Optional[float] = None
    normalization: str = "accidental"
    fit: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "run"
    seed: int = 0
    duration: float = 0.5
    dt: float = 1.28e-7
    mean_rate_target: float = 2e5
    speckle: SpeckleConfig = field(default_factory=SpeckleConfig)
    modulation: Optional[ModulationParams] = None
    mix: MixParams = field(default_factory=MixParams)
    detector: DetectorParams = field(default_factory=DetectorParams)
    window: WindowConfig = field(default_factory=WindowConfig)
    coincidence: CoincidenceConfig = field(default_factory=CoincidenceConfig)
    output_dir: Optional[str] = None

    @property
    def shortest_timescale(self) -> float:
        taus = [self.speckle.coherence_time]
        if self.modulation is not None:
            taus.append(self.modulation.correlation_time)
        return min(taus)

    @property
    def zero_window(self) -> float:
        zw = self.coincidence.zero_window
        return self.shortest_timescale / 20 if zw is None else zw

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_SECTIONS = {
    "speckle": SpeckleConfig,
    "modulation": ModulationParams,
    "mix": MixParams,
    "detector": DetectorParams,
    "window": WindowConfig,
    "coincidence": CoincidenceConfig,
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    kwargs = {}
    for key, value in data.items():
        default = names[key].default
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path}.{key}: expected true or false, got {value!r}")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{path}.{key}: expected an integer, got {value!r}")
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"{path}.{key}: expected a string, got {value!r}")
        elif key == "mean_counts":
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}.{key}: expected a list of numbers")
            value = tuple(_number(v, f"{path}.{key}") for v in value)
        elif value is not None:
            value = _number(value, f"{path}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _number(value, path) -> float:
    # YAML 1.1 reads exponents without a dot ("5e-6") as strings
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a mapping at top level")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if key == "modulation" and value is None:
                kwargs[key] = None
            else:
                kwargs[key] = _build(_SECTIONS[key], value, key)
        elif key in ("seed",):
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ConfigError(f"seed: expected a nonnegative integer, got {value!r}")
            kwargs[key] = value
        elif key in ("duration", "dt", "mean_rate_target"):
            kwargs[key] = _number(value, key)
        else:
            kwargs[key] = value
    cfg = ExperimentConfig(**kwargs)
    validate(cfg)
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["window"]["mean_counts"] = [float(x) for x in cfg.window.mean_counts]
    return d


def validate(cfg: ExperimentConfig) -> None:
    """Raise ``ConfigError`` naming the first inconsistent field."""
    if cfg.duration <= 0:
        raise ConfigError("duration: must be positive")
    if cfg.dt <= 0:
        raise ConfigError("dt: must be positive")
    if cfg.mean_rate_target <= 0:
        raise ConfigError("mean_rate_target: must be positive")
    if cfg.speckle.coherence_time <= 0:
        raise ConfigError("speckle.coherence_time: must be positive")
    if cfg.speckle.shape not in ("gaussian", "exponential"):
        raise ConfigError(f"speckle.shape: unknown shape {cfg.speckle.shape!r}")
    if cfg.dt > cfg.shortest_timescale / 10 * (1 + 1e-9):
        raise ConfigError(
            f"dt: {cfg.dt:g} s exceeds a tenth of the shortest correlation time ({cfg.shortest_timescale:g} s)"
        )
    w = cfg.window
    if w.width <= 0:
        raise ConfigError("window.width: must be positive")
    if w.n_windows < 1:
        raise ConfigError("window.n_windows: must be at least 1")
    stride = w.width if w.stride is None else w.stride
    if stride < w.width:
        raise ConfigError("window.stride: must be at least window.width")
    if (w.n_windows - 1) * stride + w.width > cfg.duration * (1 + 1e-12):
        raise ConfigError(
            f"duration: {cfg.duration:g} s is shorter than the {w.n_windows} windows it must hold"
        )
    if not w.mean_counts or any(m <= 0 for m in w.mean_counts):
        raise ConfigError("window.mean_counts: need one or more positive targets")
    if w.rescale not in ("single_trace", "separate_runs"):
        raise ConfigError(f"window.rescale: unknown mode {w.rescale!r}")
    source_rate = cfg.mean_rate_target / max(cfg.detector.efficiency, 1e-300)
    if cfg.detector.efficiency == 0:
        raise ConfigError("detector.efficiency: must be positive to detect anything")
    if max(w.mean_counts) > source_rate * w.width:
        raise ConfigError(
            f"window.mean_counts: target {max(w.mean_counts)} needs more than the "
            f"{source_rate * w.width:.3g} photons per window the source delivers"
        )
    c = cfg.coincidence
    if c.bin <= 0:
        raise ConfigError("coincidence.bin: must be positive")
    if c.max_lag < 10 * c.bin:
        raise ConfigError("coincidence.max_lag: must span at least ten bins")
    if c.max_lag >= cfg.duration:
        raise ConfigError("coincidence.max_lag: must be shorter than duration")
    if c.fit_bin is not None and c.fit_bin < c.bin:
        raise ConfigError("coincidence.fit_bin: must be at least coincidence.bin")
    if c.normalization not in ("accidental", "baseline"):
        raise ConfigError(f"coincidence.normalization: unknown mode {c.normalization!r}")


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    data = data or {}
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)
