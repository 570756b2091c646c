"""Experiment configuration read from and written to YAML.

Every physical quantity carries its unit in the key name (``_mm_per_s``,
``_khz``, ``_us``, ``_rad``).  Unknown keys are rejected so that a typo
cannot silently fall back to a default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .constants import COM_VELOCITY, MODE_SET_VELOCITIES, SHOTS_JOINT, SPLITTER_START
from .detection import DetectorConfig
from .errors import ConfigError
from .interferometer import OpticsConfig
from .quantum import BraggPulse, ModeSet, PhaseSettings, UNITARY_METHODS
from .source import Coherence, SourceConfig, config_digest

OUTPUT_FORMATS = ("csv", "json")


@dataclass(frozen=True)
class PulseConfig:
    rabi_frequency_khz: float = 5.0  # Omega / 2pi
    method: str = "exact"
    deflector_phase_rad: float = 0.0
    splitter_a_phase_rad: float = 0.0
    splitter_b_phase_rad: float = 0.0
    splitter_start_us: float = SPLITTER_START * 1e6
    closing_time_us: float = SPLITTER_START * 1e6

    @property
    def rabi_frequency(self) -> float:
        """Angular Rabi frequency (rad/s)."""
        return 2 * math.pi * self.rabi_frequency_khz * 1e3

    @property
    def phases(self) -> PhaseSettings:
        return PhaseSettings(self.deflector_phase_rad, self.splitter_a_phase_rad, self.splitter_b_phase_rad)

    def bragg_pulses(self) -> tuple[BraggPulse, BraggPulse]:
        return (BraggPulse.deflector(self.deflector_phase_rad, self.rabi_frequency),
                BraggPulse.splitter(self.splitter_a_phase_rad, self.rabi_frequency))

    def optics(self, **changes) -> OpticsConfig:
        base = OpticsConfig(
            phases=self.phases,
            method=self.method,
            rabi_frequency=self.rabi_frequency,
            splitter_start=self.splitter_start_us * 1e-6,
            closing_time=self.closing_time_us * 1e-6,
        )
        return replace(base, **changes)


@dataclass(frozen=True)
class HomScanConfig:
    start_us: float = 1700.0
    stop_us: float = 2200.0
    step_us: float = 50.0
    shots_per_point: int = 10000
    mean_pairs_per_mode: float = 0.02  # low gain keeps accidental coincidences rare

    def times_us(self):
        n = int(round((self.stop_us - self.start_us) / self.step_us)) + 1
        return [self.start_us + k * self.step_us for k in range(n)]


@dataclass(frozen=True)
class G2MapConfig:
    min_mm_per_s: float = 10.0
    max_mm_per_s: float = 40.0
    step_mm_per_s: float = 1.0
    window: int = 3


@dataclass(frozen=True)
class AnalysisConfig:
    n_resamples: int = 1000
    phase_points: int = 100
    target_atoms_per_volume: float = 0.2
    calibration_shots: int = 2000
    bell_shots: int = 10000


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "results"
    format: str = "csv"


@dataclass(frozen=True)
class ExperimentConfig:
    source: SourceConfig = field(default_factory=SourceConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    pulses: PulseConfig = field(default_factory=PulseConfig)
    mode_set_velocities: tuple[float, ...] = MODE_SET_VELOCITIES
    shots: int = SHOTS_JOINT
    master_seed: int = 0
    hom_scan: HomScanConfig = field(default_factory=HomScanConfig)
    g2_map: G2MapConfig = field(default_factory=G2MapConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.pulses.method not in UNITARY_METHODS:
            raise ConfigError(f"unknown pulse method {self.pulses.method!r}")
        if self.outputs.format not in OUTPUT_FORMATS:
            raise ConfigError(f"format must be one of {OUTPUT_FORMATS}")
        if self.analysis.n_resamples < 100:
            raise ConfigError("n_resamples must be >= 100")
        if self.hom_scan.step_us <= 0 or self.hom_scan.stop_us < self.hom_scan.start_us:
            raise ConfigError("hom_scan needs step_us > 0 and stop_us >= start_us")
        if self.g2_map.step_mm_per_s <= 0 or self.g2_map.window < 1:
            raise ConfigError("g2_map needs step_mm_per_s > 0 and window >= 1")
        try:
            self.mode_sets()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def mode_sets(self) -> list[ModeSet]:
        return [ModeSet.from_velocity(v, label=i + 1) for i, v in enumerate(self.mode_set_velocities)]

    def to_dict(self) -> dict:
        return _to_plain(self)

    def digest(self) -> str:
        """Hash of the resolved configuration minus output plumbing."""
        d = self.to_dict()
        d.pop("outputs")
        return config_digest(d)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.to_yaml())

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        try:
            return _build(cls, data or {}, "")
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError("top level of the config must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_yaml(text)

    def replace(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


# SourceConfig and DetectorConfig keep unit-free attribute names; the file
# carries the unit suffix.
_SOURCE_KEYS = {
    "com_velocity": "com_velocity_mm_per_s",
    "mode_center": "mode_center_mm_per_s",
    "sigma_long": "sigma_long_mm_per_s",
    "sigma_short": "sigma_short_mm_per_s",
    "sigma_auto": "sigma_auto_mm_per_s",
    "transverse_sigma": "transverse_sigma_mm_per_s",
    "transverse_pair_sigma": "transverse_pair_sigma_mm_per_s",
}
_DETECTOR_KEYS = {"resolution_sigma": "resolution_sigma_mm_per_s"}
_FILE_KEYS = {SourceConfig: _SOURCE_KEYS, DetectorConfig: _DETECTOR_KEYS,
              ExperimentConfig: {"mode_set_velocities": "mode_sets_v_p_mm_per_s"}}


def _to_plain(obj):
    if hasattr(obj, "__dataclass_fields__"):
        keys = _FILE_KEYS.get(type(obj), {})
        return {keys.get(f.name, f.name): _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, Coherence):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [_to_plain(x) for x in obj]
    return obj


_NESTED = {"source": SourceConfig, "detector": DetectorConfig, "pulses": PulseConfig,
           "hom_scan": HomScanConfig, "g2_map": G2MapConfig, "analysis": AnalysisConfig,
           "outputs": OutputConfig}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"section {where or 'top level'} must be a mapping")
    to_file = _FILE_KEYS.get(cls, {})
    from_file = {v: k for k, v in to_file.items()}
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = from_file.get(key, key if key not in to_file else None)
        if name not in names:
            raise ConfigError(f"unknown key {where}{key}")
        if cls is ExperimentConfig and name in _NESTED:
            value = _build(_NESTED[name], value, f"{name}.")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


assert COM_VELOCITY == SourceConfig().com_velocity
