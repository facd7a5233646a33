"""Experiment configuration and its JSON form."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .. import channel
from ..modulation import FskParams, OokParams
from ..receiver import Modulation, ReceiverConfig

SNR_AXES = ("distance", "cores", "preset", "faraday")
_CHANNEL_KEYS = {f.name for f in fields(channel.ChannelConfig)} - {"interference", "sensor"}
_SENSOR_KEYS = {f.name for f in fields(channel.SensorConfig)}
_RECEIVER_KEYS = {"moving_average_window", "preamble_correlation_threshold",
                  "signal_lost_timeout_s", "signal_lost_fraction", "spectral_contrast",
                  "window_cycles"}


class UsageError(ValueError):
    """Invalid user input; the CLI maps it to exit code 1."""


@dataclass
class ExperimentConfig:
    modulation: str = "ook"
    bit_rate: float = 1.0
    carrier_hz: float = 10.0
    f0_hz: float = 0.25
    f1_hz: float = 0.5
    n_cores: int = 4
    payload: int | None = None
    bits: str = "0101"

    preset: str = "default"
    channel: dict[str, Any] = field(default_factory=dict)
    sensor: dict[str, Any] = field(default_factory=dict)
    receiver: dict[str, Any] = field(default_factory=dict)

    distances_cm: list[float] = field(default_factory=lambda: [1.0, 5.0, 10.0, 12.5, 15.0])
    bit_rates: list[float] = field(default_factory=lambda: [0.2, 1.0, 5.0])
    core_counts: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    presets: list[str] = field(
        default_factory=lambda: ["idle", "word_processing", "video", "calculations"])
    snr_axis: str = "distance"
    snr_distances_cm: list[float] = field(default_factory=lambda: [5.0, 10.0, 15.0])
    trials: int = 20
    snr_trials: int = 8
    rng_seed: int = 0
    out_dir: str = "out"

    def validate(self) -> None:
        try:
            Modulation(self.modulation)
        except ValueError:
            raise UsageError(f"unknown modulation {self.modulation!r}") from None
        for name in ("distances_cm", "bit_rates", "core_counts", "presets", "snr_distances_cm"):
            if not getattr(self, name):
                raise UsageError(f"{name} must not be empty")
        if any(d <= 0 for d in self.distances_cm + self.snr_distances_cm):
            raise UsageError("distances must be positive")
        if any(r <= 0 for r in self.bit_rates) or self.bit_rate <= 0:
            raise UsageError("bit rates must be positive")
        if self.trials < 1 or self.snr_trials < 1:
            raise UsageError("trials must be >= 1")
        if self.snr_axis not in SNR_AXES:
            raise UsageError(f"snr_axis must be one of {SNR_AXES}")
        if self.preset not in channel.PRESET_NAMES:
            raise UsageError(f"unknown preset {self.preset!r}; choose from {channel.PRESET_NAMES}")
        for p in self.presets:
            if p not in channel.PRESET_NAMES:
                raise UsageError(f"unknown preset {p!r}")
        for group, allowed in (("channel", _CHANNEL_KEYS), ("sensor", _SENSOR_KEYS),
                               ("receiver", _RECEIVER_KEYS)):
            extra = set(getattr(self, group)) - allowed
            if extra:
                raise UsageError(f"unknown {group} keys: {sorted(extra)}")
        if set(self.bits) - {"0", "1"} or not self.bits:
            raise UsageError("bits must be a non-empty string of 0/1")
        if self.payload is not None and not 0 <= self.payload < 2 ** 32:
            raise UsageError("payload must fit in 32 bits")

    # builders

    def modulation_params(self, bit_rate: float | None = None) -> OokParams | FskParams:
        rate = self.bit_rate if bit_rate is None else bit_rate
        try:
            if Modulation(self.modulation) is Modulation.OOK:
                return OokParams.for_bit_rate(rate, self.carrier_hz, self.n_cores)
            return FskParams(self.f0_hz, self.f1_hz, 1.0 / rate, self.n_cores)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def channel_config(self, preset: str | None = None, **overrides) -> channel.ChannelConfig:
        cfg = channel.channel_preset(preset or self.preset)
        kw = dict(self.channel)
        if "earth_field_uT" in kw:
            kw["earth_field_uT"] = tuple(kw["earth_field_uT"])
        if "core_scale" in kw:
            kw["core_scale"] = {int(k): float(v) for k, v in kw["core_scale"].items()}
        if self.sensor:
            s = dict(self.sensor)
            if "signal_axis" in s:
                s["signal_axis"] = tuple(s["signal_axis"])
            kw["sensor"] = replace(cfg.sensor, **s)
        kw.update(overrides)
        cfg = replace(cfg, **kw)
        try:
            cfg.validate()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return cfg

    def receiver_config(self, bit_rate: float | None = None,
                        sample_rate_hz: float | None = None) -> ReceiverConfig:
        params = self.modulation_params(bit_rate)
        fs = sample_rate_hz or self.channel_config().sensor.sample_rate_hz
        rc = ReceiverConfig.for_params(params, sample_rate_hz=fs, **self.receiver)
        try:
            rc.validate()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return rc

    # serialisation

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
        return cls.from_dict(data)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())
