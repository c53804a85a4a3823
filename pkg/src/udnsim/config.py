"""Experiment configuration: a YAML key-value document with unit suffixes.

Quantities may be plain numbers (SI) or strings like ``"50 km/h"``,
``"240 kHz"``, ``"200 us"``; the downlink/uplink split accepts ``"4.7:1"``.
Unknown keys are rejected with their full path. dB/dBm quantities stay in dB.
The seed is mandatory: runs never draw from the wall clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields

import numpy as np
import yaml

from .channel import ChannelConfig
from .scenario import ClockModel, Numerology, StreetGrid
from .tracking import TrackingConfig


class ConfigError(ValueError):
    """Invalid configuration; the message carries the offending field path."""


_UNITS = {
    "m": 1.0, "km": 1e3, "cm": 1e-2, "mm": 1e-3,
    "s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9,
    "hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9,
    "m/s": 1.0, "km/h": 1 / 3.6, "km/s": 1e3,
    "db": None, "dbm": None,  # kept in dB
    "/km^2": 1.0, "/km2": 1.0, "users/km^2": 1.0,  # densities stay per km^2
    "rad": 1.0, "deg": np.pi / 180.0,
}


def parse_quantity(value, path: str = "") -> float:
    """Parse a number or a '<number> <unit>' string to internal units."""
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a quantity, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected number or quantity string")
    text = value.strip()
    if ":" in text:  # ratio like "4.7:1" -> fraction of the first part
        try:
            a, b = (float(p) for p in text.split(":", 1))
        except ValueError as exc:
            raise ConfigError(f"{path}: bad ratio {value!r}") from exc
        if a <= 0 or b <= 0:
            raise ConfigError(f"{path}: ratio parts must be positive")
        return a / (a + b)
    parts = text.split()
    try:
        number = float(parts[0])
    except ValueError as exc:
        raise ConfigError(f"{path}: cannot parse number in {value!r} "
                          f"(position 0)") from exc
    if len(parts) == 1:
        return number
    if len(parts) != 2:
        raise ConfigError(f"{path}: expected '<number> <unit>' in {value!r}")
    unit = parts[1].lower()
    if unit not in _UNITS:
        raise ConfigError(f"{path}: unknown unit {parts[1]!r} "
                          f"(position {len(parts[0]) + 1})")
    factor = _UNITS[unit]
    return number if factor is None else number * factor


PRESET_NAMES = ("angle_tracking", "positioning_cdf", "throughput_cdf", "custom")


@dataclass
class ExperimentConfig:
    preset: str = "positioning_cdf"
    seed: int = 0
    out_dir: str = "runs/out"
    n_trajectories: int = 5
    duration: float = 10.0
    # scenario
    n_an: int = 16
    an_height: float = 5.0
    an_spacing: float = 37.0
    grid_blocks: tuple = (1, 1)
    speed_range: tuple = (30 / 3.6, 50 / 3.6)
    ue_density: float = 1000.0  # per km^2, throughput experiment drops
    clock: ClockModel = field(default_factory=ClockModel)
    numerology: Numerology = field(default_factory=Numerology)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    # fusion experiment
    fusion_modes: tuple = ("doa_only", "pos_clock", "pos_sync")
    rs_bandwidths: tuple = (4.8e6, 9.6e6)
    association_radius: float = 150.0
    # comms experiment
    schedulers: tuple = ("round_robin", "fair_td")
    comms_duration: float = 0.2
    comms_n_ue: int = 18
    comms_n_an: int = 5
    comms_an_spacing: float = 60.0
    # angle experiment
    n_ul_interferers: int = 1
    channel_dump: bool = False

    def grid(self) -> StreetGrid:
        return StreetGrid(n_blocks_x=self.grid_blocks[0], n_blocks_y=self.grid_blocks[1])


_SCALARS = {
    "experiment.preset": str,
    "experiment.seed": int,
    "experiment.out_dir": str,
    "experiment.n_trajectories": int,
    "experiment.duration": "qty",
    "experiment.channel_dump": bool,
    "scenario.n_an": int,
    "scenario.an_height": "qty",
    "scenario.an_spacing": "qty",
    "scenario.grid_blocks": "int2",
    "scenario.speed_range": "qty2",
    "scenario.ue_density": "qty",
    "scenario.clock_initial_offset_std": "qty",
    "scenario.clock_drift_std": "qty",
    "scenario.clock_drift_random_walk_std": "qty",
    "numerology.carrier_frequency": "qty",
    "numerology.subcarrier_spacing": "qty",
    "numerology.tti_duration": "qty",
    "numerology.n_subcarriers": int,
    "numerology.pilot_period_ttis": int,
    "numerology.rs_bandwidth": "qty",
    "numerology.dl_ul_ratio": "qty",
    "channel.rice_k_db": "qty",
    "channel.coherence_time": "qty",
    "channel.los_coherence_time": "qty",
    "channel.n_ul_interferers": int,
    "tracking.angular_accel_std": "qty",
    "tracking.multipath_toa_std": "qty",
    "fusion.modes": "strlist",
    "fusion.rs_bandwidths": "qtylist",
    "fusion.association_radius": "qty",
    "comms.schedulers": "strlist",
    "comms.duration": "qty",
    "comms.n_ue": int,
    "comms.n_an": int,
    "comms.an_spacing": "qty",
}


def _convert(kind, raw, path):
    if kind == "qty":
        return parse_quantity(raw, path)
    if kind is int:
        if not isinstance(raw, int) or isinstance(raw, bool):
            raise ConfigError(f"{path}: expected an integer")
        return raw
    if kind is str:
        if not isinstance(raw, str):
            raise ConfigError(f"{path}: expected a string")
        return raw
    if kind is bool:
        if not isinstance(raw, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return raw
    if kind == "int2":
        if (not isinstance(raw, (list, tuple)) or len(raw) != 2
                or not all(isinstance(v, int) for v in raw)):
            raise ConfigError(f"{path}: expected two integers")
        return tuple(raw)
    if kind == "qty2":
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            raise ConfigError(f"{path}: expected two quantities")
        return tuple(parse_quantity(v, path) for v in raw)
    if kind == "qtylist":
        if not isinstance(raw, (list, tuple)) or not raw:
            raise ConfigError(f"{path}: expected a list of quantities")
        return tuple(parse_quantity(v, path) for v in raw)
    if kind == "strlist":
        if not isinstance(raw, (list, tuple)) or not all(isinstance(v, str) for v in raw):
            raise ConfigError(f"{path}: expected a list of strings")
        return tuple(raw)
    raise AssertionError(kind)


def validate_config(text: str) -> ExperimentConfig:
    """Parse and strictly validate a configuration document."""
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"not a valid document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping of sections")

    values = {}
    for section, content in doc.items():
        if not isinstance(content, dict):
            raise ConfigError(f"{section}: section must be a mapping")
        for key, raw in content.items():
            path = f"{section}.{key}"
            if path not in _SCALARS:
                raise ConfigError(f"unknown key {path}")
            values[path] = _convert(_SCALARS[path], raw, path)

    if "experiment.seed" not in values:
        raise ConfigError("experiment.seed is required (no wall-clock seeding)")
    preset = values.get("experiment.preset", "custom")
    if preset not in PRESET_NAMES:
        raise ConfigError(f"experiment.preset: unknown preset {preset!r}")

    cfg = ExperimentConfig(preset=preset, seed=values["experiment.seed"])
    simple = {
        "experiment.out_dir": "out_dir",
        "experiment.n_trajectories": "n_trajectories",
        "experiment.duration": "duration",
        "experiment.channel_dump": "channel_dump",
        "scenario.n_an": "n_an",
        "scenario.an_height": "an_height",
        "scenario.an_spacing": "an_spacing",
        "scenario.grid_blocks": "grid_blocks",
        "scenario.speed_range": "speed_range",
        "scenario.ue_density": "ue_density",
        "fusion.modes": "fusion_modes",
        "fusion.rs_bandwidths": "rs_bandwidths",
        "fusion.association_radius": "association_radius",
        "comms.schedulers": "schedulers",
        "comms.duration": "comms_duration",
        "comms.n_ue": "comms_n_ue",
        "comms.n_an": "comms_n_an",
        "comms.an_spacing": "comms_an_spacing",
        "channel.n_ul_interferers": "n_ul_interferers",
    }
    for path, attr in simple.items():
        if path in values:
            setattr(cfg, attr, values[path])

    num_kwargs = {}
    for key in ("carrier_frequency", "subcarrier_spacing", "tti_duration",
                "n_subcarriers", "pilot_period_ttis", "rs_bandwidth"):
        path = f"numerology.{key}"
        if path in values:
            num_kwargs[key] = values[path]
    if "numerology.dl_ul_ratio" in values:
        num_kwargs["dl_fraction"] = values["numerology.dl_ul_ratio"]
    if num_kwargs:
        try:
            cfg.numerology = Numerology(**{**_as_dict(cfg.numerology), **num_kwargs})
        except ValueError as exc:
            raise ConfigError(f"numerology: {exc}") from exc

    chan_kwargs = {}
    for key in ("rice_k_db", "coherence_time", "los_coherence_time"):
        path = f"channel.{key}"
        if path in values:
            chan_kwargs[key] = values[path]
    if chan_kwargs:
        cfg.channel = ChannelConfig(**{**_as_dict(cfg.channel), **chan_kwargs})

    track_kwargs = {}
    for key in ("angular_accel_std", "multipath_toa_std"):
        path = f"tracking.{key}"
        if path in values:
            track_kwargs[key] = values[path]
    if track_kwargs:
        cfg.tracking = TrackingConfig(**{**_as_dict(cfg.tracking), **track_kwargs})

    clock_kwargs = {}
    for src, dst in (("scenario.clock_initial_offset_std", "initial_offset_std"),
                     ("scenario.clock_drift_std", "drift_std"),
                     ("scenario.clock_drift_random_walk_std", "drift_random_walk_std")):
        if src in values:
            clock_kwargs[dst] = values[src]
    if clock_kwargs:
        try:
            cfg.clock = ClockModel(**{**_as_dict(cfg.clock), **clock_kwargs})
        except ValueError as exc:
            raise ConfigError(f"scenario clock: {exc}") from exc

    for mode in cfg.fusion_modes:
        if mode not in ("doa_only", "pos_clock", "pos_sync"):
            raise ConfigError(f"fusion.modes: unknown mode {mode!r}")
    for sched in cfg.schedulers:
        if sched not in ("round_robin", "fair_td"):
            raise ConfigError(f"comms.schedulers: unknown scheduler {sched!r}")
    return cfg


def _as_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dc_fields(obj)}


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return validate_config(fh.read())
