"""Scenario configuration: YAML loading, defaults, presets and validation."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .dram import Geometry, TimingParams
from .energy import DeviceEnergyProfile
from .errors import ConfigError
from .refresh import RefreshConfig
from .variation import VariationParams

SCENARIOS = ("IDEAL", "PV", "VAR")
GATING_MODES = ("static_close", "dynamic_close")

PRESETS: Dict[str, Dict[str, Any]] = {
    "ID": {"scenario": "IDEAL"},
    "PV": {"scenario": "PV"},
    "VAR": {"scenario": "VAR"},
    "ID-LP": {"scenario": "IDEAL", "lp_mode": True},
    "PV-LP": {"scenario": "PV", "lp_mode": True},
    "VAR-LP": {"scenario": "VAR", "lp_mode": True},
    "VAR-N-R": {"scenario": "VAR", "refresh_multiplier": 4, "weak_row_remap": True},
    "VAR-LP-R": {"scenario": "VAR", "lp_mode": True, "refresh_multiplier": 4, "weak_row_remap": True},
}


@dataclass(frozen=True)
class VariationConfig:
    params: VariationParams = field(default_factory=VariationParams)
    grid: Tuple[int, int] = (32, 32)
    threshold: float = 0.05
    severity_max: float = 0.08
    delta_tras_max: float = 18.0
    pairs: Optional[Tuple[Tuple[int, int, int, int], ...]] = None  # manufacturer pairs
    map_file: Optional[str] = None


@dataclass(frozen=True)
class RemapConfig:
    node_bytes: int = 8
    payload_bytes: int = 8
    trie_fraction: float = 0.02
    copy_latency_ns: Optional[float] = None  # default 2 bursts + tRC
    translation_tras_overhead_ns: float = 0.0

    def __post_init__(self):
        if self.node_bytes < 1 or self.payload_bytes < 0:
            raise ConfigError("remap.node_bytes must be >= 1 and payload_bytes >= 0")
        if not 0 < self.trie_fraction <= 1:
            raise ConfigError("remap.trie_fraction must lie in (0, 1]")
        if self.translation_tras_overhead_ns < 0:
            raise ConfigError("remap.translation_tras_overhead_ns must be >= 0")


@dataclass(frozen=True)
class TraceSource:
    bundled: Optional[str] = None
    file: Optional[str] = None
    kind: Optional[str] = None
    seed: int = 0
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        given = [x for x in (self.bundled, self.file, self.kind) if x is not None]
        if len(given) != 1:
            raise ConfigError("trace needs exactly one of: bundled, file, kind")

    def label(self) -> str:
        if self.bundled:
            return f"bundled:{self.bundled}"
        if self.file:
            return f"file:{self.file}"
        return f"gen:{self.kind}:{self.seed}"


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "VAR"
    label: str = ""
    lp_mode: bool = False
    lp_threshold_cycles: int = 100
    refresh_multiplier: int = 1
    weak_row_remap: bool = False
    gating_mode: str = "static_close"
    trigger_cycle: int = 0
    reopen_cycle: Optional[int] = None
    victim_count: int = 4
    seed: int = 0
    run_cycles: int = 0
    check_weak_rows: bool = True
    geometry: Geometry = field(default_factory=Geometry)
    timing: TimingParams = field(default_factory=TimingParams)
    energy: DeviceEnergyProfile = field(default_factory=DeviceEnergyProfile)
    variation: VariationConfig = field(default_factory=VariationConfig)
    refresh: RefreshConfig = field(default_factory=RefreshConfig)
    weak_rows_file: Optional[str] = None
    remap: RemapConfig = field(default_factory=RemapConfig)
    trace: TraceSource = field(default_factory=lambda: TraceSource(bundled="idle_a"))

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if self.gating_mode not in GATING_MODES:
            raise ConfigError(f"gating_mode must be one of {GATING_MODES}")
        if self.refresh_multiplier != self.refresh.multiplier:
            raise ConfigError("refresh_multiplier and refresh.multiplier disagree")
        if self.scenario == "VAR" and self.victim_count < 1:
            raise ConfigError("VAR requires victim_count >= 1")
        if self.victim_count < 0 or self.victim_count > self.geometry.banks_per_channel // 2:
            raise ConfigError("victim_count must lie in [0, banks_per_channel / 2]")
        if self.refresh_multiplier == 4 and not self.weak_row_remap:
            raise ConfigError("4x refresh window requires weak_row_remap (weak rows would lose data)")
        if self.weak_row_remap and self.scenario != "VAR":
            raise ConfigError("weak_row_remap needs the remap engine (scenario VAR)")
        if self.lp_threshold_cycles < 1 or self.trigger_cycle < 0 or self.run_cycles < 0:
            raise ConfigError("lp_threshold_cycles >= 1, trigger_cycle >= 0, run_cycles >= 0")
        if self.reopen_cycle is not None and self.reopen_cycle < self.trigger_cycle:
            raise ConfigError("reopen_cycle must not precede trigger_cycle")

    @property
    def name(self) -> str:
        return self.label or self.scenario


def default_config_text() -> str:
    return resources.files("vardram").joinpath("data/default.yaml").read_text()


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> dict:
    """``a.b.c=value`` -> {'a': {'b': {'c': value}}} with YAML-typed value."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw)
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def _build(cls, raw: dict, section: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def config_from_dict(raw: dict, scenario: Optional[str] = None) -> ScenarioConfig:
    raw = copy.deepcopy(raw)
    presets = raw.pop("scenarios", {}) or {}
    if scenario is not None:
        if scenario in presets:
            raw = deep_merge(raw, presets[scenario])
        elif scenario in PRESETS:
            raw = deep_merge(raw, PRESETS[scenario])
        else:
            raise ConfigError(f"unknown scenario preset {scenario!r}; choose from {sorted(PRESETS)}")
        raw.setdefault("label", scenario)
        if not raw.get("label"):
            raw["label"] = scenario
    var = dict(raw.pop("variation", {}) or {})
    vparams = {k: var.pop(k) for k in ("mean", "sigma_over_mean", "systematic_fraction", "phi") if k in var}
    vparams["seed"] = raw.get("seed", 0)
    if "grid" in var:
        var["grid"] = tuple(var["grid"])
    if var.get("pairs") is not None:
        var["pairs"] = tuple(tuple(int(x) for x in p) for p in var["pairs"])
    variation = _build(VariationConfig, dict(var, params=_build(VariationParams, vparams, "variation")), "variation")
    refresh_raw = dict(raw.pop("refresh", {}) or {})
    weak_rows_file = refresh_raw.pop("weak_rows_file", None)
    refresh_raw["multiplier"] = raw.get("refresh_multiplier", 1)
    top = {k: v for k, v in raw.items() if k not in ("geometry", "timing", "energy", "remap", "trace")}
    try:
        return ScenarioConfig(
            geometry=_build(Geometry, raw.get("geometry"), "geometry"),
            timing=_build(TimingParams, raw.get("timing"), "timing"),
            energy=_build(DeviceEnergyProfile, raw.get("energy"), "energy"),
            variation=variation,
            refresh=_build(RefreshConfig, refresh_raw, "refresh"),
            weak_rows_file=weak_rows_file,
            remap=_build(RemapConfig, raw.get("remap"), "remap"),
            trace=_build(TraceSource, raw.get("trace"), "trace"),
            **top,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_raw(path=None, overrides: List[str] = ()) -> dict:
    raw = yaml.safe_load(default_config_text()) or {}
    if path is not None:
        user = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = deep_merge(raw, user)
    for o in overrides:
        raw = deep_merge(raw, parse_override(o))
    return raw


def load_config(path=None, scenario: Optional[str] = None, overrides: List[str] = ()) -> ScenarioConfig:
    return config_from_dict(load_raw(path, overrides), scenario)


def with_overrides(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    if "refresh_multiplier" in changes:
        changes.setdefault("refresh", dataclasses.replace(cfg.refresh, multiplier=changes["refresh_multiplier"]))
    return dataclasses.replace(cfg, **changes)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return _plain(dataclasses.asdict(cfg))


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x
