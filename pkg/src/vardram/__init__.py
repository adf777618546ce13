"""Variation-aware DRAM simulator with victim-bank remapping and power gating."""

from .config import ScenarioConfig, load_config
from .dram import Geometry, TimingParams, decode_address, encode_address
from .report import compare, run

__version__ = "0.1.0"

__all__ = [
    "Geometry",
    "ScenarioConfig",
    "TimingParams",
    "compare",
    "decode_address",
    "encode_address",
    "load_config",
    "run",
]
