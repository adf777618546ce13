"""Refresh scheduling and weak-row modelling for reduced-refresh operation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Set, Tuple

import numpy as np

from .dram import Geometry, ns_to_ps
from .errors import ConfigError

MULTIPLIERS = (1, 4)


@dataclass(frozen=True)
class RefreshConfig:
    trefw: float = 64e6  # ns, nominal window
    trefi: float = 7812.5  # ns, JEDEC-exact so 64 ms / tREFI = 8192
    multiplier: int = 1  # 4 stretches the window to 256 ms
    ber: float = 4e-9
    cells_per_row: int = 65536

    def __post_init__(self):
        if self.multiplier not in MULTIPLIERS:
            raise ConfigError(f"refresh multiplier must be one of {MULTIPLIERS}")
        ratio = self.trefw / self.trefi
        if ratio != int(ratio):
            raise ConfigError("trefw/trefi must be an integer")
        if not 0.0 <= self.ber <= 1.0:
            raise ConfigError("ber must lie in [0, 1]")
        if self.cells_per_row < 1:
            raise ConfigError("cells_per_row must be >= 1")

    @property
    def period_ns(self) -> float:
        return self.trefi * self.multiplier

    @property
    def period_ps(self) -> int:
        return ns_to_ps(self.period_ns)

    @property
    def window_ns(self) -> float:
        return self.trefw * self.multiplier


def weak_row_probability(ber: float, cells_per_row: int) -> float:
    """Probability that a row holds at least one cell failing the extended window."""
    if not 0.0 <= ber <= 1.0:
        raise ValueError("ber must lie in [0, 1]")
    if cells_per_row < 1:
        raise ValueError("cells_per_row must be >= 1")
    if ber == 1.0:
        return 1.0
    # 1 - (1 - ber)^n without cancellation
    return -math.expm1(cells_per_row * math.log1p(-ber))


def sample_weak_rows(geometry: Geometry, probability: float, seed: int) -> Set[Tuple[int, int]]:
    """Independent Bernoulli draw per row; returns {(flat bank, row)} for one channel."""
    if not 0.0 <= probability <= 1.0:
        raise ValueError("probability must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    hits = rng.random((geometry.banks_per_channel, geometry.rows_per_bank)) < probability
    banks, rows = np.nonzero(hits)
    return {(int(b), int(r)) for b, r in zip(banks, rows)}


def refresh_times(config: RefreshConfig, run_ps: int) -> List[int]:
    """Issue instants k * period for k = 1 .. floor(run / period)."""
    period = config.period_ps
    return [k * period for k in range(1, run_ps // period + 1)]


def schedule_refresh(config: RefreshConfig, run_cycles: int, tck_ns: float = 1.25, ranks: int = 1):
    """Return (per-rank command stream as (time_ps, rank) tuples, total count)."""
    run_ps = run_cycles * ns_to_ps(tck_ns)
    times = refresh_times(config, run_ps)
    stream = [(t, r) for t in times for r in range(ranks)]
    return stream, len(stream)


def row_copy_ps(cols_per_row: int, trc_ns: float, burst_ps: int, cols_per_burst: int = 8) -> int:
    """Latency to move one row through the internal bus: one tRC plus one burst per 64 B."""
    return ns_to_ps(trc_ns) + math.ceil(cols_per_row / cols_per_burst) * burst_ps


def remap_weak_rows(weak_rows, engine, dest_for, copy_ps_per_row: int):
    """Install a row redirect per weak row; returns (entries, upfront latency in ps)."""
    entries = engine.remap_weak_rows(weak_rows, dest_for)
    return entries, len(entries) * copy_ps_per_row


def load_weak_rows(path, rows_per_bank: int) -> Set[Tuple[int, int]]:
    """Read a weak-row profile.

    Each line holds one row id: either a channel-wide row index
    (``flat_bank * rows_per_bank + row``) or an explicit ``<bank> <row>`` pair.
    """
    out = set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(":", " ").split()
        try:
            if len(parts) == 1:
                out.add(divmod(int(parts[0], 0), rows_per_bank))
            elif len(parts) == 2:
                out.add((int(parts[0], 0), int(parts[1], 0)))
            else:
                raise ValueError
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: expected a row id or '<bank> <row>'") from None
    return out


def save_weak_rows(rows, path) -> None:
    Path(path).write_text("".join(f"{b} {r}\n" for b, r in sorted(rows)))
