"""Memory traces: the request record, a text parser/emitter and synthetic generators.

Line format::

    <cycle> <R|W> <hex address> [<hex payload tag>]

Blank lines and ``#`` comments are ignored. Files ending in ``.gz`` are
decompressed transparently.
"""

from __future__ import annotations

import gzip
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, List, Optional, Sequence, Union

import numpy as np

from .dram import DecodedAddress, Geometry, encode_address
from .errors import ConfigError, TraceOrderError, TraceParseError

READ = "R"
WRITE = "W"
TAG_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class MemoryRequest:
    issue_cycle: int
    op: str
    address: int
    tag: int

    @property
    def is_write(self) -> bool:
        return self.op == WRITE


def default_tag(address: int, lineno: int) -> int:
    h = hashlib.blake2b(f"{address}:{lineno}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def _open_text(source) -> IO[str]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        if path.suffix == ".gz":
            return io.TextIOWrapper(gzip.open(path, "rb"))
        return open(path)
    return source


def iter_trace(source, capacity: Optional[int] = None) -> Iterator[MemoryRequest]:
    fh = _open_text(source)
    try:
        last = None
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                raise TraceParseError(lineno, f"expected 3 or 4 fields, got {len(parts)}")
            try:
                cycle = int(parts[0], 10)
                address = int(parts[2], 16)
                tag = int(parts[3], 16) if len(parts) == 4 else default_tag(address, lineno)
            except ValueError as exc:
                raise TraceParseError(lineno, str(exc)) from None
            op = parts[1].upper()
            if op not in (READ, WRITE):
                raise TraceParseError(lineno, f"op must be R or W, got {parts[1]!r}")
            if cycle < 0 or address < 0 or not 0 <= tag <= TAG_MASK:
                raise TraceParseError(lineno, "negative cycle/address or tag wider than 64 bits")
            if capacity is not None and address >= capacity:
                raise TraceParseError(lineno, f"address {address:#x} beyond capacity {capacity:#x}")
            if last is not None and cycle < last:
                raise TraceOrderError(lineno, f"cycle {cycle} after {last}")
            last = cycle
            yield MemoryRequest(cycle, op, address, tag)
    finally:
        if fh is not source:
            fh.close()


def parse_trace(source, capacity: Optional[int] = None) -> List[MemoryRequest]:
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    return list(iter_trace(source, capacity))


def format_request(r: MemoryRequest) -> str:
    return f"{r.issue_cycle} {r.op} {r.address:#x} {r.tag:#x}"


def emit(requests: Iterable[MemoryRequest], dest: Union[str, Path, IO[str], None] = None) -> str:
    text = "".join(format_request(r) + "\n" for r in requests)
    if dest is None:
        return text
    if isinstance(dest, (str, Path)):
        path = Path(dest)
        if path.suffix == ".gz":
            with gzip.open(path, "wt") as fh:
                fh.write(text)
        else:
            path.write_text(text)
    else:
        dest.write(text)
    return text


def fingerprint(requests: Sequence[MemoryRequest]) -> str:
    h = hashlib.sha256()
    for r in requests:
        h.update(format_request(r).encode())
        h.update(b"\n")
    return h.hexdigest()


# -- synthetic generators ---------------------------------------------------

KINDS = ("uniform", "hotspot", "collision_stress", "idle_heavy")

_DEFAULTS = {
    "uniform": dict(n=2000, gap=64, write_fraction=0.3),
    "hotspot": dict(n=2000, gap=64, write_fraction=0.3, banks=[0, 1], rows=64, cols=128, hot_fraction=1.0),
    "collision_stress": dict(
        victim=[0, 0], target=[0, 1], n_prefill=64, n_victim=64, overlap=1.0, gap=64,
        rows=4, read_back=True,
    ),
    "idle_heavy": dict(
        n_bursts=20, burst_len=16, intra_gap=48, idle_gap=40000, write_fraction=0.3,
        banks=None, rows=16,
    ),
}


def generator_defaults(kind: str) -> dict:
    if kind not in KINDS:
        raise ConfigError(f"unknown trace kind {kind!r}; choose from {KINDS}")
    return dict(_DEFAULTS[kind])


def _addr(geometry: Geometry, rank: int, bank: int, row: int, col: int, channel: int = 0) -> int:
    return encode_address(DecodedAddress(channel, rank, bank, row, col), geometry)


def _tag(rng) -> int:
    return int(rng.integers(0, 1 << 63)) | 1  # never 0, so a missing tag is distinguishable


def generate_synthetic(kind: str, geometry: Geometry, seed: int = 0, **params) -> List[MemoryRequest]:
    cfg = generator_defaults(kind)
    unknown = set(params) - set(cfg)
    if unknown:
        raise ConfigError(f"unknown {kind} parameters: {sorted(unknown)}")
    cfg.update(params)
    rng = np.random.default_rng(seed)
    return _GENERATORS[kind](geometry, rng, **cfg)


def _uniform(g: Geometry, rng, n, gap, write_fraction):
    out = []
    cycle = 0
    for _ in range(n):
        addr = int(rng.integers(0, g.capacity >> g.offset_bits)) << g.offset_bits
        op = WRITE if rng.random() < write_fraction else READ
        out.append(MemoryRequest(cycle, op, addr, _tag(rng)))
        cycle += int(rng.integers(1, 2 * gap))
    return out


def _hotspot(g: Geometry, rng, n, gap, write_fraction, banks, rows, cols, hot_fraction):
    """Requests confined to ``banks`` (flat ids within channel 0) and a small row/col window."""
    banks = list(banks)
    for b in banks:
        if not 0 <= b < g.banks_per_channel:
            raise ConfigError(f"hotspot bank {b} outside geometry")
    rows = min(rows, g.rows_per_bank)
    cols = min(cols, g.cols_per_row)
    out = []
    cycle = 0
    for _ in range(n):
        fb = banks[int(rng.integers(len(banks)))]
        rank, bank = divmod(fb, g.banks_per_rank)
        if rng.random() < hot_fraction:
            row, col = int(rng.integers(rows)), int(rng.integers(cols))
        else:
            row, col = int(rng.integers(g.rows_per_bank)), int(rng.integers(g.cols_per_row))
        op = WRITE if rng.random() < write_fraction else READ
        out.append(MemoryRequest(cycle, op, _addr(g, rank, bank, row, col), _tag(rng)))
        cycle += int(rng.integers(1, 2 * gap))
    return out


def _collision_stress(g: Geometry, rng, victim, target, n_prefill, n_victim, overlap, gap, rows, read_back):
    """Pre-fill target-bank slots, then write victim addresses; ``overlap`` of them reuse
    a pre-filled (row, col) so that translation onto the target collides."""
    if not 0.0 <= overlap <= 1.0:
        raise ConfigError("overlap must lie in [0, 1]")
    rows = min(rows, g.rows_per_bank)
    slots = rows * g.cols_per_row
    if n_prefill > slots or n_victim > slots:
        raise ConfigError("collision_stress counts exceed the row window")
    vr, vb = victim
    tr, tb = target
    picks = rng.choice(slots, size=n_prefill, replace=False)
    filled = [divmod(int(s), g.cols_per_row) for s in picks]
    filled_set = set(filled)
    free = [divmod(s, g.cols_per_row) for s in range(slots) if divmod(s, g.cols_per_row) not in filled_set]
    n_hit = int(round(overlap * n_victim))
    if n_hit > len(filled) or n_victim - n_hit > len(free):
        raise ConfigError("collision_stress cannot satisfy the requested overlap")
    hit_idx = rng.choice(len(filled), size=n_hit, replace=False)
    miss_idx = rng.choice(len(free), size=n_victim - n_hit, replace=False)
    victim_slots = [filled[int(i)] for i in hit_idx] + [free[int(i)] for i in miss_idx]
    order = rng.permutation(len(victim_slots))
    victim_slots = [victim_slots[int(i)] for i in order]
    out = []
    cycle = 0
    for row, col in filled:
        out.append(MemoryRequest(cycle, WRITE, _addr(g, tr, tb, row, col), _tag(rng)))
        cycle += gap
    for row, col in victim_slots:
        out.append(MemoryRequest(cycle, WRITE, _addr(g, vr, vb, row, col), _tag(rng)))
        cycle += gap
    if read_back:
        for row, col in victim_slots:
            out.append(MemoryRequest(cycle, READ, _addr(g, vr, vb, row, col), 0))
            cycle += gap
    return out


def _idle_heavy(g: Geometry, rng, n_bursts, burst_len, intra_gap, idle_gap, write_fraction, banks, rows):
    """Short bursts of row-local traffic separated by long idle stretches."""
    banks = list(range(g.banks_per_channel)) if banks is None else list(banks)
    rows = min(rows, g.rows_per_bank)
    out = []
    cycle = 0
    for _ in range(n_bursts):
        fb = banks[int(rng.integers(len(banks)))]
        rank, bank = divmod(fb, g.banks_per_rank)
        row = int(rng.integers(rows))
        for _ in range(burst_len):
            col = int(rng.integers(g.cols_per_row))
            op = WRITE if rng.random() < write_fraction else READ
            out.append(MemoryRequest(cycle, op, _addr(g, rank, bank, row, col), _tag(rng)))
            cycle += intra_gap
        cycle += int(rng.integers(idle_gap // 2, idle_gap + 1))
    return out


_GENERATORS = {
    "uniform": _uniform,
    "hotspot": _hotspot,
    "collision_stress": _collision_stress,
    "idle_heavy": _idle_heavy,
}


# -- bundled workloads ------------------------------------------------------

# name -> (generator kind, seed, params, has forced collisions)
BUNDLED = {
    "idle_a": ("idle_heavy", 11, dict(n_bursts=40, burst_len=32, intra_gap=10, idle_gap=4000), False),
    "idle_b": ("idle_heavy", 12, dict(n_bursts=60, burst_len=64, intra_gap=8, idle_gap=2500), False),
    "idle_c": ("idle_heavy", 13, dict(n_bursts=30, burst_len=16, intra_gap=16, idle_gap=8000), False),
    "uniform_a": ("uniform", 21, dict(n=3000, gap=120, write_fraction=0.3), False),
    "hotspot_a": ("hotspot", 31, dict(n=2000, gap=60, banks=[0, 1, 2, 3, 4, 5, 6, 7], rows=8, cols=32), True),
}
RECORDED = {"recorded_small": "recorded_small.trace"}


def bundled_names() -> List[str]:
    return sorted(BUNDLED) + sorted(RECORDED)


def has_forced_collisions(name: str) -> bool:
    return name in BUNDLED and BUNDLED[name][3]


def load_bundled(name: str, geometry: Geometry) -> List[MemoryRequest]:
    if name in BUNDLED:
        kind, seed, params, _ = BUNDLED[name]
        return generate_synthetic(kind, geometry, seed, **params)
    if name in RECORDED:
        from importlib import resources

        text = resources.files("vardram").joinpath("data", RECORDED[name]).read_text()
        return parse_trace(io.StringIO(text), geometry.capacity)
    raise ConfigError(f"unknown bundled trace {name!r}; choose from {bundled_names()}")
