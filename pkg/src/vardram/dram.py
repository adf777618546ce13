"""DRAM geometry, timing, address decoding and the per-bank state machine.

Simulated time is kept in integer picoseconds so that nanosecond timing
parameters that do not divide the clock period (e.g. a +18 ns tRAS derate at
tCK = 1.25 ns) stay exact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

from .errors import ConfigError, IllegalCommand


def ns_to_ps(ns: float) -> int:
    return int(round(ns * 1000))


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class Geometry:
    channels: int = 1
    ranks_per_channel: int = 1
    banks_per_rank: int = 8
    rows_per_bank: int = 32768
    cols_per_row: int = 1024
    bytes_per_column: int = 8

    def __post_init__(self):
        for name in ("channels", "ranks_per_channel", "banks_per_rank",
                     "rows_per_bank", "cols_per_row", "bytes_per_column"):
            if not _is_pow2(getattr(self, name)):
                raise ConfigError(f"geometry.{name} must be a power of two")

    @property
    def offset_bits(self) -> int:
        return self.bytes_per_column.bit_length() - 1

    @property
    def col_bits(self) -> int:
        return self.cols_per_row.bit_length() - 1

    @property
    def bank_bits(self) -> int:
        return self.banks_per_rank.bit_length() - 1

    @property
    def rank_bits(self) -> int:
        return self.ranks_per_channel.bit_length() - 1

    @property
    def row_bits(self) -> int:
        return self.rows_per_bank.bit_length() - 1

    @property
    def channel_bits(self) -> int:
        return self.channels.bit_length() - 1

    @property
    def banks_per_channel(self) -> int:
        return self.ranks_per_channel * self.banks_per_rank

    @property
    def bank_bytes(self) -> int:
        return self.rows_per_bank * self.cols_per_row * self.bytes_per_column

    @property
    def channel_bytes(self) -> int:
        return self.banks_per_channel * self.bank_bytes

    @property
    def capacity(self) -> int:
        return self.channels * self.channel_bytes

    @property
    def slots_per_bank(self) -> int:
        return self.rows_per_bank * self.cols_per_row


class DecodedAddress(NamedTuple):
    channel: int
    rank: int
    bank: int
    row: int
    column: int


def decode_address(address: int, geometry: Geometry) -> DecodedAddress:
    """Bit-slice a byte address as channel:row:rank:bank:column:offset (MSB first)."""
    if not 0 <= address < geometry.capacity:
        raise ValueError(f"address {address:#x} outside capacity {geometry.capacity:#x}")
    g = geometry
    a = address >> g.offset_bits
    column = a & (g.cols_per_row - 1)
    a >>= g.col_bits
    bank = a & (g.banks_per_rank - 1)
    a >>= g.bank_bits
    rank = a & (g.ranks_per_channel - 1)
    a >>= g.rank_bits
    row = a & (g.rows_per_bank - 1)
    a >>= g.row_bits
    return DecodedAddress(a, rank, bank, row, column)


def encode_address(d: DecodedAddress, geometry: Geometry, offset: int = 0) -> int:
    g = geometry
    bounds = (g.channels, g.ranks_per_channel, g.banks_per_rank, g.rows_per_bank, g.cols_per_row)
    for value, bound, name in zip(d, bounds, DecodedAddress._fields):
        if not 0 <= value < bound:
            raise ValueError(f"{name}={value} out of range [0, {bound})")
    a = d.channel
    a = (a << g.row_bits) | d.row
    a = (a << g.rank_bits) | d.rank
    a = (a << g.bank_bits) | d.bank
    a = (a << g.col_bits) | d.column
    return (a << g.offset_bits) | offset


@dataclass(frozen=True)
class TimingParams:
    """Per-bank timing in nanoseconds; bursts in clock cycles.

    ``tRC`` is derived (tRAS + tRP) when omitted and checked otherwise.
    """

    tRAS: float = 32.0
    tRP: float = 13.75
    tRC: Optional[float] = None
    tCK: float = 1.25
    tREFI: float = 7812.5
    tREFW: float = 64e6
    read_burst: int = 4
    write_burst: int = 4
    tRFC: float = 260.0
    tXP: float = 6.0

    def __post_init__(self):
        rc = self.tRAS + self.tRP
        if self.tRC is None:
            object.__setattr__(self, "tRC", rc)
        elif self.tRC != rc:
            raise ConfigError(f"tRC={self.tRC} must equal tRAS + tRP = {rc}")
        for name in ("tRAS", "tRP", "tCK", "tREFI", "tREFW", "tRFC"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"timing.{name} must be positive")
        if self.tXP < 0 or self.read_burst < 1 or self.write_burst < 1:
            raise ConfigError("timing bursts must be >= 1 and tXP >= 0")
        ratio = self.tREFW / self.tREFI
        if ratio != int(ratio) or ratio < 1:
            raise ConfigError(f"tREFW/tREFI = {ratio} must be a positive integer")

    def with_tras(self, tras: float) -> "TimingParams":
        return replace(self, tRAS=tras, tRC=tras + self.tRP)

    @property
    def tck_ps(self) -> int:
        return ns_to_ps(self.tCK)

    def burst_ps(self, write: bool = False) -> int:
        return (self.write_burst if write else self.read_burst) * self.tck_ps


class PowerState(enum.Enum):
    ACTIVE_IDLE = "ACTIVE_IDLE"
    ROW_OPEN = "ROW_OPEN"
    POWERED_DOWN_LP = "POWERED_DOWN_LP"
    GATED_OFF = "GATED_OFF"


class CommandKind(enum.Enum):
    ACT = "ACT"
    PRE = "PRE"
    READ = "READ"
    WRITE = "WRITE"
    REFRESH = "REFRESH"


class Command(NamedTuple):
    kind: CommandKind
    arg: Optional[int] = None  # row for ACT, column for READ/WRITE

    @classmethod
    def act(cls, row: int) -> "Command":
        return cls(CommandKind.ACT, row)

    @classmethod
    def read(cls, col: int = 0) -> "Command":
        return cls(CommandKind.READ, col)

    @classmethod
    def write(cls, col: int = 0) -> "Command":
        return cls(CommandKind.WRITE, col)


PRE = Command(CommandKind.PRE)
REFRESH = Command(CommandKind.REFRESH)


@dataclass
class BankState:
    """One bank: power state, open row, busy horizon and state-time ledger.

    ``state_ps`` accumulates residency per power state; ``since`` is the time
    the current state was entered. Background energy is computed from it.
    """

    timing: TimingParams = field(default_factory=TimingParams)
    power: PowerState = PowerState.ACTIVE_IDLE
    open_row: Optional[int] = None
    busy_until: int = 0
    occupancy: int = 0
    since: int = 0
    state_ps: dict = field(default_factory=lambda: {s: 0 for s in PowerState})
    gate_events: int = 0
    act_count: int = 0
    read_bursts: int = 0
    write_bursts: int = 0
    refreshes: int = 0
    busy_log: Optional[list] = None  # (start, end) pairs when tracing is enabled

    def _enter(self, state: PowerState, now: int) -> None:
        now = max(now, self.since)
        self.state_ps[self.power] += now - self.since
        self.power = state
        self.since = now

    def _occupy(self, start: int, end: int) -> None:
        if self.busy_log is not None:
            self.busy_log.append((start, end))
        self.busy_until = end

    def issue(self, cmd: Command, now: int, extra_ras_ps: int = 0) -> int:
        """Issue one command at ``now``; returns its completion time (ps)."""
        if self.power is PowerState.GATED_OFF:
            raise IllegalCommand(f"{cmd.kind.value} to GATED_OFF bank")
        if self.power is PowerState.POWERED_DOWN_LP:
            raise IllegalCommand(f"{cmd.kind.value} to powered-down bank (wake first)")
        if now < self.busy_until:
            raise IllegalCommand(f"{cmd.kind.value} at {now} while busy until {self.busy_until}")
        t = self.timing
        kind = cmd.kind
        if kind is CommandKind.ACT:
            if self.power is PowerState.ROW_OPEN:
                raise IllegalCommand("ACT on bank with an open row")
            done = now + ns_to_ps(t.tRAS) + extra_ras_ps
            self.open_row = cmd.arg
            self.act_count += 1
            self._enter(PowerState.ROW_OPEN, now)
        elif kind is CommandKind.PRE:
            if self.power is not PowerState.ROW_OPEN:
                raise IllegalCommand("PRE without an open row")
            done = now + ns_to_ps(t.tRP)
            self.open_row = None
            self._enter(PowerState.ACTIVE_IDLE, now)
        elif kind in (CommandKind.READ, CommandKind.WRITE):
            if self.power is not PowerState.ROW_OPEN:
                raise IllegalCommand(f"{kind.value} on closed bank")
            write = kind is CommandKind.WRITE
            done = now + t.burst_ps(write)
            if write:
                self.write_bursts += 1
            else:
                self.read_bursts += 1
        elif kind is CommandKind.REFRESH:
            if self.power is not PowerState.ACTIVE_IDLE:
                raise IllegalCommand("REFRESH requires a precharged bank")
            done = now + ns_to_ps(t.tRFC)
            self.refreshes += 1
        else:  # pragma: no cover
            raise IllegalCommand(f"unknown command {cmd!r}")
        self._occupy(now, done)
        return done

    def set_power_state(self, new_state: PowerState, now: int) -> None:
        """Move between ACTIVE_IDLE, POWERED_DOWN_LP and GATED_OFF.

        Entering or leaving GATED_OFF counts one sleep/wake transient.
        """
        if new_state is PowerState.ROW_OPEN:
            raise IllegalCommand("ROW_OPEN is entered by ACT, not set directly")
        if new_state is self.power:
            return
        if new_state in (PowerState.GATED_OFF, PowerState.POWERED_DOWN_LP):
            if self.open_row is not None or self.power is PowerState.ROW_OPEN:
                raise IllegalCommand(f"cannot enter {new_state.value} with an open row")
            if now < self.busy_until:
                raise IllegalCommand(f"cannot enter {new_state.value} while busy")
        if PowerState.GATED_OFF in (new_state, self.power):
            self.gate_events += 1
        self._enter(new_state, now)

    def hold(self, now: int, duration_ps: int) -> int:
        """Block the bank for an internal operation (copy); rows end closed."""
        if self.power is PowerState.GATED_OFF:
            raise IllegalCommand("internal copy touching a GATED_OFF bank")
        start = max(now, self.busy_until)
        self.open_row = None
        if self.power is PowerState.ROW_OPEN:
            self._enter(PowerState.ACTIVE_IDLE, start)
        self._occupy(start, start + duration_ps)
        return start + duration_ps

    def settle(self, end: int) -> None:
        """Close the state-time ledger at ``end``."""
        if end > self.since:
            self.state_ps[self.power] += end - self.since
            self.since = end


def service_request(bank: BankState, write: bool, row: int, col: int, now: int) -> int:
    """Serve one access under the open-page policy, commands back to back.

    Row hit: burst only; row closed: ACT + burst; row conflict: PRE + ACT + burst.
    """
    t = max(now, bank.busy_until)
    if bank.open_row != row:
        if bank.open_row is not None:
            t = bank.issue(PRE, t)
        t = bank.issue(Command.act(row), t)
    return bank.issue(Command.write(col) if write else Command.read(col), t)
