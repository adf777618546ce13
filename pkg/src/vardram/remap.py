"""Victim-bank address remapping: FLAG protocol, collision handling,
migrate-and-remap, weak-row redirects and occupancy checks.

The engine is the functional half of the memory controller. It decides
where every logical address lives and moves payload tags around when data
is migrated; the timing half (sim.Channel) turns its decisions into bank
commands.

Three address spaces are involved:

* logical   - what the trace asks for (rank, bank, row, column);
* placement - the slot an address is assigned to after victim translation
              and collision relocation; ownership is tracked here;
* physical  - placement after weak-row redirection (row granular).
"""

from __future__ import annotations

import enum
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, NamedTuple, Optional, Tuple

from .dram import Geometry
from .errors import (
    CapacityExceeded,
    ConfigError,
    FlagTransitionError,
    LengthMismatch,
    TranslationError,
)
from .trie import Override, RemapTrie, RowRedirect, TargetPair

INTERRUPT_STALL_CYCLES = 3
WEAK_ROW_STALL_CYCLES = 3
LOG_SEARCH_CYCLES = 3
OCCUPANCY_LIMIT = 0.9
TRIE_LIMIT = 0.9
ROW_KEY_FLAG = 1 << 31


class Flag(enum.Enum):
    IDLE = "00"
    MIGRATING = "01"
    GATED = "10"


_LEGAL = {
    (Flag.IDLE, Flag.MIGRATING),
    (Flag.MIGRATING, Flag.GATED),
    (Flag.GATED, Flag.MIGRATING),
    (Flag.MIGRATING, Flag.IDLE),
}


class FlagState:
    def __init__(self, value: Flag = Flag.IDLE):
        self.value = value
        self.history: List[Flag] = [value]

    def transition(self, new: Flag) -> None:
        if (self.value, new) not in _LEGAL:
            raise FlagTransitionError(f"FLAG {self.value.value} -> {new.value} is not allowed")
        self.value = new
        self.history.append(new)

    @property
    def translation_active(self) -> bool:
        # MSB drives the DEMUX/MUX select line
        return self.value.value[0] == "1"


class MigrationWriteLog:
    """(address, flag_bit) entries for writes that hit victims mid-migration."""

    def __init__(self):
        self.entries: Dict[int, int] = {}

    def add(self, address: int) -> bool:
        fresh = address not in self.entries
        self.entries[address] = 1
        return fresh

    def __contains__(self, address: int) -> bool:
        return self.entries.get(address, 0) == 1

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries.clear()


class PairState(enum.Enum):
    OPEN = "open"
    MIGRATING_FWD = "migrating_fwd"
    GATED = "gated"
    MIGRATING_REV = "migrating_rev"


@dataclass
class Pair:
    victim: int  # flat bank index within the channel
    target: int
    state: PairState = PairState.OPEN


class Action(NamedTuple):
    kind: str  # "none" | "reverse_migrate" | "reopen_all"
    banks: Tuple[int, ...] = ()


NO_ACTION = Action("none")


class Access(NamedTuple):
    placement: Tuple[int, int, int]  # flat bank, row, column
    physical: Tuple[int, int, int]
    stall_cycles: int
    interrupted: bool
    weak_row: bool
    translated: bool
    tag: Optional[int]  # value observed by a read / value now stored by a write
    copied: int  # priority copies performed on behalf of this access


class CopyOp(NamedTuple):
    address: int
    src_bank: int
    dst_bank: int


def find_free_slot(
    is_free: Callable[[int, int], bool], rows: int, cols: int, row: int, col: int
) -> Tuple[int, int]:
    """Return (row, col) if free, else the next free slot scanning column-major
    within a row and wrapping to the following row (and finally to row 0)."""
    if is_free(row, col):
        return row, col
    total = rows * cols
    start = row * cols + col
    for step in range(1, total):
        idx = (start + step) % total
        r, c = divmod(idx, cols)
        if is_free(r, c):
            return r, c
    raise CapacityExceeded(f"no free slot left in bank (requested row {row}, col {col})")


@dataclass
class Migration:
    direction: str  # "forward" | "reverse"
    pairs: List[Pair]
    pending: Deque[int] = field(default_factory=deque)
    log: MigrationWriteLog = field(default_factory=MigrationWriteLog)
    copies: int = 0
    skipped: int = 0


class RemapEngine:
    def __init__(
        self,
        geometry: Geometry,
        pairs: List[Tuple[int, int]] = (),
        primary_capacity: Optional[int] = None,
        aux_capacity: Optional[int] = None,
        node_bytes: int = 8,
        payload_bytes: int = 8,
        copy_ps: int = 0,
        tck_ps: int = 1250,
        trie_fraction: float = 0.02,
    ):
        g = geometry
        self.g = geometry
        self.col_bits = g.col_bits
        self.row_bits = g.row_bits
        self.bank_bits = g.bank_bits + g.rank_bits
        if self.col_bits + self.row_bits + self.bank_bits > 31:
            raise ConfigError("rank|bank|row|column must fit in 31 bits to form a trie key")
        cap = int(g.channel_bytes * trie_fraction)
        self.primary = RemapTrie(primary_capacity or cap, node_bytes, payload_bytes)
        self.aux = RemapTrie(aux_capacity or cap, node_bytes, 0)
        self.flag = FlagState()
        self.copy_ps = copy_ps
        self.tck_ps = tck_ps
        self.pairs: Dict[int, Pair] = {}
        targets = set()
        for v, t in pairs:
            if v in self.pairs or v in targets or t in self.pairs or t in targets or v == t:
                raise ConfigError("victim/target pairs must be disjoint")
            self.pairs[v] = Pair(v, t)
            targets.add(t)
        self.target_pair = {p.target: p for p in self.pairs.values()}
        self.where: Dict[int, int] = {}  # logical key -> placement key
        self.owner: Dict[int, int] = {}  # placement key -> logical key
        self.row_owned: Counter = Counter()  # (flat bank, row) -> owned placement slots
        self.bank_owned = [0] * g.banks_per_channel
        self.reserved_rows: set = set()
        self.row_redirect: Dict[Tuple[int, int], Tuple[int, int]] = {}
        self.weak_rows: set = set()
        self.data: Dict[int, int] = {}  # physical key -> payload tag
        self.migration: Optional[Migration] = None
        self.track_live = bool(self.pairs)
        self.reopened = False
        self.stats = Counter()

    # -- key packing ------------------------------------------------------

    def key(self, fbank: int, row: int, col: int) -> int:
        return (((fbank << self.row_bits) | row) << self.col_bits) | col

    def unkey(self, key: int) -> Tuple[int, int, int]:
        col = key & ((1 << self.col_bits) - 1)
        key >>= self.col_bits
        row = key & ((1 << self.row_bits) - 1)
        return key >> self.row_bits, row, col

    def fbank(self, rank: int, bank: int) -> int:
        return rank * self.g.banks_per_rank + bank

    def split(self, fbank: int) -> Tuple[int, int]:
        return divmod(fbank, self.g.banks_per_rank)

    def bank_range(self, fbank: int) -> Tuple[int, int]:
        lo = self.key(fbank, 0, 0)
        return lo, lo + self.g.slots_per_bank

    def row_key(self, fbank: int, row: int) -> int:
        return ROW_KEY_FLAG | self.key(fbank, row, 0)

    # -- occupancy --------------------------------------------------------

    def occupancy(self, fbank: int) -> int:
        reserved = sum(1 for (b, _r) in self.reserved_rows if b == fbank)
        return self.bank_owned[fbank] + reserved * self.g.cols_per_row

    def occupancy_fraction(self, fbank: int) -> float:
        return self.occupancy(fbank) / self.g.slots_per_bank

    def _slot_free(self, fbank: int, row: int, col: int) -> bool:
        return (fbank, row) not in self.reserved_rows and self.key(fbank, row, col) not in self.owner

    def _claim(self, logical: int, placement: int) -> None:
        prev = self.where.get(logical)
        if prev is not None:
            self._release(prev)
        self.owner[placement] = logical
        self.where[logical] = placement
        b, r, _ = self.unkey(placement)
        self.row_owned[(b, r)] += 1
        self.bank_owned[b] += 1

    def _release(self, placement: int) -> None:
        del self.owner[placement]
        b, r, _ = self.unkey(placement)
        self.row_owned[(b, r)] -= 1
        self.bank_owned[b] -= 1

    def _place(self, fbank: int, row: int, col: int) -> Tuple[int, bool]:
        """Natural slot if free, else collision-resolved slot; returns (key, collided)."""
        r, c = find_free_slot(
            lambda rr, cc: self._slot_free(fbank, rr, cc),
            self.g.rows_per_bank,
            self.g.cols_per_row,
            row,
            col,
        )
        return self.key(fbank, r, c), (r, c) != (row, col)

    def physical(self, placement: int) -> int:
        b, r, c = self.unkey(placement)
        dest = self.row_redirect.get((b, r))
        if dest is None:
            return placement
        return self.key(dest[0], dest[1], c)

    # -- FLAG bookkeeping -------------------------------------------------

    def _sync_flag(self) -> None:
        states = {p.state for p in self.pairs.values()}
        if PairState.MIGRATING_FWD in states or PairState.MIGRATING_REV in states:
            want = Flag.MIGRATING
        elif PairState.GATED in states:
            want = Flag.GATED
        else:
            want = Flag.IDLE
        if want is not self.flag.value:
            self.flag.transition(want)

    # -- translation ------------------------------------------------------

    def _entry_for(self, logical: int, pair: Pair, fbank: int, row: int, col: int, write: bool):
        """Resolve a victim-bank address; returns (placement, interrupted, copied)."""
        entry, _cost = self.primary.lookup(logical)
        placed = self.where.get(logical)
        mig = self.migration
        copied = 0
        if write and mig is not None and pair in mig.pairs and logical not in mig.log:
            if mig.direction == "forward" and placed is not None and entry is None:
                self._copy(logical)
                mig.log.add(logical)
                copied = 1
            elif mig.direction == "reverse" and isinstance(entry, (TargetPair, Override)):
                self._copy(logical)
                mig.log.add(logical)
                copied = 1
            if copied:
                entry, _cost = self.primary.lookup(logical)
                placed = self.where.get(logical)
        if isinstance(entry, Override):
            return self.key(self.fbank(entry.rank, entry.bank), entry.row, entry.column), True, copied
        if isinstance(entry, TargetPair):
            return self.key(pair.target, row, col), False, copied
        if placed is not None:
            return placed, False, copied
        if pair.state in (PairState.GATED, PairState.MIGRATING_FWD):
            slot, collided = self._place(pair.target, row, col)
            tr, tb = self.split(pair.target)
            if collided:
                _, r2, c2 = self.unkey(slot)
                self.primary.insert(logical, Override(tr, tb, r2, c2))
            else:
                self.primary.insert(logical, TargetPair(tr, tb))
            self._claim(logical, slot)
            return slot, collided, copied
        return self._native(logical, fbank, row, col) + (copied,)

    def _native(self, logical: int, fbank: int, row: int, col: int):
        placed = self.where.get(logical)
        if placed is not None:
            return placed, placed != logical
        slot, collided = self._place(fbank, row, col)
        if collided:
            _, r2, c2 = self.unkey(slot)
            rk, bk = self.split(fbank)
            self.primary.insert(logical, Override(rk, bk, r2, c2))
        self._claim(logical, slot)
        return slot, collided

    def access(self, rank: int, bank: int, row: int, col: int, write: bool, tag=None) -> Access:
        """Translate one request and apply its functional effect on payload tags."""
        fbank = self.fbank(rank, bank)
        logical = self.key(fbank, row, col)
        first_touch = logical not in self.where
        pair = self.pairs.get(fbank)
        copied = 0
        if pair is not None and pair.state is not PairState.OPEN:
            placement, interrupted, copied = self._entry_for(logical, pair, fbank, row, col, write)
        else:
            placement, interrupted = self._native(logical, fbank, row, col)
        # the companion trie only needs victim-bank live addresses (for recursive_get)
        if first_touch and pair is not None and self.track_live and not self.reopened:
            self.aux.insert(logical)
        pb, pr, pc = self.unkey(placement)
        if pb in self.pairs and self.pairs[pb].state is PairState.GATED:
            raise TranslationError(f"address {logical:#x} resolved into gated bank {pb}")
        phys = self.physical(placement)
        weak = phys != placement
        stall = (INTERRUPT_STALL_CYCLES if interrupted else 0) + (WEAK_ROW_STALL_CYCLES if weak else 0)
        if copied:
            stall += LOG_SEARCH_CYCLES
        if write:
            self.data[phys] = tag
        else:
            tag = self.data.get(phys)
        self.stats["interrupts"] += interrupted
        self.stats["weak_row_accesses"] += weak
        return Access(
            (pb, pr, pc),
            self.unkey(phys),
            stall,
            interrupted,
            weak,
            pb != fbank,
            tag,
            copied,
        )

    def translate(self, rank: int, bank: int, row: int, col: int):
        """Read-only view of where an address would be served right now.

        Returns ``((rank, bank, row, col), stall_cycles, interrupted)``; unlike
        :meth:`access` it never allocates.
        """
        fbank = self.fbank(rank, bank)
        logical = self.key(fbank, row, col)
        pair = self.pairs.get(fbank)
        interrupted = False
        placement = self.where.get(logical)
        if pair is not None and pair.state is not PairState.OPEN and self.flag.translation_active:
            entry, _ = self.primary.lookup(logical)
            if isinstance(entry, Override):
                placement = self.key(self.fbank(entry.rank, entry.bank), entry.row, entry.column)
                interrupted = True
            elif placement is None or isinstance(entry, TargetPair):
                placement = self.key(pair.target, row, col)
        elif placement is None:
            placement = logical
        elif placement != logical:
            interrupted = True
        b, r, c = self.unkey(placement)
        rk, bk = self.split(b)
        return (rk, bk, r, c), INTERRUPT_STALL_CYCLES if interrupted else 0, interrupted

    def read_logical(self, rank: int, bank: int, row: int, col: int):
        placement = self.where.get(self.key(self.fbank(rank, bank), row, col))
        if placement is None:
            return None
        return self.data.get(self.physical(placement))

    # -- migration --------------------------------------------------------

    def _copy(self, logical: int) -> CopyOp:
        """Move one address across its pair (direction of the live migration)."""
        fbank, row, col = self.unkey(logical)
        pair = self.pairs[fbank]
        src = self.where[logical]
        if self.migration.direction == "forward":
            dest_bank = pair.target
        else:
            dest_bank = fbank
        slot, collided = self._place(dest_bank, row, col)
        rk, bk = self.split(dest_bank)
        if self.migration.direction == "forward":
            if collided:
                _, r2, c2 = self.unkey(slot)
                self.primary.insert(logical, Override(rk, bk, r2, c2))
            else:
                self.primary.insert(logical, TargetPair(rk, bk))
        else:
            if collided:
                _, r2, c2 = self.unkey(slot)
                self.primary.insert(logical, Override(rk, bk, r2, c2))
            else:
                self.primary.delete(logical)
        src_phys = self.physical(src)
        self._claim(logical, slot)
        dst_phys = self.physical(slot)
        if src_phys in self.data:
            self.data[dst_phys] = self.data.pop(src_phys)
        self.migration.copies += 1
        self.stats["migration_copies"] += 1
        return CopyOp(logical, self.unkey(src_phys)[0], self.unkey(dst_phys)[0])

    def migrate_and_remap(self, src_banks: List[int], dest_banks: List[int], direction: str) -> Migration:
        """Begin a migration; copies are drained by :meth:`next_copy`."""
        if len(src_banks) != len(dest_banks):
            raise LengthMismatch(f"{len(src_banks)} source banks vs {len(dest_banks)} destinations")
        if self.migration is not None:
            raise FlagTransitionError("a migration is already in progress")
        pairs = []
        for s, d in zip(src_banks, dest_banks):
            if direction == "forward":
                pair = self.pairs.get(s)
                if pair is None or pair.target != d or pair.state is not PairState.OPEN:
                    raise ConfigError(f"bank {s} -> {d} is not an open victim/target pair")
                pair.state = PairState.MIGRATING_FWD
            elif direction == "reverse":
                pair = self.pairs.get(d)
                if pair is None or pair.target != s or pair.state is not PairState.GATED:
                    raise ConfigError(f"bank {s} -> {d} is not a gated target/victim pair")
                pair.state = PairState.MIGRATING_REV
            else:
                raise ValueError(f"unknown direction {direction!r}")
            pairs.append(pair)
        self.migration = Migration(direction, pairs)
        for pair in pairs:
            lo, hi = self.bank_range(pair.victim)
            if direction == "forward":
                self.migration.pending.extend(self.aux.recursive_get(lo, hi))
            else:
                self.migration.pending.extend(self.primary.recursive_get(lo, hi))
        self._sync_flag()
        return self.migration

    def _stale(self, logical: int) -> bool:
        mig = self.migration
        if logical in mig.log or logical not in self.where:
            return True
        return mig.direction == "reverse" and logical not in self.primary

    def peek_copy(self) -> Optional[Tuple[int, int]]:
        """Pair banks (victim, target) of the next copy that would be issued, or None."""
        mig = self.migration
        while mig is not None and mig.pending:
            logical = mig.pending[0]
            if self._stale(logical):
                mig.pending.popleft()
                mig.skipped += 1
                continue
            pair = self.pairs[self.unkey(logical)[0]]
            return pair.victim, pair.target
        return None

    def next_copy(self) -> Optional[CopyOp]:
        """Perform the next scheduled copy, skipping ones already done by priority writes."""
        mig = self.migration
        while mig is not None and mig.pending:
            logical = mig.pending.popleft()
            if self._stale(logical):
                mig.skipped += 1
                continue
            return self._copy(logical)
        return None

    def migration_done(self) -> bool:
        return self.migration is not None and not self.migration.pending

    def finish_migration(self) -> Migration:
        mig = self.migration
        if mig is None or mig.pending:
            raise FlagTransitionError("no completed migration to finish")
        for pair in mig.pairs:
            pair.state = PairState.GATED if mig.direction == "forward" else PairState.OPEN
        mig.log.clear()
        self.migration = None
        self._sync_flag()
        return mig

    def run_migration(self) -> Migration:
        """Drain and finish the current migration at once (no timing)."""
        while self.next_copy() is not None:
            pass
        return self.finish_migration()

    def live_victim_keys(self, fbanks: List[int]) -> List[int]:
        out = []
        for b in fbanks:
            lo, hi = self.bank_range(b)
            out.extend(self.aux.recursive_get(lo, hi))
        return out

    # -- occupancy / capacity ----------------------------------------------

    def occupancy_check(self) -> Action:
        if self.reopened or self.migration is not None:
            return NO_ACTION
        gated = [p for p in self.pairs.values() if p.state is PairState.GATED]
        for p in gated:
            if self.occupancy(p.target) >= OCCUPANCY_LIMIT * self.g.slots_per_bank:
                return Action("reverse_migrate", (p.victim,))
        if self.primary.utilization() >= TRIE_LIMIT or self.aux.utilization() >= TRIE_LIMIT:
            return Action("reopen_all", tuple(p.victim for p in gated))
        return NO_ACTION

    def mark_reopened(self) -> None:
        self.reopened = True
        self.track_live = False

    # -- weak rows ----------------------------------------------------------

    def remap_weak_rows(self, weak_rows, dest_for: Callable[[int], int]) -> List[Tuple[Tuple[int, int], Tuple[int, int]]]:
        """Redirect each weak (bank, row) to the lowest free healthy row of ``dest_for(bank)``."""
        weak_rows = sorted(set(weak_rows))
        self.weak_rows.update(weak_rows)
        entries = []
        for fbank, row in weak_rows:
            dest = dest_for(fbank)
            spare = None
            for r in range(self.g.rows_per_bank):
                cand = (dest, r)
                if cand in self.weak_rows or cand in self.reserved_rows or self.row_owned[cand]:
                    continue
                spare = r
                break
            if spare is None:
                raise CapacityExceeded(f"no healthy spare row left in bank {dest}")
            rk, bk = self.split(dest)
            self.primary.insert(self.row_key(fbank, row), RowRedirect(rk, bk, spare))
            self.reserved_rows.add((dest, spare))
            for c in range(self.g.cols_per_row):
                old = self.key(fbank, row, c)
                if old in self.data:
                    self.data[self.key(dest, spare, c)] = self.data.pop(old)
            self.row_redirect[(fbank, row)] = (dest, spare)
            entries.append(((fbank, row), (dest, spare)))
        return entries
