"""Trace-driven simulation of one scenario.

Each channel is simulated on its own (migration never crosses channels).
Within a channel requests are taken in arrival order; background work
(refresh, migration copies, gating control) that is due earlier is run
first, and a refresh that falls on the same instant as an arrival wins.
Commands are issued in open-page order, one per command-bus cycle.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import ScenarioConfig
from .dram import (
    PRE,
    REFRESH,
    BankState,
    Command,
    PowerState,
    decode_address,
    ns_to_ps,
)
from .energy import bank_energy, build_counters, controller_energy, overhead_split
from .errors import ConfigError, TranslationError, VarDramError
from .refresh import load_weak_rows, row_copy_ps, sample_weak_rows, weak_row_probability
from .remap import PairState, RemapEngine
from .trace import MemoryRequest
from .variation import (
    InsufficientVictimsWarning,
    VariationMap,
    VariationMatrix,
    classify_banks,
    default_floorplan,
    explicit_matrix,
    generate_variation_map,
)

BURST_LENGTH = 8  # columns moved per burst


def build_matrix(cfg: ScenarioConfig) -> VariationMatrix:
    """Victim/target table for the scenario (empty for IDEAL)."""
    g = cfg.geometry
    if cfg.scenario == "IDEAL" or cfg.victim_count == 0:
        return VariationMatrix()
    v = cfg.variation
    if v.pairs is not None:
        return explicit_matrix(v.pairs, cfg.timing, v.delta_tras_max)
    if v.map_file:
        vmap = VariationMap.load(v.map_file)
    else:
        params = v.params.__class__(**{**v.params.__dict__, "seed": cfg.seed})
        plan = default_floorplan(v.grid, g.ranks_per_channel, g.banks_per_rank)
        vmap = generate_variation_map(params, v.grid, plan)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InsufficientVictimsWarning)
        matrix = classify_banks(vmap, v.threshold, cfg.victim_count, cfg.timing, v.severity_max, v.delta_tras_max)
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
    if cfg.scenario == "VAR" and not matrix.pairs:
        raise ConfigError("VAR scenario found no victim banks above the threshold")
    return matrix


@dataclass
class ChannelResult:
    channel: int
    banks: List[BankState]
    roles: List[str]
    latencies_ps: List[int]
    span_ps: int
    refreshes_per_rank: List[int]
    copy_counts: List[Counter]
    stats: Counter
    triggers: Dict[str, List[int]]
    engine: Optional[RemapEngine]
    upfront_ps: int
    weak_rows: int


class ChannelSim:
    def __init__(self, cfg: ScenarioConfig, channel: int, matrix: VariationMatrix, weak_rows=None):
        self.cfg = cfg
        self.channel = channel
        g = self.g = cfg.geometry
        t = cfg.timing
        self.tck = t.tck_ps
        self.bpr = g.banks_per_rank
        nb = g.banks_per_channel
        victim_timing = {r * g.banks_per_rank + b: tm for (r, b), tm in matrix.victim_timing.items()}
        self.banks = [BankState(timing=victim_timing.get(i, t)) for i in range(nb)]
        self.roles = ["normal"] * nb
        pairs = []
        for vr, vb, tr, tb in matrix.pairs:
            v, tt = vr * self.bpr + vb, tr * self.bpr + tb
            self.roles[v] = "victim"
            self.roles[tt] = "target"
            pairs.append((v, tt))
        self.var = cfg.scenario == "VAR"
        rc = cfg.remap
        self.copy_ps = ns_to_ps(rc.copy_latency_ns) if rc.copy_latency_ns is not None else (
            t.burst_ps(False) + t.burst_ps(True) + ns_to_ps(t.tRC)
        )
        self.extra_ras = ns_to_ps(rc.translation_tras_overhead_ns)
        self.engine = None
        if self.var:
            self.engine = RemapEngine(
                g, pairs, node_bytes=rc.node_bytes, payload_bytes=rc.payload_bytes,
                copy_ps=self.copy_ps, tck_ps=self.tck, trie_fraction=rc.trie_fraction,
            )
        self.weak_rows = set(weak_rows or ())
        self.data: Dict[Tuple[int, int, int], int] = {}  # non-VAR functional store
        self.expect: Dict[Tuple[int, int, int], int] = {}
        self.bus = set()
        self.lp = [False] * g.ranks_per_channel
        self.lp_exit = [0] * g.ranks_per_channel
        self.refresh_period = ns_to_ps(cfg.refresh.period_ns)
        self.next_refresh_k = 1
        self.refreshes = [0] * g.ranks_per_channel
        self.copies = [Counter() for _ in range(nb)]
        self.stats = Counter()
        self.triggers: Dict[str, List[int]] = defaultdict(list)
        self.latencies: List[int] = []
        self.cursor = 0
        self.upfront_ps = 0
        self.req_index = -1
        self.control: List[Tuple[int, str]] = []
        self.origin = 0  # trace time zero; moves past any upfront weak-row remap

    # -- command bus ------------------------------------------------------

    def _slot(self, t: int) -> int:
        c = -(-t // self.tck)
        while c in self.bus:
            c += 1
        self.bus.add(c)
        return c * self.tck

    def _check_powered(self, b: int) -> BankState:
        bank = self.banks[b]
        if bank.power is PowerState.GATED_OFF:
            self.stats["gated_bank_commands"] += 1
            raise TranslationError(f"command routed to gated bank {b}")
        return bank

    def _issue(self, b: int, cmd: Command, t: int, extra_ras: int = 0) -> int:
        bank = self._check_powered(b)
        start = self._slot(max(t, bank.busy_until))
        return bank.issue(cmd, start, extra_ras)

    # -- low power ----------------------------------------------------------

    def _rank_banks(self, rank: int):
        lo = rank * self.bpr
        return [b for b in range(lo, lo + self.bpr) if self.banks[b].power is not PowerState.GATED_OFF]

    def _lp_allowed(self) -> bool:
        return self.cfg.lp_mode and (self.engine is None or self.engine.migration is None)

    def _settle_lp(self, rank: int, now: int, wake: bool = True) -> int:
        """Bring a rank's low-power state up to ``now``; returns the wake penalty (ps)."""
        banks = self._rank_banks(rank)
        if not self.lp[rank] and self._lp_allowed() and banks:
            idle_from = max([self.banks[b].busy_until for b in banks] + [self.lp_exit[rank]])
            enter = idle_from + self.cfg.lp_threshold_cycles * self.tck
            if enter <= now:
                for b in banks:
                    if self.banks[b].open_row is not None:
                        self._issue(b, PRE, enter)
                for b in banks:
                    bank = self.banks[b]
                    bank.set_power_state(PowerState.POWERED_DOWN_LP, max(enter, bank.busy_until))
                self.lp[rank] = True
                self.stats["lp_entries"] += 1
        if self.lp[rank] and wake:
            for b in banks:
                bank = self.banks[b]
                if bank.power is PowerState.POWERED_DOWN_LP:
                    bank.set_power_state(PowerState.ACTIVE_IDLE, max(now, bank.since))
            self.lp[rank] = False
            self.lp_exit[rank] = now
            return ns_to_ps(self.cfg.timing.tXP)
        return 0

    def _wake_all(self, now: int) -> None:
        for r in range(self.g.ranks_per_channel):
            self._settle_lp(r, now)

    # -- refresh ------------------------------------------------------------

    def _refresh(self, when: int) -> None:
        for rank in range(self.g.ranks_per_channel):
            penalty = self._settle_lp(rank, when)
            banks = self._rank_banks(rank)
            if not banks:
                continue
            t0 = when + penalty
            for b in banks:
                if self.banks[b].open_row is not None:
                    self._issue(b, PRE, t0)
            start = self._slot(max([t0] + [self.banks[b].busy_until for b in banks]))
            for b in banks:
                self.banks[b].issue(REFRESH, start)
            self.refreshes[rank] += 1

    # -- migration ------------------------------------------------------------

    def _hold_pair(self, a: int, b: int, now: int, duration: int) -> int:
        for x in (a, b):
            self._check_powered(x)
            self._settle_lp(x // self.bpr, now)
        start = self._slot(max(now, self.banks[a].busy_until, self.banks[b].busy_until))
        self.banks[a].hold(start, duration)
        self.banks[b].hold(start, duration)
        return start + duration

    def _book_copy(self, src: int, dst: int, bursts: int = 1) -> None:
        self.copies[src]["acts"] += 1
        self.copies[src]["reads"] += bursts
        self.copies[dst]["acts"] += 1
        self.copies[dst]["writes"] += bursts

    def _next_copy_start(self) -> Optional[int]:
        banks = self.engine.peek_copy() if self.engine is not None else None
        if banks is None:
            return None
        a, b = banks
        return max(self.cursor, self.banks[a].busy_until, self.banks[b].busy_until)

    def _do_copy(self, start: int) -> None:
        op = self.engine.next_copy()
        self._hold_pair(op.src_bank, op.dst_bank, start, self.copy_ps)
        self._book_copy(op.src_bank, op.dst_bank)
        self.stats["migration_copies"] += 1

    def _maybe_finish(self, now: int) -> None:
        eng = self.engine
        if eng is None or eng.migration is None or eng.peek_copy() is not None:
            return
        mig = eng.finish_migration()
        if mig.direction == "forward":
            for pair in mig.pairs:
                self._gate(pair.victim, now)
        self.stats[f"{mig.direction}_migrations"] += 1
        self._occupancy(now)

    def _gate(self, b: int, now: int) -> None:
        bank = self.banks[b]
        self._settle_lp(b // self.bpr, now)
        if bank.open_row is not None:
            self._issue(b, PRE, now)
        bank.set_power_state(PowerState.GATED_OFF, max(now, bank.busy_until))

    def _ungate(self, b: int, now: int) -> None:
        bank = self.banks[b]
        if bank.power is PowerState.GATED_OFF:
            bank.set_power_state(PowerState.ACTIVE_IDLE, max(now, bank.since))

    def _start_forward(self, now: int) -> bool:
        eng = self.engine
        if eng.reopened or eng.migration is not None:
            return False
        pairs = [p for p in eng.pairs.values() if p.state is PairState.OPEN]
        if not pairs:
            return False
        live = eng.live_victim_keys([p.victim for p in pairs])
        cap = eng.primary.capacity_bytes
        if eng.primary.storage_bytes + eng.primary.bytes_to_add(live) >= 0.9 * cap:
            self.stats["gating_skipped"] += 1
            return False
        self._wake_all(now)
        eng.migrate_and_remap([p.victim for p in pairs], [p.target for p in pairs], "forward")
        self._maybe_finish(now)
        return True

    def _start_reverse(self, victims: Sequence[int], now: int) -> None:
        eng = self.engine
        pairs = [eng.pairs[v] for v in victims if eng.pairs[v].state is PairState.GATED]
        if not pairs:
            return
        self._wake_all(now)
        for p in pairs:
            self._ungate(p.victim, now)
        eng.migrate_and_remap([p.target for p in pairs], [p.victim for p in pairs], "reverse")
        self.stats["reverse_migrate_pairs"] += len(pairs)
        self._maybe_finish(now)

    def _occupancy(self, now: int) -> None:
        eng = self.engine
        if eng is None:
            return
        action = eng.occupancy_check()
        if action.kind == "reverse_migrate":
            self.stats["reverse_migrate_triggers"] += 1
            self.triggers["reverse_migrate"].append(self.req_index)
            self._start_reverse(action.banks, now)
        elif action.kind == "reopen_all":
            self.stats["reopen_all"] += 1
            self.triggers["reopen_all"].append(self.req_index)
            eng.mark_reopened()
            self._start_reverse(action.banks, now)

    def _control(self, kind: str, now: int) -> None:
        if kind == "close":
            self._start_forward(now)
        elif kind == "reopen" and not self.engine.reopened:
            self.stats["reopen_all"] += 1
            self.triggers["reopen_all"].append(self.req_index)
            self.engine.mark_reopened()
            if self.engine.migration is None:
                gated = [p.victim for p in self.engine.pairs.values() if p.state is PairState.GATED]
                self._start_reverse(gated, now)
            else:
                self.control.append((now + self.copy_ps, "reopen_retry"))
        elif kind == "reopen_retry":
            if self.engine.migration is None:
                gated = [p.victim for p in self.engine.pairs.values() if p.state is PairState.GATED]
                self._start_reverse(gated, now)
            else:
                self.control.append((now + self.copy_ps, "reopen_retry"))
        self.control.sort()

    # -- background scheduler -------------------------------------------------

    def advance(self, limit: int, refresh_limit: Optional[int] = None) -> None:
        """Run background work due strictly before ``limit`` (refreshes at or before)."""
        refresh_limit = limit if refresh_limit is None else refresh_limit
        while True:
            t_ref = self.next_refresh_k * self.refresh_period
            t_copy = self._next_copy_start()
            t_ctl = self.control[0][0] if self.control else None
            cands = []
            if t_ref <= refresh_limit:
                cands.append((t_ref, 0))
            if t_ctl is not None and t_ctl <= limit:
                cands.append((t_ctl, 1))
            if t_copy is not None and t_copy < limit:
                cands.append((t_copy, 2))
            if not cands:
                return
            when, kind = min(cands)
            self.cursor = max(self.cursor, when)
            if kind == 0:
                self._refresh(t_ref)
                self.next_refresh_k += 1
            elif kind == 1:
                _, what = self.control.pop(0)
                self._control(what, when)
            else:
                self._do_copy(when)
                self._maybe_finish(when)

    # -- setup --------------------------------------------------------------------

    def setup(self) -> None:
        eng = self.engine
        if eng is None:
            return
        if self.cfg.weak_row_remap and self.weak_rows:
            dest = {p.victim: p.target for p in eng.pairs.values()}
            entries = eng.remap_weak_rows(self.weak_rows, lambda b: dest.get(b, b))
            per_row = row_copy_ps(self.g.cols_per_row, self.cfg.timing.tRC, self.cfg.timing.burst_ps())
            bursts = math.ceil(self.g.cols_per_row / BURST_LENGTH)
            t = 0
            for (src, _row), (dst, _spare) in entries:
                if src == dst:
                    start = self._slot(max(t, self.banks[src].busy_until))
                    self.banks[src].hold(start, per_row)
                    end = start + per_row
                else:
                    end = self._hold_pair(src, dst, t, per_row)
                self._book_copy(src, dst, bursts)
                self.stats["weak_row_copies"] += 1
                t = end
            self.upfront_ps = t
            self.cursor = t
            self.origin = t
        if self.cfg.gating_mode == "dynamic_close":
            self.control.append((self.origin + self.cfg.trigger_cycle * self.tck, "close"))
        if self.cfg.reopen_cycle is not None:
            self.control.append((self.origin + self.cfg.reopen_cycle * self.tck, "reopen"))
        self.control.sort()
        if self.cfg.gating_mode == "static_close":
            self._start_forward(self.cursor)

    # -- requests -------------------------------------------------------------------

    def serve(self, index: int, req: MemoryRequest, d) -> None:
        self.req_index = index
        arrival = self.origin + req.issue_cycle * self.tck
        self.advance(arrival)
        self.cursor = max(self.cursor, arrival)
        logical = (d.rank * self.bpr + d.bank, d.row, d.column)
        write = req.is_write
        stall = 0
        extra = 0
        if self.engine is not None:
            acc = self.engine.access(d.rank, d.bank, d.row, d.column, write, req.tag)
            pb, prow, pcol = acc.physical
            stall = acc.stall_cycles * self.tck
            self.stats["interrupts"] += acc.interrupted
            self.stats["translation_stall_cycles"] += acc.stall_cycles - (3 if acc.copied else 0)
            self.stats["weak_row_accesses"] += acc.weak_row
            self.stats["translated"] += acc.translated
            if acc.translated:
                extra = self.extra_ras
            if acc.copied:
                # priority copy of a pending address; the write waits for it
                pair = self.engine.pairs[logical[0]]
                end = self._hold_pair(pair.victim, pair.target, arrival, self.copy_ps)
                self._book_copy(pair.victim, pair.target)
                self.stats["priority_copies"] += 1
                self.stats["migration_copies"] += 1
                stall += end - arrival
                # protocol stall: the copy itself plus the log search (bank queueing excluded)
                protocol = -(-self.copy_ps // self.tck) + 3
                self.stats["write_stall_cycles"] += protocol
                self.stats["max_write_stall_cycles"] = max(self.stats["max_write_stall_cycles"], protocol)
            observed = acc.tag
        else:
            pb, prow, pcol = logical
            if write:
                self.data[logical] = req.tag
                observed = req.tag
            else:
                observed = self.data.get(logical)
        if write:
            self.expect[logical] = req.tag
        elif observed != self.expect.get(logical):
            self.stats["preservation_violations"] += 1
        if self.cfg.refresh_multiplier > 1 and (pb, prow) in self.weak_rows and self.cfg.check_weak_rows:
            self.stats["weak_row_violations"] += 1
            raise VarDramError(f"request touched weak row {(pb, prow)} under extended refresh")
        bank = self._check_powered(pb)
        ready = arrival + stall + self._settle_lp(pb // self.bpr, arrival + stall)
        t = ready
        if bank.open_row != prow:
            if bank.open_row is not None:
                t = self._issue(pb, PRE, t)
            t = self._issue(pb, Command.act(prow), t, extra)
        done = self._issue(pb, Command.write(pcol) if write else Command.read(pcol), t)
        self.latencies.append(done - arrival)
        self.stats["writes" if write else "reads"] += 1
        if self.engine is not None:
            self._occupancy(arrival)
            self._maybe_finish(arrival)

    def finish(self, run_ps: int) -> ChannelResult:
        # drain the background migration and control events, then pad refreshes to the horizon
        while self.engine is not None and (self.engine.migration is not None or self.control):
            self.advance(math.inf, refresh_limit=self.cursor)
            if self.control:
                when, what = self.control.pop(0)
                self.cursor = max(self.cursor, when)
                self._control(what, when)
        horizon = max([self.origin + run_ps, self.cursor] + [b.busy_until for b in self.banks])
        self.advance(horizon, refresh_limit=horizon)
        end = max([horizon] + [b.busy_until for b in self.banks])
        for r in range(self.g.ranks_per_channel):
            self._settle_lp(r, end, wake=False)
        end = max([end] + [b.busy_until for b in self.banks])
        for b in self.banks:
            b.settle(end)
        return ChannelResult(
            self.channel, self.banks, self.roles, self.latencies, end, self.refreshes,
            self.copies, self.stats, dict(self.triggers), self.engine, self.upfront_ps, len(self.weak_rows),
        )


def _weak_rows_for(cfg: ScenarioConfig, channel: int):
    if not cfg.weak_row_remap:
        return set()
    g = cfg.geometry
    if cfg.weak_rows_file:
        return load_weak_rows(cfg.weak_rows_file, g.rows_per_bank)
    p = weak_row_probability(cfg.refresh.ber, cfg.refresh.cells_per_row)
    return sample_weak_rows(g, p, seed=cfg.seed * 1000 + channel)


def simulate(cfg: ScenarioConfig, requests: Sequence[MemoryRequest]):
    """Run every channel; returns (list of ChannelResult, matrix)."""
    g = cfg.geometry
    matrix = build_matrix(cfg)
    decoded = [decode_address(r.address, g) for r in requests]
    per_channel = [[] for _ in range(g.channels)]
    for i, (r, d) in enumerate(zip(requests, decoded)):
        per_channel[d.channel].append((i, r, d))
    run_ps = cfg.run_cycles * cfg.timing.tck_ps
    results = []
    for ch in range(g.channels):
        sim = ChannelSim(cfg, ch, matrix, _weak_rows_for(cfg, ch))
        sim.setup()
        for i, r, d in per_channel[ch]:
            sim.serve(i, r, d)
        results.append(sim.finish(run_ps))
    return results, matrix


def energy_of(cfg: ScenarioConfig, results: List[ChannelResult]):
    prof = cfg.energy
    per_bank = []
    gate_events = 0
    gated_ps = 0
    for res in results:
        for b, bank in enumerate(res.banks):
            c = res.copy_counts[b]
            per_bank.append(bank_energy(prof, bank, cfg.geometry.banks_per_rank, c["acts"], c["reads"], c["writes"]))
            gate_events += bank.gate_events
            gated_ps += bank.state_ps[PowerState.GATED_OFF]
    span_ps = max(r.span_ps for r in results) if results else 0
    ctl = controller_energy(prof, span_ps / 1000.0) if cfg.scenario == "VAR" else 0.0
    migration_nj = math.fsum(b["_split"]["migration_nj"] for b in per_bank)
    split = overhead_split(prof, gate_events, gated_ps, migration_nj, ctl)
    return build_counters(per_bank, split, ctl), gate_events, gated_ps


def stats_array(values: List[int]) -> Tuple[float, float]:
    if not values:
        return 0.0, 0.0
    arr = np.asarray(values, dtype=np.int64)
    return float(arr.sum()) / len(arr) / 1000.0, float(arr.max()) / 1000.0

