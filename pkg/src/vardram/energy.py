"""Per-bank energy accounting.

Counters are kept as exact integer tallies (picoseconds per power state,
event counts) and turned into nanojoules only at report time, so component
totals are a fixed function of the tallies and summation order is fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Dict, List

from .dram import BankState, PowerState
from .errors import ConfigError

COMPONENTS = ("background_nj", "act_pre_nj", "burst_nj", "refresh_nj", "odt_nj", "overhead_nj")
EVENTS = ("ACT_PRE", "READ_BURST", "WRITE_BURST", "REFRESH", "GATE_TRANSIENT")


@dataclass(frozen=True)
class DeviceEnergyProfile:
    # rank-level DDR4 x8 datasheet magnitudes (assumed; override per device)
    vdd: float = 1.2  # V
    idd_active_standby: float = 360.0  # mA, IDD3N
    idd_precharge_standby: float = 272.0  # mA, IDD2N
    idd_powerdown: float = 200.0  # mA, IDD2P-ish, rank in CKE-low
    act_pre_energy: float = 5.8  # nJ per ACT+PRE pair
    read_burst_energy: float = 4.1  # nJ per burst
    write_burst_energy: float = 3.6  # nJ per burst
    refresh_energy: float = 462.0  # nJ per all-bank refresh per rank
    odt_energy_per_burst: float = 0.0  # nJ; no published magnitude
    sleep_leakage: float = 8.89  # nW per gated bank
    controller_power: float = 42.84  # uW, remap controller
    wake_transient: float = 1.2  # pJ per gate or ungate event

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"energy.{f.name} must be >= 0")

    def idd(self, state: PowerState) -> float:
        if state is PowerState.ROW_OPEN:
            return self.idd_active_standby
        if state is PowerState.ACTIVE_IDLE:
            return self.idd_precharge_standby
        if state is PowerState.POWERED_DOWN_LP:
            return self.idd_powerdown
        return 0.0


def accrue_background(
    profile: DeviceEnergyProfile,
    state: PowerState,
    cycles: float,
    tck_ns: float,
    banks_per_rank: int,
) -> Dict[str, float]:
    """Background (or, for GATED_OFF, leakage overhead) energy for ``cycles`` in ``state``."""
    if cycles < 0:
        raise ValueError("cycles must be >= 0")
    t_ns = cycles * tck_ns
    if state is PowerState.GATED_OFF:
        # nW * ns = 1e-18 J = 1e-9 nJ
        return {"overhead_nj": profile.sleep_leakage * t_ns * 1e-9}
    # V * mA * ns = pJ
    return {"background_nj": profile.vdd * profile.idd(state) / banks_per_rank * t_ns * 1e-3}


def accrue_event(profile: DeviceEnergyProfile, event: str, count: int = 1, banks_per_rank: int = 1) -> Dict[str, float]:
    if event == "ACT_PRE":
        return {"act_pre_nj": count * profile.act_pre_energy}
    if event == "READ_BURST":
        return {"burst_nj": count * profile.read_burst_energy, "odt_nj": count * profile.odt_energy_per_burst}
    if event == "WRITE_BURST":
        return {"burst_nj": count * profile.write_burst_energy, "odt_nj": count * profile.odt_energy_per_burst}
    if event == "REFRESH":
        # per-rank charge split over the banks it refreshes
        return {"refresh_nj": count * profile.refresh_energy / banks_per_rank}
    if event == "GATE_TRANSIENT":
        return {"overhead_nj": count * profile.wake_transient * 1e-3}
    raise ValueError(f"unknown energy event {event!r}")


@dataclass
class EnergyCounters:
    """Per-bank component energies (nJ) plus the overhead split."""

    banks: List[Dict[str, float]] = field(default_factory=list)
    overhead_split: Dict[str, float] = field(default_factory=dict)
    controller_nj: float = 0.0

    @property
    def components(self) -> Dict[str, float]:
        out = {c: math.fsum(b[c] for b in self.banks) for c in COMPONENTS}
        out["overhead_nj"] = math.fsum([out["overhead_nj"], self.controller_nj])
        return out

    @property
    def total_nj(self) -> float:
        # one correctly rounded sum over every per-bank component
        flat = [b[c] for b in self.banks for c in COMPONENTS]
        return math.fsum(flat + [self.controller_nj])

    def bank_totals(self) -> List[float]:
        return [math.fsum(b[c] for c in COMPONENTS) for b in self.banks]


def bank_energy(
    profile: DeviceEnergyProfile,
    bank: BankState,
    banks_per_rank: int,
    copy_acts: int = 0,
    copy_reads: int = 0,
    copy_writes: int = 0,
) -> Dict[str, float]:
    """Energy of one bank from its settled ledger.

    Migration copy commands are not in the bank's ACT/burst tallies; their
    counts are passed separately and booked under overhead.
    """
    out = {c: 0.0 for c in COMPONENTS}
    split = {"leakage_nj": 0.0, "transient_nj": 0.0, "migration_nj": 0.0}
    for state, ps in bank.state_ps.items():
        # ledger is in ps; evaluate on a 1 ns pseudo-cycle
        for k, v in accrue_background(profile, state, ps / 1000.0, 1.0, banks_per_rank).items():
            out[k] += v
            if k == "overhead_nj":
                split["leakage_nj"] += v
    acts, reads, writes = bank.act_count, bank.read_bursts, bank.write_bursts
    out["act_pre_nj"] = accrue_event(profile, "ACT_PRE", acts)["act_pre_nj"]
    rd = accrue_event(profile, "READ_BURST", reads)
    wr = accrue_event(profile, "WRITE_BURST", writes)
    out["burst_nj"] = rd["burst_nj"] + wr["burst_nj"]
    out["odt_nj"] = rd["odt_nj"] + wr["odt_nj"]
    out["refresh_nj"] = accrue_event(profile, "REFRESH", bank.refreshes, banks_per_rank)["refresh_nj"]
    transient = accrue_event(profile, "GATE_TRANSIENT", bank.gate_events)["overhead_nj"]
    migration = math.fsum([
        accrue_event(profile, "ACT_PRE", copy_acts)["act_pre_nj"],
        accrue_event(profile, "READ_BURST", copy_reads)["burst_nj"],
        accrue_event(profile, "WRITE_BURST", copy_writes)["burst_nj"],
    ])
    split["transient_nj"] = transient
    split["migration_nj"] = migration
    out["overhead_nj"] = math.fsum([split["leakage_nj"], transient, migration])
    out["_split"] = split
    return out


def controller_energy(profile: DeviceEnergyProfile, span_ns: float) -> float:
    # uW * ns = 1e-15 J = 1e-6 nJ
    return profile.controller_power * span_ns * 1e-6


def overhead_split(
    profile: DeviceEnergyProfile,
    gate_events: int,
    gated_ps: int,
    migration_nj: float,
    controller_nj: float,
) -> Dict[str, float]:
    """Overhead by source, from run-wide tallies (count x constant, no re-summing)."""
    return {
        "transient_nj": accrue_event(profile, "GATE_TRANSIENT", gate_events)["overhead_nj"],
        "leakage_nj": accrue_background(profile, PowerState.GATED_OFF, gated_ps / 1000.0, 1.0, 1)["overhead_nj"],
        "migration_nj": migration_nj,
        "controller_nj": controller_nj,
    }


def build_counters(per_bank: List[Dict[str, float]], split: Dict[str, float], controller_nj: float = 0.0) -> EnergyCounters:
    banks = [{c: b[c] for c in COMPONENTS} for b in per_bank]
    return EnergyCounters(banks, dict(split), controller_nj)


def report(counters: EnergyCounters, scenario_label: str, baseline: "EnergyCounters | None" = None,
           baseline_label: str = "") -> dict:
    """Per-bank and total breakdown; percentages only against a named baseline."""
    comps = counters.components
    out = {
        "scenario": scenario_label,
        "total_nj": counters.total_nj,
        "components": comps,
        "overhead": dict(counters.overhead_split),
        "per_bank": [dict(b, total_nj=t) for b, t in zip(counters.banks, counters.bank_totals())],
    }
    if baseline is not None:
        if not baseline_label:
            raise ValueError("a baseline needs a label")
        base = baseline.components
        out["vs"] = {
            "baseline": baseline_label,
            "total_pct": pct_delta(baseline.total_nj, counters.total_nj),
            "components_pct": {c: pct_delta(base[c], comps[c]) for c in COMPONENTS},
        }
    return out


def pct_delta(base: float, new: float) -> float:
    if base == 0:
        return 0.0 if new == 0 else math.inf
    return 100.0 * (new - base) / base
