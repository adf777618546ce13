"""Scenario runner, run reports (JSON + per-bank CSV) and report comparison."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import List, Optional, Sequence

from .config import ScenarioConfig, config_to_dict
from .dram import PowerState
from .energy import COMPONENTS, pct_delta
from .errors import FingerprintMismatch
from .sim import energy_of, simulate, stats_array
from .trace import MemoryRequest, fingerprint, load_bundled, parse_trace, generate_synthetic

SCHEMA_VERSION = 1
BURST_BYTES = 64  # one BL8 burst on a 64-bit bus


def load_requests(cfg: ScenarioConfig) -> List[MemoryRequest]:
    src = cfg.trace
    g = cfg.geometry
    if src.bundled:
        return load_bundled(src.bundled, g)
    if src.file:
        return parse_trace(src.file, g.capacity)
    return generate_synthetic(src.kind, g, src.seed, **src.params)


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def run(cfg: ScenarioConfig, requests: Optional[Sequence[MemoryRequest]] = None) -> dict:
    """Simulate one scenario and return its report as a plain dict."""
    if requests is None:
        requests = load_requests(cfg)
    results, matrix = simulate(cfg, requests)
    counters, gate_events, gated_ps = energy_of(cfg, results)
    g = cfg.geometry
    t = cfg.timing
    lat = [x for r in results for x in r.latencies_ps]
    mean_ns, max_ns = stats_array(lat)
    span_ps = max(r.span_ps for r in results)
    stats = sum((r.stats for r in results), start=type(results[0].stats)())
    per_bank = []
    bank_rows = list(zip(counters.banks, counters.bank_totals()))
    i = 0
    for res in results:
        for b, bank in enumerate(res.banks):
            comp, total = bank_rows[i]
            i += 1
            rank, bk = divmod(b, g.banks_per_rank)
            per_bank.append({
                "channel": res.channel,
                "rank": rank,
                "bank": bk,
                "role": res.roles[b],
                **comp,
                "total_nj": total,
                "acts": bank.act_count,
                "read_bursts": bank.read_bursts,
                "write_bursts": bank.write_bursts,
                "refreshes": bank.refreshes,
                "gate_events": bank.gate_events,
                "gated_ns": bank.state_ps[PowerState.GATED_OFF] / 1000.0,
                "lp_ns": bank.state_ps[PowerState.POWERED_DOWN_LP] / 1000.0,
                "tRAS_ns": bank.timing.tRAS,
            })
    engines = [r.engine for r in results if r.engine is not None]
    copies = stats["migration_copies"]
    mig_bytes = copies * BURST_BYTES
    peak_bw = BURST_BYTES / (t.burst_ps() / 1000.0)  # bytes per ns per channel
    span_ns = span_ps / 1000.0
    refresh_per_rank = [n for r in results for n in r.refreshes_per_rank]
    report = {
        "schema_version": SCHEMA_VERSION,
        "scenario": {
            "label": cfg.name,
            "kind": cfg.scenario,
            "lp_mode": cfg.lp_mode,
            "refresh_multiplier": cfg.refresh_multiplier,
            "weak_row_remap": cfg.weak_row_remap,
            "gating_mode": cfg.gating_mode,
            "seed": cfg.seed,
        },
        "fingerprints": {
            "trace": fingerprint(requests),
            "geometry": _hash(config_to_dict(cfg)["geometry"]),
            "config": _hash(config_to_dict(cfg)),
        },
        "requests": {"total": len(requests), "reads": stats["reads"], "writes": stats["writes"]},
        "latency_ns": {"mean": mean_ns, "max": max_ns},
        "span": {"cycles": math.ceil(span_ps / t.tck_ps), "ns": span_ns},
        "refresh": {"count": sum(refresh_per_rank), "per_rank": refresh_per_rank},
        "energy": {
            "total_nj": counters.total_nj,
            "components": counters.components,
            "overhead": counters.overhead_split,
            "gate_events": gate_events,
            "gated_ns": gated_ps / 1000.0,
        },
        "trie": {
            "primary_peak_bytes": sum(e.primary.peak_bytes for e in engines),
            "aux_peak_bytes": sum(e.aux.peak_bytes for e in engines),
            "capacity_bytes": sum(e.primary.capacity_bytes for e in engines),
            "primary_entries": sum(len(e.primary) for e in engines),
        },
        "migration": {
            "copies": copies,
            "priority_copies": stats["priority_copies"],
            "bytes": mig_bytes,
            "fraction_of_peak": mig_bytes / (peak_bw * span_ns * g.channels) if span_ns else 0.0,
            "forward_migrations": stats["forward_migrations"],
            "reverse_migrations": stats["reverse_migrations"],
            "weak_row_copies": stats["weak_row_copies"],
            "weak_row_copy_bytes": stats["weak_row_copies"] * g.cols_per_row * g.bytes_per_column,
            "upfront_latency_ns": sum(r.upfront_ps for r in results) / 1000.0,
        },
        "translation": {
            "interrupts": stats["interrupts"],
            "stall_cycles": stats["translation_stall_cycles"],
            "write_stall_cycles": stats["write_stall_cycles"],
            "max_write_stall_cycles": stats["max_write_stall_cycles"],
            "translated_requests": stats["translated"],
            "weak_row_accesses": stats["weak_row_accesses"],
        },
        "events": {
            "reverse_migrate_triggers": stats["reverse_migrate_triggers"],
            "reverse_migrate_pairs": stats["reverse_migrate_pairs"],
            "reopen_all": stats["reopen_all"],
            "gating_skipped": stats["gating_skipped"],
            "lp_entries": stats["lp_entries"],
            "reverse_migrate_at_request": [x for r in results for x in r.triggers.get("reverse_migrate", [])],
            "reopen_all_at_request": [x for r in results for x in r.triggers.get("reopen_all", [])],
            "flag_history": [[f.value for f in e.flag.history] for e in engines],
        },
        "checks": {
            "preservation_violations": stats["preservation_violations"],
            "gated_bank_commands": stats["gated_bank_commands"],
            "weak_row_violations": stats["weak_row_violations"],
        },
        "weak_rows": sum(r.weak_rows for r in results),
        "victims": [list(p) for p in matrix.pairs],
        "per_bank": per_bank,
    }
    return report


def to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def to_csv(report: dict) -> str:
    rows = report["per_bank"]
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def write_report(report: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    label = report["scenario"]["label"]
    path = out / f"{label}.json"
    path.write_text(to_json(report))
    (out / f"{label}.csv").write_text(to_csv(report))
    return path


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


def compare(baseline: dict, candidate: dict) -> dict:
    """Percentage deltas of candidate against baseline (negative = reduction)."""
    for key in ("trace", "geometry"):
        if baseline["fingerprints"][key] != candidate["fingerprints"][key]:
            raise FingerprintMismatch(f"{key} fingerprints differ; reports are not comparable")
    be, ce = baseline["energy"], candidate["energy"]
    return {
        "baseline": baseline["scenario"]["label"],
        "candidate": candidate["scenario"]["label"],
        "energy_total_pct": pct_delta(be["total_nj"], ce["total_nj"]),
        "energy_savings_pct": -pct_delta(be["total_nj"], ce["total_nj"]),
        "components_pct": {c: pct_delta(be["components"][c], ce["components"][c]) for c in COMPONENTS},
        "latency_mean_pct": pct_delta(baseline["latency_ns"]["mean"], candidate["latency_ns"]["mean"]),
        "latency_max_pct": pct_delta(baseline["latency_ns"]["max"], candidate["latency_ns"]["max"]),
        "refresh_pct": pct_delta(baseline["refresh"]["count"], candidate["refresh"]["count"]),
        "span_pct": pct_delta(baseline["span"]["ns"], candidate["span"]["ns"]),
    }


def format_compare(table: dict) -> str:
    lines = [f"{table['candidate']} vs {table['baseline']}"]
    for k, v in table.items():
        if k in ("baseline", "candidate"):
            continue
        if isinstance(v, dict):
            for ck, cv in v.items():
                lines.append(f"  {ck:<24} {cv:+9.3f} %")
        else:
            lines.append(f"{k:<26} {v:+9.3f} %")
    return "\n".join(lines)
