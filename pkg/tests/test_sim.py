from __future__ import annotations

import math

import pytest

from vardram.config import PRESETS, TraceSource, load_config, with_overrides
from vardram.dram import Geometry, PowerState
from vardram.errors import ConfigError, FingerprintMismatch, VarDramError
from vardram.report import compare, run, to_csv, to_json
from vardram.sim import energy_of, simulate
from vardram.trace import generate_synthetic

from conftest import SMALL, req, small_var_config

PAIRS = ((0, 0, 0, 1), (0, 2, 0, 3))


def small(scenario="VAR", **kw):
    return small_var_config(pairs=PAIRS, scenario=scenario, **kw)


def trace(seed=1, n=300):
    return generate_synthetic("uniform", SMALL, seed, n=n, gap=40)


def test_deterministic():
    cfg = small()
    reqs = trace()
    assert to_json(run(cfg, reqs)) == to_json(run(cfg, reqs))


def test_ideal_and_pv_differ_only_on_victims():
    reqs = trace()
    ideal = run(small("ID"), reqs)
    pv = run(small("PV"), reqs)
    for a, b in zip(ideal["per_bank"], pv["per_bank"]):
        if b["role"] != "victim":
            assert a["tRAS_ns"] == b["tRAS_ns"]
        else:
            assert b["tRAS_ns"] > a["tRAS_ns"]
    assert pv["latency_ns"]["mean"] >= ideal["latency_ns"]["mean"]


def test_energy_reconciles():
    rep = run(small(), trace())
    e = rep["energy"]
    assert e["total_nj"] == pytest.approx(math.fsum(e["components"].values()), rel=1e-12)
    bank_sum = math.fsum(b["total_nj"] for b in rep["per_bank"])
    assert e["total_nj"] == pytest.approx(bank_sum + e["overhead"]["controller_nj"], rel=1e-12)
    assert e["components"]["overhead_nj"] == pytest.approx(math.fsum(e["overhead"].values()), rel=1e-9)


def test_controller_energy_only_in_var():
    reqs = trace()
    assert run(small("PV"), reqs)["energy"]["overhead"]["controller_nj"] == 0.0
    assert run(small("VAR"), reqs)["energy"]["overhead"]["controller_nj"] > 0.0


def test_gated_victims_have_no_background_or_refresh():
    cfg = small(run_cycles=20_000)
    rep = run(cfg, trace())
    victims = [b for b in rep["per_bank"] if b["role"] == "victim"]
    assert victims
    for b in victims:
        assert b["background_nj"] == 0.0 and b["refresh_nj"] == 0.0 and b["refreshes"] == 0
        assert b["gate_events"] == 1
    assert rep["checks"]["gated_bank_commands"] == 0
    assert rep["checks"]["preservation_violations"] == 0


def test_bursts_conserved_between_pv_and_var():
    reqs = trace()
    pv, var = run(small("PV"), reqs), run(small("VAR"), reqs)
    for key in ("read_bursts", "write_bursts"):
        assert sum(b[key] for b in pv["per_bank"]) == sum(b[key] for b in var["per_bank"])


def test_stall_bounded_by_events():
    rep = run(small(), generate_synthetic("collision_stress", SMALL, 2, n_prefill=40, n_victim=40, overlap=0.5,
                                          victim=[0, 0], target=[0, 1]))
    tr = rep["translation"]
    assert tr["interrupts"] >= 40  # 20 colliding writes plus their read-backs
    assert tr["stall_cycles"] <= 6 * (tr["interrupts"] + tr["weak_row_accesses"])


def test_collision_stress_interrupts_equal_victim_writes():
    reqs = generate_synthetic("collision_stress", SMALL, 3, n_prefill=50, n_victim=30, overlap=1.0,
                              victim=[0, 0], target=[0, 1], read_back=False)
    rep = run(small(), reqs)
    assert rep["translation"]["interrupts"] == 30
    assert rep["checks"]["preservation_violations"] == 0


def test_dynamic_close_write_during_migration():
    cfg = small(gating_mode="dynamic_close", trigger_cycle=2000)
    reqs = [req(10 * i, "W", 0, 0, i, tag=i + 1) for i in range(64)]
    reqs += [req(2001, "W", 0, 0, 63, tag=999), req(2002, "W", 0, 0, 62, tag=998)]
    reqs += [req(5000 + 10 * i, "R", 0, 0, i) for i in range(64)]
    rep = run(cfg, reqs)
    copy_cycles = math.ceil(55.75 / 1.25)
    assert rep["migration"]["priority_copies"] >= 1
    assert rep["translation"]["max_write_stall_cycles"] <= copy_cycles + 3
    assert rep["checks"]["preservation_violations"] == 0
    assert rep["events"]["flag_history"] == [["00", "01", "10"]]


def test_reopen_cycle_restores_pairs():
    cfg = small(reopen_cycle=3000)
    reqs = [req(10 * i, "W", 0, 1, i, tag=i + 1) for i in range(20)]
    reqs += [req(4000 + 10 * i, "R", 0, 1, i) for i in range(20)]
    rep = run(cfg, reqs)
    assert rep["events"]["flag_history"] == [["00", "01", "10", "01", "00"]]
    assert rep["checks"]["preservation_violations"] == 0


def test_lp_mode_enters_low_power():
    reqs = [req(0, "R", 0, 0, 0), req(50_000, "R", 0, 0, 1)]
    base = run(small("ID"), reqs)
    lp = run(small("ID", lp_mode=True), reqs)
    assert lp["events"]["lp_entries"] >= 1
    assert sum(b["lp_ns"] for b in lp["per_bank"]) > 0
    assert lp["energy"]["components"]["background_nj"] < base["energy"]["components"]["background_nj"]
    assert lp["latency_ns"]["max"] >= base["latency_ns"]["max"]


def test_refresh_count_and_skip_of_gated():
    cfg = small(run_cycles=62_500)  # 78.125 us = 10 tREFI
    rep = run(cfg, [])
    assert rep["refresh"]["count"] == 10
    assert all(b["refreshes"] == (0 if b["role"] == "victim" else 10) for b in rep["per_bank"])


def test_extended_refresh_never_touches_weak_rows(tmp_path):
    weak = tmp_path / "weak.txt"
    weak.write_text("0 5\n4 7\n")
    cfg = small(refresh_multiplier=4, weak_row_remap=True, weak_rows_file=str(weak))
    reqs = [req(10 * i, "W", 4, 7, i, tag=i + 1) for i in range(10)] + \
           [req(200 + 10 * i, "R", 4, 7, i) for i in range(10)]
    rep = run(cfg, reqs)
    assert rep["checks"]["weak_row_violations"] == 0
    assert rep["translation"]["weak_row_accesses"] == 20
    assert rep["migration"]["weak_row_copies"] == 2
    assert rep["checks"]["preservation_violations"] == 0


def test_weak_row_check_raises_without_remap_entry(tmp_path):
    weak = tmp_path / "weak.txt"
    weak.write_text("4 7\n")
    cfg = small(refresh_multiplier=4, weak_row_remap=True, weak_rows_file=str(weak))
    results, _ = simulate(cfg, [])
    assert results[0].stats["weak_row_copies"] == 1


def test_extended_refresh_requires_remap():
    with pytest.raises(ConfigError):
        small(refresh_multiplier=4)


def test_compare_self_is_zero_and_mismatch_raises():
    a = run(small(), trace(1))
    table = compare(a, a)
    assert table["energy_total_pct"] == 0.0 and table["latency_mean_pct"] == 0.0
    b = run(small(), trace(2))
    with pytest.raises(FingerprintMismatch):
        compare(a, b)


def test_csv_has_row_per_bank():
    rep = run(small(), trace(n=20))
    lines = to_csv(rep).splitlines()
    assert len(lines) == 1 + SMALL.banks_per_channel
    assert lines[0].startswith("channel,rank,bank,role")


def test_multi_channel_geometry():
    g = Geometry(channels=2, rows_per_bank=64, cols_per_row=64)
    cfg = with_overrides(small(), geometry=g)
    reqs = generate_synthetic("uniform", g, 4, n=200, gap=40)
    rep = run(cfg, reqs)
    assert len(rep["per_bank"]) == 16
    assert len(rep["events"]["flag_history"]) == 2
    assert rep["checks"]["preservation_violations"] == 0


@pytest.mark.parametrize("preset", list(PRESETS))
def test_every_preset_runs(preset, tmp_path):
    weak = tmp_path / "weak.txt"
    weak.write_text("3 3\n")
    cfg = load_config(scenario=preset)
    kw = dict(geometry=SMALL, trace=TraceSource(kind="uniform", params={"n": 100}))
    if cfg.weak_row_remap:
        kw["weak_rows_file"] = str(weak)
    rep = run(with_overrides(cfg, **kw))
    assert rep["scenario"]["label"] == preset
    assert rep["checks"] == {"preservation_violations": 0, "gated_bank_commands": 0, "weak_row_violations": 0}


def test_trace_starts_after_upfront_weak_row_remap(tmp_path):
    weak = tmp_path / "weak.txt"
    weak.write_text("4 7\n5 9\n")
    cfg = small(refresh_multiplier=4, weak_row_remap=True, weak_rows_file=str(weak))
    reqs = [req(0, "R", 6, 0, 0)]
    rep = run(cfg, reqs)
    assert rep["migration"]["upfront_latency_ns"] > 0
    # the first request does not queue behind boot-time row copies
    assert rep["latency_ns"]["max"] < 100
