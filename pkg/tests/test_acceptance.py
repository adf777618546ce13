"""End-to-end acceptance criteria, one test per criterion.

Each test records a verdict line that is printed in the terminal summary.
"""

from __future__ import annotations

import itertools
import math
import random
import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from scipy.spatial.distance import cdist

from conftest import SMALL, VERDICTS, req, small_var_config
from vardram.config import TraceSource, load_config, with_overrides
from vardram.dram import Geometry, decode_address
from vardram.errors import FlagTransitionError
from vardram.refresh import RefreshConfig, schedule_refresh, weak_row_probability
from vardram.remap import Flag, FlagState, RemapEngine
from vardram.report import run, to_json
from vardram.trace import bundled_names, generate_synthetic, has_forced_collisions
from vardram.trie import RemapTrie, TargetPair
from vardram.variation import VariationParams, default_floorplan, generate_variation_map, spherical_correlation


def verdict(n, ok, detail):
    VERDICTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


_RUNS = {}


def bundled_run(name, preset):
    key = (name, preset)
    if key not in _RUNS:
        cfg = with_overrides(load_config(scenario=preset), trace=TraceSource(bundled=name))
        _RUNS[key] = run(cfg)
    return _RUNS[key]


def test_01_correlation_fidelity():
    t0 = time.perf_counter()
    dims = (64, 64)
    phi = 0.3
    plan = default_floorplan(dims, 1, 8)
    fields = np.stack([
        generate_variation_map(VariationParams(systematic_fraction=1.0, phi=phi, seed=s), dims, plan).grid.ravel()
        for s in range(100)
    ])
    sigma2 = VariationParams().sigma ** 2
    y = (np.arange(64) + 0.5) / 64
    pts = np.column_stack([a.ravel() for a in np.meshgrid(y, y, indexing="ij")])
    rng = np.random.default_rng(0)
    i = rng.integers(0, 4096, 40_000)
    j = rng.integers(0, 4096, 40_000)
    d = np.linalg.norm(pts[i] - pts[j], axis=1)
    emp = (fields[:, i] * fields[:, j]).mean(axis=0) / sigma2

    def model(x):
        # independent evaluation of the spherical model
        x = np.minimum(x / phi, 1.0)
        return 1 - 1.5 * x + 0.5 * x**3

    edges = np.linspace(0, 0.6, 13)
    worst = 0.0
    for lo, hi in zip(edges, edges[1:]):
        m = (d >= lo) & (d < hi)
        if m.sum() < 100:
            continue
        worst = max(worst, abs(emp[m].mean() - model(d[m]).mean()))
    exact = spherical_correlation(0.0, phi) == 1.0 and spherical_correlation(phi, phi) == 0.0 \
        and spherical_correlation(0.9, phi) == 0.0
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.1 and exact and elapsed < 60
    verdict(1, ok, f"max bin error {worst:.4f} (<= 0.1), endpoints exact={exact}, {elapsed:.1f} s")
    assert ok


@pytest.mark.xfail(strict=True, reason="stated reference value is the linear estimate n*ber; "
                                         "the exact formula gives 2.621096e-4, 3.3e-8 away")
def test_02_weak_row_formula():
    t0 = time.perf_counter()
    p = weak_row_probability(4e-9, 65536)
    with mpmath.workdps(60):
        log_oracle = float(-mpmath.expm1(65536 * mpmath.log1p(-mpmath.mpf("4e-9"))))
    oracle_ok = abs(p - log_oracle) <= 1e-15
    elapsed = time.perf_counter() - t0
    ok = abs(p - 2.62143e-4) <= 1e-9 and oracle_ok and elapsed < 1
    verdict(2, ok, f"p={p:.7e}, oracle={log_oracle:.7e} (agree={oracle_ok}), "
                   f"|p - 2.62143e-4| = {abs(p - 2.62143e-4):.2e} vs tolerance 1e-9")
    assert ok


def test_03_refresh_reduction():
    t0 = time.perf_counter()
    cycles = int(64e6 / 1.25)
    _, n1 = schedule_refresh(RefreshConfig(multiplier=1), cycles)
    _, n4 = schedule_refresh(RefreshConfig(multiplier=4), cycles)
    # and through the simulator on a 2-rank device with an empty trace
    g = Geometry(ranks_per_channel=2, rows_per_bank=64, cols_per_row=64)
    base = with_overrides(load_config(scenario="PV"), geometry=g, run_cycles=cycles)
    sim1 = run(base, [])["refresh"]["per_rank"]
    reduction = 1 - n4 / n1
    elapsed = time.perf_counter() - t0
    ok = n1 == 8192 and n4 == 2048 and reduction == 0.75 and sim1 == [8192, 8192] and elapsed < 10
    verdict(3, ok, f"1x={n1}, 4x={n4}, reduction={reduction:.1%}, simulated per rank={sim1}, {elapsed:.1f} s")
    assert ok


def test_04_trie_oracle():
    t0 = time.perf_counter()
    rng = random.Random(42)
    trie = RemapTrie(1 << 30)
    ref = {}
    mismatches = 0
    bad_costs = 0
    keys = [rng.getrandbits(32) for _ in range(5000)]
    for _ in range(100_000):
        k = rng.choice(keys)
        op = rng.random()
        if op < 0.4:
            v = TargetPair(rng.randrange(4), rng.randrange(8))
            trie.insert(k, v)
            ref[k] = v
        elif op < 0.8:
            got, cost = trie.lookup(k)
            mismatches += got != ref.get(k)
            bad_costs += cost not in (3, 6)
        else:
            trie.delete(k)
            ref.pop(k, None)
    mismatches += dict(trie.items()) != ref
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and bad_costs == 0 and elapsed < 5
    verdict(4, ok, f"mismatches={mismatches}, bad costs={bad_costs}, {elapsed:.1f} s")
    assert ok


def _preservation_trial(seed, g):
    rnd = random.Random(seed)
    eng = RemapEngine(g, [(0, 1), (2, 3)], primary_capacity=1 << 20, aux_capacity=1 << 20)
    last = {}
    trace = generate_synthetic("collision_stress", g, seed, victim=[0, 0], target=[0, 1], n_prefill=30,
                               n_victim=30, rows=4, overlap=rnd.random(), read_back=False)
    reqs = [(decode_address(r.address, g), r.is_write, r.tag) for r in trace]
    errors = 0

    def do(d, write, tag):
        nonlocal errors
        acc = eng.access(d.rank, d.bank, d.row, d.column, write, tag)
        key = (d.rank, d.bank, d.row, d.column)
        if write:
            last[key] = tag
        elif acc.tag != last.get(key):
            errors += 1

    def random_req():
        d = type(reqs[0][0])(0, 0, rnd.choice([0, 1, 2, 3, 4]), rnd.randrange(4), rnd.randrange(g.cols_per_row))
        return d, rnd.random() < 0.6, rnd.getrandbits(63) | 1

    split = rnd.randrange(len(reqs))
    for r in reqs[:split]:
        do(*r)
    eng.migrate_and_remap([0, 2], [1, 3], "forward")
    rest = reqs[split:]
    while eng.migration.pending or rest:
        if rnd.random() < 0.4 and eng.migration.pending:
            eng.next_copy()
        elif rest:
            do(*rest.pop(0))
        else:
            do(*random_req())
    eng.finish_migration()
    for _ in range(rnd.randrange(30)):
        do(*random_req())
    eng.migrate_and_remap([1, 3], [0, 2], "reverse")
    while eng.migration.pending:
        if rnd.random() < 0.5:
            eng.next_copy()
        else:
            do(*random_req())
    eng.finish_migration()
    errors += sum(eng.read_logical(*k) != tag for k, tag in last.items())
    errors += len(set(eng.where.values())) != len(eng.where)
    errors += eng.flag.value is not Flag.IDLE
    return errors == 0


def test_05_data_preservation():
    t0 = time.perf_counter()
    g = Geometry(rows_per_bank=16, cols_per_row=16)
    passed = sum(_preservation_trial(seed, g) for seed in range(200))
    elapsed = time.perf_counter() - t0
    ok = passed == 200 and elapsed < 60
    verdict(5, ok, f"{passed}/200 interleavings preserved every last write, {elapsed:.1f} s")
    assert ok


def test_06_translation_invariants():
    gated_cmds = {n: bundled_run(n, "VAR")["checks"]["gated_bank_commands"] for n in bundled_names()}
    illegal_rejected = 0
    for a, b in itertools.product(Flag, Flag):
        f = FlagState(a)
        try:
            f.transition(b)
        except FlagTransitionError:
            illegal_rejected += 1
    direct = 0
    for a, b in ((Flag.IDLE, Flag.GATED), (Flag.GATED, Flag.IDLE)):
        try:
            FlagState(a).transition(b)
        except FlagTransitionError:
            direct += 1
    ok = all(v == 0 for v in gated_cmds.values()) and direct == 2 and illegal_rejected == 5
    verdict(6, ok, f"gated-bank commands {sum(gated_cmds.values())} over {len(gated_cmds)} traces, "
                   f"00<->10 rejected={direct == 2}, illegal transitions rejected {illegal_rejected}/5")
    assert ok


def test_07_energy_savings():
    t0 = time.perf_counter()
    savings = {}
    for n in bundled_names():
        pv = bundled_run(n, "PV")["energy"]["total_nj"]
        var = bundled_run(n, "VAR")["energy"]["total_nj"]
        savings[n] = 100 * (pv - var) / pv
    idle = {n: s for n, s in savings.items() if n.startswith("idle")}
    elapsed = time.perf_counter() - t0
    ok = all(15 <= s <= 50 for s in idle.values()) and all(s > 0 for s in savings.values()) and elapsed < 120
    text = ", ".join(f"{n} {s:.1f}%" for n, s in savings.items())
    verdict(7, ok, f"savings VAR vs PV: {text}")
    assert ok


def test_08_latency_direction():
    rows = []
    ok = True
    for n in bundled_names():
        ideal = bundled_run(n, "ID")["latency_ns"]["mean"]
        pv = bundled_run(n, "PV")["latency_ns"]["mean"]
        var = bundled_run(n, "VAR")["latency_ns"]["mean"]
        over = 100 * (var - ideal) / ideal
        ok &= var < pv
        if not has_forced_collisions(n):
            ok &= over <= 5.0
        rows.append(f"{n} {over:+.2f}%{' (collisions)' if has_forced_collisions(n) else ''}")
    verdict(8, ok, "VAR < PV on all; VAR vs IDEAL: " + ", ".join(rows))
    assert ok


def _trie_bytes_oracle(keys, node_bytes=8, payload_bytes=8):
    # nodes are the distinct 8/16/24-bit prefixes plus one leaf per key
    prefixes = sum(len({k >> s for k in keys}) for s in (24, 16, 8))
    return (prefixes + len(keys)) * node_bytes + len(keys) * payload_bytes


def test_09_overflow_and_reopen_triggers():
    cap = int(0.02 * SMALL.channel_bytes)
    slots = SMALL.rows_per_bank * SMALL.cols_per_row
    # (a) fill target bank 1 with its own data while victim 0 is gated
    fill = [req(2 * i, "W", 1, i // 64, i % 64, tag=i + 1) for i in range(slots)]
    expected_a = math.ceil(0.9 * slots) - 1  # index of the access that crosses 90 %
    rep_a = run(small_var_config(), fill)
    got_a = rep_a["events"]["reverse_migrate_at_request"]

    # (b) write distinct victim addresses until the primary trie reaches 90 % of its ceiling
    rng = random.Random(9)
    order = rng.sample(range(slots), slots)
    writes = [req(2 * i, "W", 0, s // 64, s % 64, tag=i + 1) for i, s in enumerate(order)]
    row_bits, col_bits = 6, 6
    keys = []
    expected_b = None
    for i, s in enumerate(order):
        keys.append((0 << (row_bits + col_bits)) | s)
        if _trie_bytes_oracle(keys) >= 0.9 * cap:
            expected_b = i
            break
    rep_b = run(small_var_config(), writes[: expected_b + 50])
    got_b = rep_b["events"]["reopen_all_at_request"]
    hist = rep_a["events"]["flag_history"] + rep_b["events"]["flag_history"]
    ok = (got_a == [expected_a] and rep_a["events"]["reverse_migrate_triggers"] == 1
          and got_b == [expected_b] and rep_b["events"]["reopen_all"] == 1
          and all(h == ["00", "01", "10", "01", "00"] for h in hist)
          and rep_a["checks"]["preservation_violations"] == 0 and rep_b["checks"]["preservation_violations"] == 0)
    verdict(9, ok, f"reverse_migrate at {got_a} (expected {expected_a}), "
                   f"reopen_all at {got_b} (expected {expected_b}, trie cap {cap} B)")
    assert ok


def test_10_determinism(tmp_path):
    ok = True
    for preset in ("VAR", "VAR-LP-R"):
        cfg = with_overrides(load_config(scenario=preset), seed=7, trace=TraceSource(bundled="idle_a"))
        ok &= to_json(run(cfg)) == to_json(run(cfg))
    verdict(10, ok, "two runs of VAR and VAR-LP-R (seed 7) gave byte-identical JSON")
    assert ok


def test_11_gating_overhead_accounting():
    cfg = small_var_config(pairs=((0, 0, 0, 1), (0, 2, 0, 3)), reopen_cycle=40_000, run_cycles=80_000)
    reqs = [req(100 * i, "W", 0, 0, i, tag=i + 1) for i in range(30)]
    rep = run(cfg, reqs)
    e = rep["energy"]
    g_events = e["gate_events"]
    gated_ns = e["gated_ns"]
    # exact rational references: G x 1.2 pJ and 8.89 nW x t, in nJ
    transient_ref = float(Fraction(g_events) * Fraction("1.2") / 1000)
    leakage_ref = float(Fraction("8.89") * Fraction(gated_ns) / 10**9)
    t_err = abs(e["overhead"]["transient_nj"] - transient_ref)
    l_err = abs(e["overhead"]["leakage_nj"] - leakage_ref)
    ok = (g_events == 4 and t_err <= 2 * math.ulp(transient_ref) and l_err <= 2 * math.ulp(leakage_ref))
    verdict(11, ok, f"G={g_events}, transient {e['overhead']['transient_nj']!r} nJ (err {t_err:.1e}), "
                    f"leakage {e['overhead']['leakage_nj']!r} nJ over {gated_ns} ns (err {l_err:.1e})")
    assert ok
