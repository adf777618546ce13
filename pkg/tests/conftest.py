from __future__ import annotations

import dataclasses

import pytest

from vardram.config import load_config, with_overrides
from vardram.dram import DecodedAddress, Geometry, encode_address
from vardram.trace import MemoryRequest

SMALL = Geometry(rows_per_bank=64, cols_per_row=64)


def small_var_config(pairs=((0, 0, 0, 1),), scenario="VAR", **changes):
    cfg = load_config(scenario=scenario)
    variation = dataclasses.replace(cfg.variation, pairs=tuple(pairs))
    return with_overrides(cfg, geometry=SMALL, victim_count=len(pairs), variation=variation, **changes)


def req(cycle, op, bank, row, col, tag=0, rank=0, geometry=SMALL):
    addr = encode_address(DecodedAddress(0, rank, bank, row, col), geometry)
    return MemoryRequest(cycle, op, addr, tag)


@pytest.fixture
def small_geometry():
    return SMALL


# acceptance verdicts, filled by test_acceptance.py and echoed after the run
VERDICTS = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
