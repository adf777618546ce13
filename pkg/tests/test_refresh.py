from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from vardram.dram import Geometry
from vardram.errors import ConfigError
from vardram.refresh import (
    RefreshConfig,
    load_weak_rows,
    refresh_times,
    row_copy_ps,
    sample_weak_rows,
    save_weak_rows,
    schedule_refresh,
    weak_row_probability,
)


def oracle(ber, n):
    # direct power expansion at high precision, no log-space tricks
    with mpmath.workdps(800):
        return float(1 - (1 - mpmath.mpf(ber)) ** n)


def test_probability_edges():
    assert weak_row_probability(0.0, 65536) == 0.0
    assert weak_row_probability(1.0, 65536) == 1.0


def test_probability_default_value():
    p = weak_row_probability(4e-9, 65536)
    assert p == pytest.approx(oracle(4e-9, 65536), rel=1e-12)
    assert abs(p - 2.621096e-4) <= 1e-9
    # the linear estimate n * ber sits 3.3e-8 above the exact value
    assert 65536 * 4e-9 - p == pytest.approx(3.436e-8, rel=1e-3)


@given(st.floats(0, 1e-3), st.integers(1, 1 << 20))
def test_probability_matches_oracle(ber, n):
    assert weak_row_probability(ber, n) == pytest.approx(oracle(ber, n), rel=1e-10, abs=1e-300)


def test_probability_rejects_bad_input():
    with pytest.raises(ValueError):
        weak_row_probability(1.5, 10)
    with pytest.raises(ValueError):
        weak_row_probability(0.1, 0)


def test_sampling_edges():
    g = Geometry(rows_per_bank=64, cols_per_row=64)
    assert sample_weak_rows(g, 0.0, 1) == set()
    assert len(sample_weak_rows(g, 1.0, 1)) == 8 * 64


def test_sampling_mean_within_three_sigma():
    g = Geometry()
    p = weak_row_probability(4e-9, 65536)
    n_rows = g.banks_per_channel * g.rows_per_bank
    counts = [len(sample_weak_rows(g, p, s)) for s in range(50)]
    mu = n_rows * p
    sigma_mean = math.sqrt(n_rows * p * (1 - p) / 50)
    assert abs(np.mean(counts) - mu) <= 3 * sigma_mean


def test_sampling_deterministic():
    g = Geometry()
    assert sample_weak_rows(g, 1e-3, 7) == sample_weak_rows(g, 1e-3, 7)


def test_schedule_counts_over_64ms():
    cycles = int(64e6 / 1.25)
    _, n1 = schedule_refresh(RefreshConfig(multiplier=1), cycles)
    _, n4 = schedule_refresh(RefreshConfig(multiplier=4), cycles)
    assert (n1, n4) == (8192, 2048)
    assert 1 - n4 / n1 == 0.75


def test_schedule_multiple_ranks():
    stream, n = schedule_refresh(RefreshConfig(), 12_500, ranks=2)
    assert n == 4 and stream[0] == (7_812_500, 0) and stream[1] == (7_812_500, 1)


def test_refresh_times_are_multiples_of_period():
    t = refresh_times(RefreshConfig(multiplier=4), 100_000_000)
    assert t == [31_250_000, 62_500_000, 93_750_000]


def test_config_validation():
    with pytest.raises(ConfigError):
        RefreshConfig(multiplier=2)
    with pytest.raises(ConfigError):
        RefreshConfig(trefi=7000.0)


def test_row_copy_cost():
    # one tRC plus 128 bursts of 5 ns
    assert row_copy_ps(1024, 45.75, 5000) == 45_750 + 128 * 5000


def test_weak_row_file_roundtrip(tmp_path):
    path = tmp_path / "weak.txt"
    path.write_text("# profile\n70\n3 5\n0x2 0x1\n")
    assert load_weak_rows(path, 64) == {(1, 6), (3, 5), (2, 1)}
    save_weak_rows({(1, 6), (0, 2)}, path)
    assert load_weak_rows(path, 64) == {(1, 6), (0, 2)}
    path.write_text("1 2 3\n")
    with pytest.raises(ConfigError):
        load_weak_rows(path, 64)
