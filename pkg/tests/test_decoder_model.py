from __future__ import annotations

import math
import random

import pytest

from triage_sim.decoder_model import (
    DecoderPool,
    JitterModel,
    LatencyModel,
    PoolAssignmentError,
    block_decode_duration,
    decode_duration,
    sample_jitter_factor,
    sigma,
    uniform_pool,
)


def test_duration_normalization_anchor():
    lm = LatencyModel(alpha=1.17, d=10, buffer_b=5)
    assert decode_duration(0, lm, 1.0) == 1.0


def test_duration_power_law_value():
    lm = LatencyModel(alpha=1.17, d=10, buffer_b=5)  # buffer ratio 0.5
    got = decode_duration(2, lm, 1.0)
    assert abs(got - 2**1.17) < 1e-12
    assert abs(got - 2.2500) < 2e-3


def test_duration_linear_in_inverse_speed():
    lm = LatencyModel(alpha=1.17, d=10, buffer_b=5)
    assert decode_duration(2, lm, 2.0) == pytest.approx(decode_duration(2, lm, 1.0) / 2)


def test_duration_tau_ratio_mode():
    lm = LatencyModel(alpha=1.17, d=10, buffer_b=5, speed_mode="tau_ratio")
    assert decode_duration(0, lm, 0.8) == pytest.approx(0.8)
    assert decode_duration(2, lm, 0.8) == pytest.approx(0.8 * 2**1.17)


def test_duration_monotonicity():
    lm = LatencyModel(alpha=1.17, d=9, buffer_b=3)
    for deg in range(6):
        assert decode_duration(deg + 1, lm, 1.0) > decode_duration(deg, lm, 1.0)
    for r in (0.5, 1.0, 1.5):
        assert decode_duration(3, lm, r * 1.1) < decode_duration(3, lm, r)


def test_block_duration_sums_volumes():
    lm = LatencyModel(alpha=1.17, d=10, buffer_b=5)
    got = block_decode_duration([0, 2], lm, 1.0)
    assert got == pytest.approx((1.0 + 2.0) ** 1.17)
    single = block_decode_duration([1], lm, 1.0)
    assert single == pytest.approx(decode_duration(1, lm, 1.0))


def test_latency_model_validation():
    with pytest.raises(ValueError):
        LatencyModel(alpha=0)
    with pytest.raises(ValueError):
        LatencyModel(buffer_b=20, d=9)
    with pytest.raises(ValueError):
        LatencyModel(speed_mode="sideways")


def test_sigma_baseline_exact():
    assert sigma(5, 1e-3, JitterModel()) == 0.3447


def test_sigma_affine_log_value():
    got = sigma(9, 3e-3, JitterModel())
    expected = 0.3447 + 0.0041 * math.log2(9 / 5) + 15.03 * 2e-3
    assert got == pytest.approx(expected)
    assert abs(got - 0.3782) < 5e-4


def test_sigma_clamps():
    jm = JitterModel()
    assert sigma(5, 0.03, jm) == 0.70  # raw 0.7806
    raw_low = 0.3447 + 0.0041 * math.log2(3 / 5) + 15.03 * (1e-6 - 1e-3)
    assert raw_low < 0.33
    assert sigma(3, 1e-6, jm) == pytest.approx(raw_low)
    for d in (3, 5, 9, 21):
        for p in (1e-4, 1e-3, 1e-2, 0.1):
            assert jm.sigma_min <= sigma(d, p, jm) <= jm.sigma_max


def test_sigma_preconditions():
    with pytest.raises(ValueError):
        sigma(2, 1e-3, JitterModel())
    with pytest.raises(ValueError):
        sigma(5, 0.0, JitterModel())


def test_jitter_factor_degenerate_sigma():
    rng = random.Random(1)
    assert sample_jitter_factor(0.0, rng) == 1.0


def test_jitter_factor_positive_and_deterministic():
    a = [sample_jitter_factor(0.3447, random.Random(42)) for _ in range(100)]
    b = [sample_jitter_factor(0.3447, random.Random(42)) for _ in range(100)]
    assert a == b
    assert all(x > 0 for x in a)


def test_jitter_mean_preservation_quick():
    rng = random.Random(7)
    n = 200_000
    total = sum(sample_jitter_factor(0.3447, rng) for _ in range(n))
    assert abs(total / n - 1.0) < 0.01


def test_pool_fresh_all_free():
    pool = uniform_pool(5, 1.0)
    assert pool.num_free(0.0) == 5
    assert pool.free_indices(0.0) == [0, 1, 2, 3, 4]


def test_pool_finish_boundary_inclusive():
    pool = uniform_pool(3, 1.0)
    pool.assign(0, 0.0, 3.0)
    assert pool.num_free(2.9) == 2
    assert pool.num_free(3.0) == 3


def test_pool_busy_assignment_rejected():
    pool = uniform_pool(1, 1.0)
    pool.assign(0, 0.0, 2.0)
    with pytest.raises(PoolAssignmentError):
        pool.assign(0, 1.0, 3.0)


def test_pool_interleaved_matches_interval_oracle():
    rng = random.Random(3)
    pool = uniform_pool(4, 1.0)
    intervals = []
    t = 0.0
    for _ in range(200):
        t += rng.random()
        free = pool.free_indices(t)
        if free and rng.random() < 0.7:
            i = free[0]
            finish = t + rng.random() * 3
            pool.assign(i, t, finish)
            intervals.append((i, t, finish))
        # Brute-force count of busy decoders from raw intervals.
        busy = {i for i, s, f in intervals if s <= t < f}
        assert pool.num_free(t) == pool.m - len(busy)


def test_pool_validation():
    with pytest.raises(ValueError):
        DecoderPool([])
    with pytest.raises(ValueError):
        DecoderPool([1.0, -1.0])
    with pytest.raises(ValueError):
        uniform_pool(2, 1.0).assign(0, 1.0, 1.0)
