from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcifp.capture import CaptureConfig, apply_capture, estimate_capture_ratio
from dcifp.synth import builtin_profiles, generate
from dcifp.trace import Trace

TRACE = generate(builtin_profiles()["Telegram"], 120, 0x4601, seed=0)


@pytest.mark.parametrize("p", [0.05, 0.1, 0.5])
def test_capture_count_within_three_sigma(p):
    n = len(TRACE)
    for seed in range(5):
        k = len(apply_capture(TRACE, CaptureConfig(p, seed=seed)))
        assert abs(k - n * p) <= 3 * np.sqrt(n * p * (1 - p))


@given(st.floats(0.01, 1.0), st.integers(0, 2**32))
def test_capture_is_an_ordered_subset(p, seed):
    cap = apply_capture(TRACE, CaptureConfig(p, seed=seed))
    # every captured record exists in the source, in the same order
    src = {(int(t), int(b)) for t, b in zip(TRACE.t_ms, TRACE.tbs_bits)}
    assert {(int(t), int(b)) for t, b in zip(cap.t_ms, cap.tbs_bits)} <= src
    assert (np.diff(cap.t_ms) >= 0).all()
    assert cap.meta.capture_ratio == p and cap.meta.label == TRACE.meta.label


def test_capture_prob_one_is_identity():
    assert apply_capture(TRACE, CaptureConfig(1.0)).same_records(TRACE)


def test_seed_determinism():
    a = apply_capture(TRACE, CaptureConfig(0.1, seed=3))
    b = apply_capture(TRACE, CaptureConfig(0.1, seed=3))
    assert a == b


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
def test_capture_prob_range(bad):
    with pytest.raises(ValueError):
        CaptureConfig(bad)


def test_markov_loss_rate_matches_stationary_share():
    g2b, b2g, p = 0.02, 0.1, 0.5
    cap = apply_capture(TRACE, CaptureConfig(p, seed=1, burst_loss=(g2b, b2g)))
    expected = p * b2g / (g2b + b2g)
    assert abs(len(cap) / len(TRACE) - expected) < 0.05


def test_markov_losses_are_clustered():
    cfg = CaptureConfig(1.0, seed=2, burst_loss=(0.01, 0.05))
    cap = apply_capture(TRACE, cfg)
    kept = np.isin(np.arange(len(TRACE)), np.searchsorted(TRACE.t_ms, cap.t_ms))
    runs = np.diff(np.flatnonzero(np.diff(kept.astype(int)) != 0))
    # mean run length well above the i.i.d. value at the same loss rate
    assert runs.mean() > 5


@given(st.integers(0, 50), st.integers(0, 100))
def test_jitter_bounded_and_sorted(j, seed):
    cap = apply_capture(TRACE, CaptureConfig(1.0, seed=seed, jitter_ms=j))
    assert (np.diff(cap.t_ms) >= 0).all()
    assert np.abs(np.sort(cap.t_ms) - np.sort(TRACE.t_ms)).max() <= j
    assert len(cap) == len(TRACE)


def test_estimate_capture_ratio():
    cap = apply_capture(TRACE, CaptureConfig(0.25, seed=0))
    assert estimate_capture_ratio(TRACE, cap) == len(cap) / len(TRACE)
    with pytest.raises(ValueError):
        estimate_capture_ratio(TRACE.take(np.zeros(len(TRACE), bool)), cap)


def _flat(n):
    t = np.arange(n)
    return Trace(t, np.ones(n, int), np.zeros(n, int), np.full(n, 8), np.ones(n, int))


@pytest.mark.parametrize("p", [0.05, 0.10])
def test_100k_records_three_sigma(p):
    k = len(apply_capture(_flat(100_000), CaptureConfig(p, seed=11)))
    assert abs(k - 100_000 * p) <= 3 * np.sqrt(100_000 * p * (1 - p))


def test_composition_matches_product():
    src = _flat(200_000)
    two = apply_capture(apply_capture(src, CaptureConfig(0.5, seed=1)), CaptureConfig(0.2, seed=2))
    p = 0.1
    assert abs(len(two) - len(src) * p) <= 3 * np.sqrt(len(src) * p * (1 - p))


def test_field_values_preserved():
    cap = apply_capture(TRACE, CaptureConfig(0.3, seed=4))
    idx = np.searchsorted(TRACE.t_ms, cap.t_ms)
    # Telegram timestamps can repeat, so compare on the first match's neighbourhood
    for i, j in enumerate(idx[:200]):
        cand = range(j, min(j + 3, len(TRACE)))
        assert any(TRACE[k] == cap[i] for k in cand)


def test_ratio_examples():
    gen = _flat(20_000)
    assert estimate_capture_ratio(gen, gen.take(np.arange(1000))) == 0.05
    assert estimate_capture_ratio(gen, gen) == 1.0
    assert estimate_capture_ratio(gen, gen.take(np.zeros(len(gen), bool))) == 0.0
