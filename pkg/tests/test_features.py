from __future__ import annotations

import numpy as np
import pytest
from hypothesis import example, given, strategies as st

from dcifp.features import (FeatureScaling, WindowStream, build_dataset, build_windows,
                            extract_features, in_single_burst, read_dataset, stack,
                            time_to_fill, trace_windows, write_dataset)
from dcifp.trace import Trace, TraceMeta, merge_traces


@st.composite
def timestamps(draw, max_n=80):
    gaps = draw(st.lists(st.sampled_from([0, 1, 5, 50, 400, 999, 1000, 1500, 20000]),
                         min_size=1, max_size=max_n))
    return np.cumsum([draw(st.integers(0, 5000))] + gaps).astype(np.int64)


def _trace(t, rnti=7, label="A"):
    n = len(t)
    d = (np.arange(n) % 3 == 0).astype(int)
    return Trace(t, np.full(n, rnti), d, 1000 + np.arange(n) * 10, np.ones(n, int),
                 TraceMeta(label=label))


def test_feature_rows_by_hand():
    tr = Trace([100, 250, 1250], [1, 1, 1], [0, 1, 0], [24000, 500, 1000], [1, 1, 1])
    f = extract_features(tr)
    assert f.tolist() == [[0.0, 24.0, 0.0], [1.0, 0.5, 0.15], [0.0, 1.0, 1.0]]


def test_custom_scaling():
    tr = Trace([0, 2000], [1, 1], [1, 0], [8, 16], [1, 1])
    s = FeatureScaling(tbs_unit_bits=8, dt_unit_ms=1, dl_code=-1, ul_code=1)
    assert extract_features(tr, s).tolist() == [[1, 1, 0], [-1, 2, 2000]]


def test_extract_from_records_matches_trace():
    tr = _trace(np.array([0, 3, 9, 2000]))
    assert np.array_equal(extract_features(tr.records), extract_features(tr))


def _brute_windows(t, W, stride, gap=1000, span=1000):
    out = []
    for s in range(0, len(t) - W + 1, stride):
        w = t[s:s + W]
        single = bool((np.diff(w) < gap).all()) and (span is None or w[-1] - w[0] < span)
        if not single:
            out.append(s)
    return out


@given(timestamps(), st.integers(1, 12), st.integers(1, 6))
def test_window_selection_matches_brute_force(t, W, stride):
    wins = build_windows(extract_features(_trace(t)), W, stride, t_ms=t)
    expect = _brute_windows(t, W, stride)
    assert len(wins) == len(expect)
    for w, s in zip(wins, expect):
        assert w.W == W and w.t_end_ms == t[s + W - 1]
        assert np.array_equal(w.rows, extract_features(_trace(t))[s:s + W])


@given(timestamps(), st.integers(1, 10))
def test_without_span_rule_only_gaps_count(t, W):
    wins = build_windows(extract_features(_trace(t)), W, 1, t_ms=t, burst_span_ms=None)
    assert [w.t_start_ms for w in wins] == [int(t[s]) for s in
                                            _brute_windows(t, W, 1, span=None)]


def test_long_slow_run_is_not_a_burst():
    # gaps of 999 ms never break a burst, but the span rule keeps the window
    t = np.arange(0, 5 * 999, 999)
    assert not in_single_burst(t)
    assert in_single_burst(t, burst_span_ms=None)
    assert in_single_burst(np.array([0, 10, 990]))


def test_rebuilt_times_from_dt_column():
    t = np.array([0, 500, 700, 5000, 5001])
    rows = extract_features(_trace(t))
    a = build_windows(rows, 2, 1)
    b = build_windows(rows, 2, 1, t_ms=t)
    assert [w.t_start_ms for w in a] == [w.t_start_ms for w in b]


@pytest.mark.parametrize("W,stride", [(0, 1), (3, 0)])
def test_bad_window_arguments(W, stride):
    with pytest.raises(ValueError):
        build_windows(np.zeros((5, 3)), W, stride)


@given(timestamps(max_n=40), st.integers(1, 8))
@example(np.array([0, 0, 1000, 1000]), 3)
def test_stream_matches_batch_stride_one(t, W):
    a, b = _trace(t, rnti=1), _trace(t + 3, rnti=2, label="A")
    cell = merge_traces([a, b])
    streamed = list(WindowStream(W).feed(cell))
    batch = trace_windows(cell, W, stride=1)
    # repeated timestamps can give distinct windows the same time span, so
    # compare whole windows rows included
    key = lambda w: (w.rnti, w.t_start_ms, w.t_end_ms, w.rows.tobytes())
    assert sorted(map(key, streamed)) == sorted(map(key, batch))


def test_stream_rejects_time_reversal():
    s = WindowStream(2)
    recs = _trace(np.array([5, 9])).records
    s.push(recs[1])
    with pytest.raises(ValueError):
        s.push(recs[0])


def test_dataset_labels_and_rntis():
    t = np.arange(0, 40_000, 1500)
    tr = Trace(np.repeat(t, 2), np.tile([1, 2], len(t)), np.zeros(2 * len(t), int),
               np.full(2 * len(t), 800), np.ones(2 * len(t), int), TraceMeta(label="Z"))
    ds = build_dataset([tr], 5)
    assert {w.rnti for w in ds} == {1, 2} and {w.label for w in ds} == {"Z"}
    assert len(ds) == 2 * (len(t) // 5)


def test_time_to_fill_constant_rate():
    # 1 instance every 250 ms: W instances take (W - 1) / 4 s
    t = np.arange(0, 100_000, 250)
    fills = time_to_fill(_trace(t), 40)
    assert len(fills) == len(t) // 40
    assert fills == pytest.approx([39 / 4] * len(fills))


def test_time_to_fill_keeps_burst_windows():
    t = np.arange(0, 200, 2)
    assert len(time_to_fill(_trace(t), 10)) == 10
    assert build_dataset([_trace(t)], 10) == []


def test_stack_checks_window_sizes():
    t = np.arange(0, 30_000, 1200)
    rows = extract_features(_trace(t))
    with pytest.raises(ValueError):
        stack(build_windows(rows, 3) + build_windows(rows, 4))
    with pytest.raises(ValueError):
        stack([])


@given(timestamps(max_n=60), st.integers(1, 6))
def test_dataset_file_roundtrip(tmp_path_factory, t, W):
    ds = build_windows(extract_features(_trace(t)), W, 1, t_ms=t, label="Disney+", rnti=0xBEEF)
    p = tmp_path_factory.mktemp("d") / "ds.csv"
    write_dataset(ds, p, meta={"capture": 0.05})
    back = read_dataset(p)
    assert len(back) == len(ds)
    for a, b in zip(ds, back):
        assert np.array_equal(a.rows, b.rows)
        assert (a.label, a.rnti, a.t_start_ms, a.t_end_ms) == (b.label, b.rnti, b.t_start_ms,
                                                              b.t_end_ms)


def test_truncated_dataset_file_rejected(tmp_path):
    t = np.arange(0, 30_000, 1200)
    ds = build_windows(extract_features(_trace(t)), 4, label="A")
    p = tmp_path / "ds.csv"
    write_dataset(ds, p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError, match="expected 4"):
        read_dataset(p)


def test_three_record_feature_example():
    tr = Trace([0, 1000, 1500], [1] * 3, [0, 1, 0], [8192, 1024, 8192], [1] * 3)
    f = extract_features(tr)
    assert f[:, 2].tolist() == [0, 1.0, 0.5] and f[:, 0].tolist() == [0, 1, 0]
    assert f[:, 1].tolist() == [8.192, 1.024, 8.192]
    assert extract_features(tr.take([0])).tolist() == [[0, 8.192, 0]]
    tie = Trace([5, 5], [1, 1], [0, 0], [8, 8], [1, 1])
    assert extract_features(tie)[1, 2] == 0


def test_unsorted_records_rejected():
    recs = _trace(np.array([0, 10])).records
    with pytest.raises(ValueError):
        extract_features(recs[::-1])


@given(timestamps(), st.integers(0, 80))
def test_features_commute_with_truncation(t, k):
    full = extract_features(_trace(t))
    assert np.array_equal(extract_features(_trace(t[:k])), full[:k])


def test_window_count_bound_and_exclusion_examples():
    rows = extract_features(_trace(np.arange(100) * 1500))
    assert len(build_windows(rows, 40, 40)) == 2
    fast = extract_features(_trace(np.arange(40) * 10))
    assert build_windows(fast, 40, 40) == []
    one_gap = np.arange(40) * 10
    one_gap[20:] += 1000
    assert len(build_windows(extract_features(_trace(one_gap)), 40, 40, t_ms=one_gap)) == 1
    assert build_windows(rows[:39], 40) == []


def test_emitted_windows_fail_the_exclusion_predicate():
    from dcifp.synth import builtin_profiles
    from dcifp.corpus import captured_chunk
    tr = captured_chunk(builtin_profiles()["YouTube"], 1200, 0.05, seed=1)
    wins = trace_windows(tr, 40, stride=1)
    assert wins
    t = tr.t_ms
    for w in wins:
        s = int(np.searchsorted(t, w.t_start_ms))
        assert not in_single_burst(t[s:s + 40]) and w.W == 40


def test_mean_dt_scales_with_inverse_capture():
    from dcifp.capture import CaptureConfig, apply_capture
    from dcifp.synth import builtin_profiles, generate
    gen = generate(builtin_profiles()["Telegram"], 600, 1, seed=0)
    full = extract_features(gen)[1:, 2].mean()
    for p in (0.1, 0.25):
        thin = extract_features(apply_capture(gen, CaptureConfig(p, seed=1)))[1:, 2].mean()
        assert thin / full == pytest.approx(1 / p, rel=0.05)


def test_time_to_fill_voip_20ms_and_empty():
    t = np.arange(400) * 20
    assert time_to_fill(_trace(t), 40) == pytest.approx([0.78] * 10)
    assert time_to_fill(Trace.empty(), 40) == []


def test_youtube_fill_time_tens_of_seconds():
    from dcifp.corpus import captured_chunk
    from dcifp.synth import builtin_profiles
    tr = captured_chunk(builtin_profiles()["YouTube"], 3000, 0.05, seed=2)
    fills = time_to_fill(tr, 40)[:100]
    assert len(fills) >= 50 and 5 <= np.mean(fills) <= 60
