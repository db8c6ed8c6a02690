from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcifp.synth import (MIN_BURST_SILENCE_MS, AppProfile, ProfileError, TrafficKind,
                         builtin_profiles, derive_seed, generate, generate_cell, load_profiles,
                         round_robin_cell, save_profiles)
from dcifp.trace import DEFAULT_APPS

PROFILES = builtin_profiles()


def test_builtin_set_covers_default_apps():
    assert tuple(PROFILES) == DEFAULT_APPS
    kinds = {p.kind for p in PROFILES.values()}
    assert kinds == {TrafficKind.BURST_STREAMING, TrafficKind.CONTINUOUS_VOIP}


@pytest.mark.parametrize("name", DEFAULT_APPS)
def test_generate_is_seed_deterministic(name):
    a = generate(PROFILES[name], 120, 0x4601, seed=3)
    b = generate(PROFILES[name], 120, 0x4601, seed=3)
    c = generate(PROFILES[name], 120, 0x4601, seed=4)
    assert a == b
    assert not a.same_records(c)
    assert a.meta.label == name and a.meta.seed == 3


@given(st.sampled_from(DEFAULT_APPS), st.integers(0, 2**32), st.floats(5, 400))
def test_generated_records_valid_and_in_range(name, seed, dur):
    tr = generate(PROFILES[name], dur, 0x1234, seed)
    assert set(tr.rntis()) <= {0x1234}
    if len(tr):
        assert tr.t_ms.min() >= 0 and tr.t_ms.max() < dur * 1000
        assert (np.diff(tr.t_ms) >= 0).all()
        assert tr.rb_count.max() <= 273


def _bursts(t, gap_ms=MIN_BURST_SILENCE_MS):
    cut = np.flatnonzero(np.diff(t) >= gap_ms)
    return np.split(t, cut + 1)


@pytest.mark.parametrize("name", ["YouTube", "Netflix", "Disney+", "Spotify"])
def test_bursts_are_sub_second_and_spaced(name):
    p = PROFILES[name]
    t = generate(p, 1200, 1, seed=11).t_ms
    bursts = _bursts(t)
    assert all(b[-1] - b[0] < 1000 for b in bursts)
    starts = np.array([b[0] for b in bursts])
    gaps = np.diff(starts) / 1000
    lo, hi = p.burst_interval_s
    # start-to-start gaps lie in the interval range, up to floor rounding and
    # the in-burst offset of the first instance
    assert gaps.min() >= lo - 1.0 and gaps.max() <= hi + 1.0
    sizes = np.array([len(b) for b in bursts[1:-1]])
    assert sizes.min() >= p.instances_per_burst[0] * 0.9
    assert sizes.max() <= p.instances_per_burst[1]


def test_netflix_burst_count_matches_renewal_simulation():
    # bursts in T seconds: first start ~ U(0, lo), then U(lo, hi) gaps
    p = PROFILES["Netflix"]
    T = 3600
    rng = np.random.default_rng(0)
    sim = []
    for _ in range(4000):
        t, k = rng.uniform(0, p.burst_interval_s[0]), 0
        while t < T:
            k += 1
            t += rng.uniform(*p.burst_interval_s)
        sim.append(k)
    sim = np.array(sim)
    got = np.array([len(_bursts(generate(p, T, 1, seed=s).t_ms)) for s in range(40)])
    assert abs(got.mean() - sim.mean()) < 3 * sim.std() / np.sqrt(len(got)) + 0.05


@pytest.mark.parametrize("name", ["WhatsApp", "Telegram"])
def test_voip_period_within_range(name):
    p = PROFILES[name]
    t = generate(p, 60, 1, seed=5).t_ms
    d = np.diff(t)
    lo, hi = p.voip_period_ms
    assert d.min() >= np.floor(lo) - 1 and d.max() <= np.ceil(hi) + 1
    assert abs(len(t) / 60.0 - 2000.0 / (lo + hi)) < 0.05 * 2000.0 / (lo + hi)


def test_tbs_lognormal_median():
    p = PROFILES["YouTube"]
    tr = generate(p, 600, 1, seed=2)
    dl = tr.tbs_bits[tr.direction == 0]
    assert abs(np.log(np.median(dl)) - p.tbs_dl[0]) < 0.05
    assert abs((tr.direction == 1).mean() - p.ul_fraction) < 0.02


def test_outlier_gaps_respect_minimum_silence():
    p = PROFILES["Disney+"].with_(outlier_prob=1.0, outlier_scale=(0.01, 0.02))
    t = generate(p, 600, 1, seed=1).t_ms
    assert all(b[-1] - b[0] < 1000 for b in _bursts(t))


@pytest.mark.parametrize("kw", [
    dict(ul_fraction=1.5),
    dict(burst_interval_s=(5, 2)),
    dict(burst_duration_ms=(100, 1000)),
    dict(burst_interval_s=(1, 2)),
    dict(instances_per_burst=None),
    dict(outlier_prob=-0.1),
])
def test_profile_validation(kw):
    with pytest.raises(ProfileError):
        PROFILES["YouTube"].with_(**kw)


def test_voip_profile_needs_period():
    with pytest.raises(ProfileError):
        AppProfile("X", TrafficKind.CONTINUOUS_VOIP, (1, 0.1), (1, 0.1), 0.5)


def test_nonpositive_duration_rejected():
    with pytest.raises(ProfileError):
        generate(PROFILES["YouTube"], 0, 1, 0)


def test_profiles_file_roundtrip(tmp_path):
    p = tmp_path / "p.ini"
    save_profiles(PROFILES, p)
    assert load_profiles(p) == PROFILES


def test_missing_profiles_file(tmp_path):
    with pytest.raises(ProfileError):
        load_profiles(tmp_path / "nope.ini")


@given(st.integers(0, 2**40), st.integers(0, 1000), st.integers(0, 1000))
def test_derive_seed_is_injective_in_index(master, i, j):
    if i != j:
        assert derive_seed(master, i) != derive_seed(master, j)
    assert derive_seed(master, i) == derive_seed(master, i) >= 0


def test_cell_has_all_ues_and_matches_single_generation():
    assign = round_robin_cell(10)
    cell = generate_cell(assign, 60, seed=8)
    assert set(cell.rntis()) <= set(assign)
    rnti = sorted(assign)[3]
    solo = generate(assign[rnti], 60, rnti, derive_seed(8, 3))
    assert cell.filter_rnti(rnti).same_records(solo)
    assert [assign[0x4601 + i].name for i in range(9)][-1] == DEFAULT_APPS[0]


def test_netflix_300_s_burst_count():
    p = PROFILES["Netflix"]
    for seed in range(30):
        n = len(_bursts(generate(p, 300, 1, seed).t_ms))
        assert 300 // 60 - 1 <= n <= 300 // 50 + 1


def test_constant_voip_period():
    p = PROFILES["WhatsApp"].with_(voip_period_ms=(20, 20))
    t = generate(p, 1, 1, seed=0).t_ms
    assert len(t) == 50 and set(np.diff(t).tolist()) == {20}


@pytest.mark.parametrize("name", ["YouTube", "Disney+"])
def test_mean_burst_gap_in_range(name):
    p = PROFILES[name]
    bursts = _bursts(generate(p, 150 * p.burst_interval_s[1], 1, seed=3).t_ms)
    gaps = np.diff([b[0] for b in bursts]) / 1000
    assert len(gaps) >= 100
    lo, hi = p.burst_interval_s
    sd = (hi - lo) / np.sqrt(12) / np.sqrt(len(gaps))
    # first-instance offsets add at most one burst duration of noise
    assert abs(gaps.mean() - (lo + hi) / 2) < 3 * sd + p.burst_duration_ms[1] / 1000 / 10


@pytest.mark.parametrize("name", DEFAULT_APPS)
def test_ul_fraction(name):
    p = PROFILES[name]
    tr = generate(p, 150 if p.kind == TrafficKind.CONTINUOUS_VOIP else 3000, 1, seed=4)
    assert len(tr) >= 10_000
    assert abs((tr.direction == 1).mean() - p.ul_fraction) <= 0.05


def test_cell_ues_with_same_profile_differ():
    one = PROFILES["YouTube"]
    cell = generate_cell({1: one, 2: one}, 60, seed=0)
    a, b = cell.filter_rnti(1), cell.filter_rnti(2)
    assert len(a) and len(b) and not np.array_equal(a.t_ms, b.t_ms)
