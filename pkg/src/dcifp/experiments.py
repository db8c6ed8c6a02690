"""End-to-end experiment recipes on synthetic data.

Each function builds its own corpus from a master seed, so results are
reproducible and train/test traces never share a generator seed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .attacks import SignatureSpec, hunt_trial
from .cnn import ModelBundle, TrainConfig, train
from .corpus import captured_chunk, corpus, instance_rate
from .features import build_dataset
from .metrics import (EvalReport, LatencyStats, cap_per_class, classification_latency,
                      evaluate, window_sweep)
from .synth import AppProfile, builtin_profiles, derive_seed, generate_cell, round_robin_cell

log = logging.getLogger(__name__)

SWEEP_WINDOWS = tuple(range(20, 161, 20))
# single precision and fewer epochs keep an eight-model sweep inside half an hour
SWEEP_TRAIN = TrainConfig(epochs=15, dtype="float32")
TESTBED_APPS = ("YouTube", "Netflix", "YTMusic", "WhatsApp")


def sample_quota(W: int, at_100: int = 1000) -> int:
    """Windows per class: ``at_100`` up to W=100, proportionally fewer above."""
    return at_100 if W <= 100 else at_100 * 100 // W


@dataclass
class SweepOutcome:
    results: list[tuple[int, EvalReport]]
    models: dict[int, ModelBundle]


def sweep_experiment(windows: Sequence[int] = SWEEP_WINDOWS, capture_prob: float = 0.05,
                     at_100: int = 1000, test_per_class: int = 300,
                     cfg: TrainConfig = SWEEP_TRAIN, seed: int = 1,
                     profiles: dict[str, AppProfile] | None = None,
                     progress=None) -> SweepOutcome:
    """Window-size sweep over the eight built-in apps."""
    profiles = profiles or builtin_profiles()
    train_need = {W: sample_quota(W, at_100) for W in windows}
    test_need = {W: test_per_class for W in windows}
    tr = corpus(profiles, capture_prob, train_need, derive_seed(seed, 0))
    te = corpus(profiles, capture_prob, test_need, derive_seed(seed, 1))
    models: dict[int, ModelBundle] = {}
    res = window_sweep(tr, te, windows, cfg, train_cap=train_need, test_cap=test_need,
                       models=models, progress=progress)
    return SweepOutcome(res, models)


def held_out_eval(bundle: ModelBundle, capture_prob: float, per_class: int = 300,
                  seed: int = 3, profiles: dict[str, AppProfile] | None = None) -> EvalReport:
    """Evaluate ``bundle`` on freshly generated traces of its classes."""
    profiles = profiles or builtin_profiles()
    sel = {c: profiles[c] for c in bundle.class_order}
    te = corpus(sel, capture_prob, {bundle.W: per_class}, seed)
    return evaluate(bundle, build_dataset(te, bundle.W))


def testbed_experiment(apps: Sequence[str] = TESTBED_APPS, capture_prob: float = 0.10,
                       W: int = 100, per_class: int = 1000, cfg: TrainConfig = TrainConfig(),
                       seed: int = 5) -> ModelBundle:
    """Four-app run at 10% capture; the bundle's ``train_meta`` holds the
    validation accuracy of the 9:1 split."""
    profiles = builtin_profiles()
    sel = {a: profiles[a] for a in apps}
    ds = build_dataset(corpus(sel, capture_prob, {W: per_class}, seed), W)
    ds = cap_per_class(ds, per_class, np.random.default_rng(seed))
    return train(ds, replace(cfg, class_order=tuple(apps)))


def latency_experiment(W: int = 40, capture_prob: float = 0.05, n_trials: int = 100,
                       seed: int = 7, profiles: dict[str, AppProfile] | None = None
                       ) -> dict[str, LatencyStats]:
    """Mean time to collect ``W`` captured instances for each app."""
    profiles = profiles or builtin_profiles()
    out = {}
    for i, (name, p) in enumerate(profiles.items()):
        # enough simulated time for n_trials windows plus slack
        dur = 1.5 * n_trials * W / (instance_rate(p) * capture_prob)
        tr = captured_chunk(p, dur, capture_prob, derive_seed(seed, i))
        out[name] = classification_latency(tr, W, n_trials)
    return out


@dataclass
class HuntOutcome:
    successes: int
    false_positive_trials: int
    n_trials: int
    results: list


def hunt_experiment(n_trials: int = 20, n_ues: int = 64, capture_prob: float = 0.10,
                    spec: SignatureSpec = SignatureSpec(), target_rnti: int = 0x4ABC,
                    t0_ms: int = 20_000, seed: int = 11) -> HuntOutcome:
    """Planted-target and no-injection hunts over ``n_trials`` seeded cells."""
    duration_s = (t0_ms + spec.offsets_ms()[-1]) / 1000 + spec.detect_window_s + 10
    ok = fp = 0
    results = []
    for i in range(n_trials):
        bg = generate_cell(round_robin_cell(n_ues), duration_s, derive_seed(seed, i))
        hit = hunt_trial(bg, spec, target_rnti, t0_ms, capture_prob, derive_seed(seed + 1, i))
        miss = hunt_trial(bg, spec, None, t0_ms, capture_prob, derive_seed(seed + 2, i))
        ok += hit.unique_target == target_rnti
        fp += bool(miss.full_matches)
        results.append((hit, miss))
    return HuntOutcome(ok, fp, n_trials, results)
