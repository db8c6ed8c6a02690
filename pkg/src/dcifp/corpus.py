"""Labelled, captured synthetic traces in the quantities experiments need.

Each app's corpus is a list of independent chunks. Every chunk is one
``generate`` call with its own derived seed followed by capture, so windows
never straddle chunks and (label, seed) identifies a chunk's provenance.
"""
from __future__ import annotations

import logging
from typing import Mapping, Sequence

from .capture import CaptureConfig, apply_capture
from .features import build_dataset
from .synth import AppProfile, TrafficKind, derive_seed, generate
from .trace import Trace

log = logging.getLogger(__name__)

DEFAULT_RNTI = 0x4601
MAX_CHUNKS = 200


def instance_rate(profile: AppProfile) -> float:
    """Expected generated DCI instances per second."""
    if profile.kind == TrafficKind.CONTINUOUS_VOIP:
        return 2000.0 / sum(profile.voip_period_ms)
    return sum(profile.instances_per_burst) / sum(profile.burst_interval_s)


def captured_chunk(profile: AppProfile, duration_s: float, capture_prob: float,
                   seed: int, rnti: int = DEFAULT_RNTI) -> Trace:
    gen = generate(profile, duration_s, rnti, seed)
    return apply_capture(gen, CaptureConfig(capture_prob, seed=derive_seed(seed, 1)))


def app_corpus(profile: AppProfile, capture_prob: float, need: Mapping[int, int],
               seed: int, chunk_s: float | None = None) -> list[Trace]:
    """Captured chunks of ``profile`` until every ``W`` in ``need`` yields at
    least ``need[W]`` disjoint, burst-filtered windows."""
    if chunk_s is None:
        # about four chunks for the most demanding window size
        rows = max(W * n for W, n in need.items())
        chunk_s = max(600.0, rows / (instance_rate(profile) * capture_prob) / 4)
    chunks: list[Trace] = []
    have = {W: 0 for W in need}
    while any(have[W] < n for W, n in need.items()):
        if len(chunks) >= MAX_CHUNKS:
            raise RuntimeError(f"{profile.name}: window quota not met after {MAX_CHUNKS} chunks")
        ch = captured_chunk(profile, chunk_s, capture_prob, derive_seed(seed, len(chunks)))
        chunks.append(ch)
        for W in need:
            have[W] += len(build_dataset([ch], W))
    log.info("%s: %d chunks of %.0f s, windows %s", profile.name, len(chunks), chunk_s, have)
    return chunks


def corpus(profiles: Mapping[str, AppProfile], capture_prob: float,
           need: Mapping[int, int], seed: int) -> list[Trace]:
    """Chunks for every profile; app ``i`` (in mapping order) uses
    ``derive_seed(seed, i)`` as its master seed."""
    out: list[Trace] = []
    for i, p in enumerate(profiles.values()):
        out.extend(app_corpus(p, capture_prob, need, derive_seed(seed, i)))
    return out


def row_budget_need(windows: Sequence[int], row_budget: int) -> dict[int, int]:
    """Per-class window quota ``row_budget // W`` for each window size."""
    return {W: row_budget // W for W in windows}
