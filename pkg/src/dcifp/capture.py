"""Lossy over-the-air capture of a ground-truth DCI trace."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import Trace


@dataclass(frozen=True)
class CaptureConfig:
    """Sniffer loss model.

    With ``burst_loss`` unset every record survives independently with
    probability ``capture_prob``. Setting it to ``(p_good_to_bad,
    p_bad_to_good)`` switches to a two-state Markov chain evaluated per
    record: records are captured with ``capture_prob`` in the good state and
    never in the bad state.
    """

    capture_prob: float
    seed: int = 0
    jitter_ms: int = 0
    burst_loss: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0.0 < self.capture_prob <= 1.0:
            raise ValueError("capture_prob must be in (0, 1]")
        if self.jitter_ms < 0:
            raise ValueError("jitter_ms must be >= 0")
        if self.burst_loss is not None:
            g2b, b2g = self.burst_loss
            if not (0.0 <= g2b <= 1.0 and 0.0 < b2g <= 1.0):
                raise ValueError("burst_loss transition probabilities out of range")


def _markov_keep(rng, n, cfg: CaptureConfig) -> np.ndarray:
    g2b, b2g = cfg.burst_loss
    u = rng.random(n)
    bad = np.empty(n, dtype=bool)
    # start in the stationary distribution
    state = rng.random() < g2b / (g2b + b2g) if g2b > 0 else False
    for i in range(n):
        bad[i] = state
        state = (u[i] >= b2g) if state else (u[i] < g2b)
    return ~bad & (rng.random(n) < cfg.capture_prob)


def apply_capture(trace: Trace, cfg: CaptureConfig) -> Trace:
    rng = np.random.default_rng(cfg.seed)
    n = len(trace)
    if cfg.burst_loss is None:
        keep = rng.random(n) < cfg.capture_prob
    else:
        keep = _markov_keep(rng, n, cfg)
    meta = trace.meta.copy(capture_ratio=cfg.capture_prob)
    if cfg.jitter_ms == 0:
        return trace.take(keep, meta)
    cols = [c[keep] for c in trace.columns()]
    t = cols[0] + rng.integers(-cfg.jitter_ms, cfg.jitter_ms + 1, len(cols[0]))
    cols[0] = np.maximum(t, 0)
    out = Trace.sorted_from_columns(*cols, meta=meta)
    out.resorted = False
    return out


def estimate_capture_ratio(generated: Trace, captured: Trace) -> float:
    if len(generated) == 0:
        raise ValueError("generated trace is empty")
    return len(captured) / len(generated)
