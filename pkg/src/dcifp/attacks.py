"""Cell scanning, target tracking and RNTI acquisition by traffic signature.

The signature attack sends a known schedule of large downlink bursts to a
victim and then looks, right after each burst, for the RNTI whose resource
block allocation jumps above a threshold. Only the attacker-known burst
times are inspected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .capture import CaptureConfig, apply_capture
from .cnn import ModelBundle
from .features import BURST_GAP_MS, trace_windows
from .synth import MAX_RB
from .trace import Direction, Trace, TraceMeta, merge_traces

MIN_BURST_BYTES = 100 * 1024
SEGMENT_GAP_S = 30.0
PRESENCE_GAP_S = 180.0
# stride-1 windows overlap almost entirely, so a lone disagreeing label is
# noise; labels are smoothed by majority over this many neighbouring windows
SMOOTH_WINDOWS = 15


class SignatureError(ValueError):
    pass


@dataclass(frozen=True)
class SignatureSpec:
    """Burst schedule and detection thresholds.

    Thresholds are resource blocks per second, averaged over
    ``detect_window_s``: ``rb_per_s_ul`` for uplink grants (F0_0) and
    ``rb_per_s_dl`` for downlink assignments (F1_0). ``combine="any"``
    counts a burst as hit when either direction exceeds its threshold,
    ``"all"`` requires both.
    """

    n_bursts: int = 7
    intervals_s: tuple[float, ...] = (10, 10, 10, 10, 10, 20)
    burst_bytes: int = 150 * 1024
    detect_window_s: float = 2.0
    rb_per_s_ul: float = 5000.0
    rb_per_s_dl: float = 10000.0
    combine: str = "any"

    def __post_init__(self):
        if self.n_bursts < 1:
            raise SignatureError("n_bursts must be >= 1")
        if len(self.intervals_s) != self.n_bursts - 1:
            raise SignatureError(f"need {self.n_bursts - 1} intervals, got {len(self.intervals_s)}")
        if any(g <= 0 for g in self.intervals_s):
            raise SignatureError("intervals must be positive")
        if self.burst_bytes <= MIN_BURST_BYTES:
            raise SignatureError(f"burst_bytes must exceed {MIN_BURST_BYTES}")
        if self.detect_window_s <= 0 or self.rb_per_s_ul <= 0 or self.rb_per_s_dl <= 0:
            raise SignatureError("window and thresholds must be positive")
        if self.combine not in ("any", "all"):
            raise SignatureError("combine must be 'any' or 'all'")

    def offsets_ms(self) -> np.ndarray:
        """Burst start times relative to t0."""
        return np.concatenate([[0.0], np.cumsum(self.intervals_s) * 1000.0]).astype(np.int64)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in (
            ("n_bursts", self.n_bursts),
            ("intervals_s", ",".join(f"{g:g}" for g in self.intervals_s)),
            ("burst_bytes", self.burst_bytes),
            ("detect_window_s", f"{self.detect_window_s:g}"),
            ("rb_per_s_ul", f"{self.rb_per_s_ul:g}"),
            ("rb_per_s_dl", f"{self.rb_per_s_dl:g}"),
            ("combine", self.combine)))

    @classmethod
    def from_text(cls, text: str) -> "SignatureSpec":
        kv = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise SignatureError(f"line {lineno}: expected key=value")
            kv[key.strip()] = val.strip()
        conv = dict(n_bursts=int, burst_bytes=int, detect_window_s=float,
                    rb_per_s_ul=float, rb_per_s_dl=float, combine=str,
                    intervals_s=lambda v: tuple(float(x) for x in v.split(",") if x.strip()))
        unknown = set(kv) - set(conv)
        if unknown:
            raise SignatureError(f"unknown keys: {sorted(unknown)}")
        try:
            args = {k: conv[k](v) for k, v in kv.items()}
        except ValueError as e:
            raise SignatureError(str(e)) from e
        if "intervals_s" in args and "n_bursts" not in args:
            args["n_bursts"] = len(args["intervals_s"]) + 1
        return cls(**args)


def save_signature(spec: SignatureSpec, path) -> None:
    Path(path).write_text(spec.to_text(), encoding="utf-8")


def load_signature(path) -> SignatureSpec:
    return SignatureSpec.from_text(Path(path).read_text(encoding="utf-8"))


# -- injection ----------------------------------------------------------------

def inject_signature(cell_trace: Trace, target_rnti: int, spec: SignatureSpec, t0_ms: int,
                     seed: int, capture_estimate: float | None = None, *,
                     rb_per_record: int = 200, spread_ms: int = 1500,
                     margin: float = 1.5) -> Trace:
    """Add the target's DCIs for every signature burst to ``cell_trace``.

    Each burst is a cluster of downlink assignments of about
    ``rb_per_record`` RBs spread over ``spread_ms`` after the burst time,
    plus one small uplink grant per four downlink records for the
    acknowledgements. The downlink count gives ``margin`` times the
    threshold RB volume; with ``capture_estimate`` set the count and the
    payload are scaled by its inverse so that the captured share still
    clears the threshold.
    """
    if not 0 < rb_per_record <= MAX_RB:
        raise SignatureError(f"rb_per_record must be in [1, {MAX_RB}]")
    if spread_ms >= spec.detect_window_s * 1000:
        raise SignatureError("spread_ms must fit inside the detection window")
    if capture_estimate is not None and not 0 < capture_estimate <= 1:
        raise SignatureError("capture_estimate must be in (0, 1]")
    est = capture_estimate or 1.0
    rng = np.random.default_rng(seed)
    n_dl = math.ceil(margin * spec.rb_per_s_dl * spec.detect_window_s / est / rb_per_record)
    n_ul = max(1, n_dl // 4)
    payload_bits = spec.burst_bytes * 8 / est
    parts = []
    for off in spec.offsets_ms():
        start = t0_ms + int(off)
        t = np.sort(start + rng.integers(0, spread_ms, n_dl + n_ul))
        d = np.zeros(n_dl + n_ul, dtype=np.int8)
        d[rng.permutation(n_dl + n_ul)[:n_ul]] = int(Direction.UL)
        ul = d == int(Direction.UL)
        tbs = np.where(ul, 1000, np.maximum(1, np.rint(
            payload_bits / n_dl * rng.uniform(0.9, 1.1, len(d))))).astype(np.int64)
        rb = np.where(ul, 4, np.clip(np.rint(rb_per_record * rng.uniform(0.8, 1.2, len(d))),
                                     1, MAX_RB)).astype(np.int64)
        parts.append(Trace(t, np.full(len(t), target_rnti), d, tbs, rb))
    sig = merge_traces(parts)
    sig.meta = TraceMeta(label=cell_trace.meta.label)
    out = merge_traces([cell_trace, sig])
    out.meta = cell_trace.meta.copy(extra={**cell_trace.meta.extra,
                                           "signature_rnti": f"{target_rnti:04X}",
                                           "signature_t0_ms": str(t0_ms)})
    return out


# -- detection ----------------------------------------------------------------

@dataclass
class HuntResult:
    """Signature matches per RNTI.

    ``per_burst[k]`` is the set of RNTIs that hit burst ``k``;
    ``candidates`` maps each RNTI with at least one hit to its hit count.
    """

    n_bursts: int
    per_burst: list[set[int]]
    candidates: dict[int, int]
    unique_target: int | None

    @property
    def full_matches(self) -> list[int]:
        return sorted(r for r, c in self.candidates.items() if c == self.n_bursts)

    def ranked(self) -> list[tuple[int, int]]:
        return sorted(self.candidates.items(), key=lambda kv: (-kv[1], kv[0]))

    def to_text(self) -> str:
        lines = [f"n_bursts={self.n_bursts}",
                 "unique_target=" + (f"{self.unique_target:04X}" if self.unique_target is not None
                                     else ""),
                 "full_matches=" + ";".join(f"{r:04X}" for r in self.full_matches)]
        for k, hits in enumerate(self.per_burst):
            lines.append(f"burst.{k}=" + ";".join(f"{r:04X}" for r in sorted(hits)))
        for r, c in self.ranked():
            lines.append(f"candidate.{r:04X}={c}")
        return "\n".join(lines) + "\n"


def burst_rates(captured: Trace, start_ms: int, window_s: float) -> tuple[np.ndarray, ...]:
    """RNTIs active in ``[start_ms, start_ms + window_s)`` and their DL and UL
    RB-per-second rates."""
    t = captured.t_ms
    lo, hi = np.searchsorted(t, [start_ms, start_ms + window_s * 1000.0], side="left")
    r = captured.rnti[lo:hi]
    rb = captured.rb_count[lo:hi].astype(np.float64)
    ul = captured.direction[lo:hi] == int(Direction.UL)
    rntis, inv = np.unique(r, return_inverse=True)
    dl_rate = np.bincount(inv, weights=np.where(ul, 0.0, rb), minlength=len(rntis)) / window_s
    ul_rate = np.bincount(inv, weights=np.where(ul, rb, 0.0), minlength=len(rntis)) / window_s
    return rntis, dl_rate, ul_rate


def detect_target(captured: Trace, spec: SignatureSpec, t0_ms: int) -> HuntResult:
    """Check each burst's detection window for RNTIs above threshold."""
    per_burst = []
    counts: dict[int, int] = {}
    for off in spec.offsets_ms():
        rntis, dl, ul = burst_rates(captured, t0_ms + int(off), spec.detect_window_s)
        dl_hit, ul_hit = dl > spec.rb_per_s_dl, ul > spec.rb_per_s_ul
        hit = (dl_hit | ul_hit) if spec.combine == "any" else (dl_hit & ul_hit)
        hits = {int(r) for r in rntis[hit]}
        per_burst.append(hits)
        for r in hits:
            counts[r] = counts.get(r, 0) + 1
    full = [r for r, c in counts.items() if c == spec.n_bursts]
    return HuntResult(spec.n_bursts, per_burst, counts, full[0] if len(full) == 1 else None)


# -- scanning -----------------------------------------------------------------

class Segment(NamedTuple):
    t_start_ms: int
    t_end_ms: int
    label: str
    confidence: float  # mean over the merged windows
    n_windows: int

    @property
    def duration_s(self) -> float:
        return (self.t_end_ms - self.t_start_ms) / 1000.0


@dataclass
class ScanReport:
    """Per-RNTI app timeline and activity over a captured trace.

    ``active_seconds[r]`` lists the whole seconds in which RNTI ``r`` had at
    least one DCI; ``presence[r]`` holds (first, last) DCI times of each
    contiguous activity span.
    """

    timelines: dict[int, list[Segment]] = field(default_factory=dict)
    active_seconds: dict[int, np.ndarray] = field(default_factory=dict)
    first_seen: dict[int, int] = field(default_factory=dict)
    last_seen: dict[int, int] = field(default_factory=dict)
    presence: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    W: int | None = None
    not_seen: list[int] = field(default_factory=list)

    @property
    def rntis(self) -> list[int]:
        return sorted(self.first_seen)

    def activity(self) -> tuple[np.ndarray, np.ndarray]:
        """(second, number of RNTIs with any DCI in that second)."""
        if not self.active_seconds:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        secs = np.concatenate(list(self.active_seconds.values()))
        s0 = int(secs.min())
        counts = np.bincount(secs - s0)
        return np.arange(s0, s0 + len(counts)), counts

    def restrict(self, rnti: int) -> "ScanReport":
        if rnti not in self.first_seen:
            return ScanReport(W=self.W, not_seen=[rnti])
        pick = lambda d: {rnti: d[rnti]} if rnti in d else {}
        return ScanReport(pick(self.timelines), pick(self.active_seconds),
                          pick(self.first_seen), pick(self.last_seen), pick(self.presence),
                          self.W)

    def label_seconds(self, rnti: int) -> dict[str, float]:
        """Timeline seconds per label for one RNTI."""
        out: dict[str, float] = {}
        for s in self.timelines.get(rnti, []):
            out[s.label] = out.get(s.label, 0.0) + s.duration_s
        return out

    def to_text(self) -> str:
        lines = [f"W={self.W if self.W is not None else ''}"]
        for r in self.not_seen:
            lines.append(f"rnti.{r:04X}.status=not seen")
        for r in self.rntis:
            lines.append(f"rnti.{r:04X}.first_seen_ms={self.first_seen[r]}")
            lines.append(f"rnti.{r:04X}.last_seen_ms={self.last_seen[r]}")
            for a, b in self.presence.get(r, []):
                lines.append(f"rnti.{r:04X}.presence={a},{b}")
            for s in self.timelines.get(r, []):
                lines.append(f"rnti.{r:04X}.segment={s.t_start_ms},{s.t_end_ms},{s.label},"
                             f"{s.confidence:.4f},{s.n_windows}")
        secs, counts = self.activity()
        lines.append("activity=" + ";".join(f"{s}:{c}" for s, c in zip(secs, counts)))
        return "\n".join(lines) + "\n"


def _segments(t_start, t_end, labels, conf, min_confidence, gap_ms) -> list[Segment]:
    out: list[Segment] = []
    cur = None  # [start, end, label, conf_sum, n]
    for ts, te, lab, c in zip(t_start, t_end, labels, conf):
        if c < min_confidence:
            continue
        ts, te = int(ts), int(te)
        if cur is not None and lab == cur[2] and ts - cur[1] <= gap_ms:
            cur[1] = max(cur[1], te)
            cur[3] += c
            cur[4] += 1
            continue
        if cur is not None:
            out.append(Segment(cur[0], cur[1], cur[2], cur[3] / cur[4], cur[4]))
            ts = max(ts, cur[1])
        cur = [ts, max(te, ts), lab, c, 1]
    if cur is not None:
        out.append(Segment(cur[0], cur[1], cur[2], cur[3] / cur[4], cur[4]))
    return out


def _majority(labels: list[str], span: int) -> list[str]:
    """Majority label over a centred run of ``span`` entries (shorter at the
    ends). A label tied for the most votes keeps its own value."""
    if span <= 1 or len(labels) < 2:
        return list(labels)
    names, codes = np.unique(np.asarray(labels, dtype=object), return_inverse=True)
    n, r = len(codes), span // 2
    onehot = np.zeros((n + 1, len(names)), dtype=np.int64)
    onehot[np.arange(n) + 1, codes] = 1
    csum = onehot.cumsum(axis=0)
    idx = np.arange(n)
    votes = csum[np.minimum(idx + r + 1, n)] - csum[np.maximum(idx - r, 0)]
    best = votes.argmax(axis=1)
    own = votes[idx, codes] == votes[idx, best]
    return [str(names[c if keep else b]) for c, b, keep in zip(codes, best, own)]


def _presence(t_ms: np.ndarray, gap_ms: float) -> list[tuple[int, int]]:
    cut = np.flatnonzero(np.diff(t_ms) > gap_ms)
    starts = np.concatenate([[0], cut + 1])
    ends = np.concatenate([cut, [len(t_ms) - 1]])
    return [(int(t_ms[a]), int(t_ms[b])) for a, b in zip(starts, ends)]


def cell_scan(captured: Trace, bundle: ModelBundle, W: int | None = None,
              min_confidence: float = 0.5, *, segment_gap_s: float = SEGMENT_GAP_S,
              presence_gap_s: float = PRESENCE_GAP_S,
              burst_gap_ms: float = BURST_GAP_MS,
              smooth_windows: int = SMOOTH_WINDOWS) -> ScanReport:
    """Classify every RNTI's traffic over time.

    Windows of ``W`` instances are taken at stride 1 per RNTI, with the same
    single-burst exclusion used for training, and classified. Windows with
    confidence below ``min_confidence`` are dropped and the remaining labels
    are smoothed by a majority vote over ``smooth_windows`` neighbours (1
    disables it). Consecutive windows with the same label then merge into a
    segment; a new segment starts when the label changes or more than
    ``segment_gap_s`` passes without a kept window. Segments of one RNTI
    never overlap: a segment starts no earlier than the previous one ends.
    """
    if W is not None and W != bundle.W:
        raise ValueError(f"model window {bundle.W} does not match requested W={W}")
    if smooth_windows < 1:
        raise ValueError("smooth_windows must be >= 1")
    rep = ScanReport(W=bundle.W)
    for r in captured.rntis():
        sub = captured.filter_rnti(r)
        t = sub.t_ms
        rep.first_seen[r] = int(t[0])
        rep.last_seen[r] = int(t[-1])
        rep.active_seconds[r] = np.unique(t // 1000)
        rep.presence[r] = _presence(t, presence_gap_s * 1000)
        wins = trace_windows(sub, bundle.W, stride=1, burst_gap_ms=burst_gap_ms,
                             scaling=bundle.scaling)
        if not wins:
            rep.timelines[r] = []
            continue
        labels, conf = bundle.predict_batch(np.stack([w.rows for w in wins]))
        keep = [i for i, c in enumerate(conf) if c >= min_confidence]
        rep.timelines[r] = _segments([wins[i].t_start_ms for i in keep],
                                     [wins[i].t_end_ms for i in keep],
                                     _majority([labels[i] for i in keep], smooth_windows),
                                     conf[keep], min_confidence, segment_gap_s * 1000)
    return rep


def track_target(captured: Trace, rnti: int, bundle: ModelBundle, W: int | None = None,
                 min_confidence: float = 0.5, **kw) -> ScanReport:
    """:func:`cell_scan` restricted to one RNTI; absent RNTIs are reported
    in ``not_seen``."""
    sub = captured.filter_rnti(rnti)
    if len(sub) == 0:
        if W is not None and W != bundle.W:
            raise ValueError(f"model window {bundle.W} does not match requested W={W}")
        return ScanReport(W=bundle.W, not_seen=[rnti])
    return cell_scan(sub, bundle, W, min_confidence, **kw)


def hunt_trial(background: Trace, spec: SignatureSpec, target_rnti: int | None, t0_ms: int,
               capture_prob: float, seed: int) -> HuntResult:
    """One signature-hunt run: optional injection, capture, detection."""
    cell = background
    if target_rnti is not None:
        cell = inject_signature(background, target_rnti, spec, t0_ms, seed,
                                capture_estimate=capture_prob)
    cap = apply_capture(cell, CaptureConfig(capture_prob, seed=seed + 1))
    return detect_target(cap, spec, t0_ms)
