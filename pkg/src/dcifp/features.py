"""Per-instance features and DCI-instance windows.

Each captured DCI becomes one feature row ``(direction, tbs_kb, dt_s)``:
direction 0 for DL and 1 for UL, the transport block size in kilobits, and
the time since the previous captured DCI of the same RNTI in seconds (0 for
the first). A classification sample is a run of ``W`` consecutive rows,
however long it took to collect them.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .trace import DciRecord, Trace

N_FEATURES = 3
BURST_GAP_MS = 1000


@dataclass(frozen=True)
class FeatureScaling:
    """Fixed unit conventions applied to raw DCI fields (not fitted to data)."""

    tbs_unit_bits: float = 1000.0
    dt_unit_ms: float = 1000.0
    dl_code: float = 0.0
    ul_code: float = 1.0

    def as_dict(self) -> dict:
        return dict(tbs_unit_bits=self.tbs_unit_bits, dt_unit_ms=self.dt_unit_ms,
                    dl_code=self.dl_code, ul_code=self.ul_code)


class FeatureRow(NamedTuple):
    direction_code: float
    tbs_scaled: float
    dt_s: float


@dataclass
class WindowSample:
    rows: np.ndarray  # (W, 3) float64
    label: str | None
    rnti: int
    t_start_ms: int
    t_end_ms: int

    @property
    def W(self) -> int:
        return self.rows.shape[0]

    def feature_rows(self) -> list[FeatureRow]:
        return [FeatureRow(*map(float, r)) for r in self.rows]


def extract_features(records: Trace | Sequence[DciRecord],
                     scaling: FeatureScaling = FeatureScaling()) -> np.ndarray:
    """Feature matrix of shape ``(n, 3)`` in arrival order.

    Takes a single-RNTI trace (or record list); dt is measured between
    consecutive rows as given.
    """
    if isinstance(records, Trace):
        t, d, tbs = records.t_ms, records.direction, records.tbs_bits
    else:
        t = np.array([r.t_ms for r in records], dtype=np.int64)
        d = np.array([int(r.direction) for r in records], dtype=np.int8)
        tbs = np.array([r.tbs_bits for r in records], dtype=np.int64)
    if len(t) and (np.diff(t) < 0).any():
        raise ValueError("records must be sorted by t_ms")
    out = np.empty((len(t), N_FEATURES), dtype=np.float64)
    out[:, 0] = np.where(d == 1, scaling.ul_code, scaling.dl_code)
    out[:, 1] = tbs / scaling.tbs_unit_bits
    if len(t):
        out[0, 2] = 0.0
        out[1:, 2] = np.diff(t) / scaling.dt_unit_ms
    return out


def in_single_burst(t_ms: np.ndarray, burst_gap_ms: float = BURST_GAP_MS,
                    burst_span_ms: float | None = BURST_GAP_MS) -> bool:
    """True when the instances at ``t_ms`` all fall inside one burst.

    A burst is a run of instances with every gap below ``burst_gap_ms`` that
    also spans less than ``burst_span_ms``. ``burst_span_ms=None`` drops the
    span condition.
    """
    t_ms = np.asarray(t_ms)
    gaps = np.diff(t_ms)
    if (gaps >= burst_gap_ms).any():
        return False
    return burst_span_ms is None or (t_ms[-1] - t_ms[0]) < burst_span_ms


def _window_index(t_ms: np.ndarray, W: int, stride: int, burst_gap_ms, burst_span_ms,
                  exclude_bursts: bool) -> np.ndarray:
    n = len(t_ms)
    if n < W:
        return np.empty(0, dtype=np.intp)
    starts = np.arange(0, n - W + 1, stride)
    if not exclude_bursts:
        return starts
    span = t_ms[starts + W - 1] - t_ms[starts]
    if W > 1:
        max_gap = sliding_window_view(np.diff(t_ms), W - 1).max(axis=-1)[starts]
    else:
        max_gap = np.zeros(len(starts), dtype=np.int64)
    burst = max_gap < burst_gap_ms
    if burst_span_ms is not None:
        burst &= span < burst_span_ms
    return starts[~burst]


def build_windows(rows: np.ndarray, W: int, stride: int | None = None,
                  burst_gap_ms: float = BURST_GAP_MS, *, t_ms=None,
                  label: str | None = None, rnti: int = 0,
                  burst_span_ms: float | None = BURST_GAP_MS,
                  exclude_bursts: bool = True) -> list[WindowSample]:
    """Slice feature rows into windows of ``W`` rows every ``stride`` rows.

    Windows lying entirely inside one burst (see :func:`in_single_burst`)
    are dropped. ``t_ms`` gives each row's timestamp; without it relative
    times are rebuilt from the dt column.
    """
    if W < 1:
        raise ValueError("W must be >= 1")
    stride = W if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rows = np.asarray(rows, dtype=np.float64)
    if t_ms is None:
        t_ms = np.rint(np.cumsum(rows[:, 2]) * 1000.0).astype(np.int64)
    t_ms = np.asarray(t_ms, dtype=np.int64)
    starts = _window_index(t_ms, W, stride, burst_gap_ms, burst_span_ms, exclude_bursts)
    return [WindowSample(rows[s:s + W], label, rnti, int(t_ms[s]), int(t_ms[s + W - 1]))
            for s in starts]


def trace_windows(trace: Trace, W: int, stride: int | None = None,
                  burst_gap_ms: float = BURST_GAP_MS,
                  scaling: FeatureScaling = FeatureScaling(),
                  burst_span_ms: float | None = BURST_GAP_MS,
                  exclude_bursts: bool = True) -> list[WindowSample]:
    """Windows for every RNTI in ``trace``, labelled with the trace label."""
    out = []
    for rnti in trace.rntis():
        sub = trace.filter_rnti(rnti)
        out.extend(build_windows(extract_features(sub, scaling), W, stride, burst_gap_ms,
                                 t_ms=sub.t_ms, label=trace.meta.label, rnti=rnti,
                                 burst_span_ms=burst_span_ms, exclude_bursts=exclude_bursts))
    return out


def build_dataset(traces: Iterable[Trace], W: int, stride: int | None = None,
                  burst_gap_ms: float = BURST_GAP_MS,
                  scaling: FeatureScaling = FeatureScaling(),
                  burst_span_ms: float | None = BURST_GAP_MS) -> list[WindowSample]:
    samples = []
    for tr in traces:
        samples.extend(trace_windows(tr, W, stride, burst_gap_ms, scaling, burst_span_ms))
    return samples


def time_to_fill(trace: Trace, W: int) -> list[float]:
    """Seconds needed to collect each disjoint window of ``W`` instances.

    This is the classification latency: a decision is made the moment the
    W-th instance arrives, whatever the burst filter later does with the
    window, so no windows are excluded here.
    """
    out: list[float] = []
    for rnti in trace.rntis():
        t = trace.filter_rnti(rnti).t_ms
        starts = _window_index(t, W, W, BURST_GAP_MS, None, exclude_bursts=False)
        out.extend(((t[starts + W - 1] - t[starts]) / 1000.0).tolist())
    return out


def stack(samples: Sequence[WindowSample]) -> np.ndarray:
    if not samples:
        raise ValueError("no samples")
    Ws = {s.W for s in samples}
    if len(Ws) != 1:
        raise ValueError(f"samples have inconsistent window sizes {sorted(Ws)}")
    return np.stack([s.rows for s in samples])


class WindowStream:
    """Online stride-1 windowing with one ring buffer per RNTI."""

    def __init__(self, W: int, burst_gap_ms: float = BURST_GAP_MS,
                 scaling: FeatureScaling = FeatureScaling(),
                 burst_span_ms: float | None = BURST_GAP_MS):
        self.W = W
        self.burst_gap_ms = burst_gap_ms
        self.burst_span_ms = burst_span_ms
        self.scaling = scaling
        self._buf: dict[int, deque] = {}
        self._last_t: dict[int, int] = {}

    def push(self, rec: DciRecord) -> WindowSample | None:
        s = self.scaling
        prev = self._last_t.get(rec.rnti)
        if prev is not None and rec.t_ms < prev:
            raise ValueError("records for an RNTI must arrive in time order")
        dt = 0.0 if prev is None else (rec.t_ms - prev) / s.dt_unit_ms
        self._last_t[rec.rnti] = rec.t_ms
        row = (s.ul_code if int(rec.direction) == 1 else s.dl_code,
               rec.tbs_bits / s.tbs_unit_bits, dt)
        buf = self._buf.setdefault(rec.rnti, deque(maxlen=self.W))
        buf.append((rec.t_ms, row))
        if len(buf) < self.W:
            return None
        t = np.array([b[0] for b in buf], dtype=np.int64)
        if in_single_burst(t, self.burst_gap_ms, self.burst_span_ms):
            return None
        return WindowSample(np.array([b[1] for b in buf], dtype=np.float64), None,
                            rec.rnti, int(t[0]), int(t[-1]))

    def feed(self, trace: Trace) -> Iterator[WindowSample]:
        for rec in trace:
            w = self.push(rec)
            if w is not None:
                yield w


# -- dataset files ----------------------------------------------------------

def write_dataset(samples: Sequence[WindowSample], path, meta: dict | None = None) -> None:
    """Write samples: a ``label,rnti,t_start_ms,t_end_ms`` line then W rows each."""
    lines = []
    if samples:
        lines.append(f"# window={samples[0].W}")
    for k, v in sorted((meta or {}).items()):
        lines.append(f"# {k}={v}")
    for s in samples:
        lines.append(f"{s.label or ''},{s.rnti:04X},{s.t_start_ms},{s.t_end_ms}")
        for d, tbs, dt in s.rows.tolist():
            lines.append(f"{d!r},{tbs!r},{dt!r}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_dataset(path) -> list[WindowSample]:
    samples: list[WindowSample] = []
    header = None
    rows: list[list[float]] = []
    W = None

    def flush(lineno):
        if header is None:
            return
        if W is not None and len(rows) != W:
            raise ValueError(f"line {lineno}: sample has {len(rows)} rows, expected {W}")
        samples.append(WindowSample(np.array(rows, dtype=np.float64).reshape(-1, N_FEATURES),
                                    *header))

    with open(path, encoding="utf-8") as fh:
        lineno = 0
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key.strip() == "window":
                    W = int(val)
                continue
            parts = line.split(",")
            try:
                if len(parts) == 4:
                    flush(lineno)
                    header = (parts[0] or None, int(parts[1], 16), int(parts[2]), int(parts[3]))
                    rows = []
                elif len(parts) == 3:
                    if header is None:
                        raise ValueError("feature row before sample header")
                    rows.append([float(p) for p in parts])
                else:
                    raise ValueError(f"unexpected field count {len(parts)}")
            except ValueError as e:
                raise ValueError(f"line {lineno}: {e}") from e
        flush(lineno)
    return samples
