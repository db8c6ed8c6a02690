"""DCI records, traces and the line-delimited trace file format.

A trace file is UTF-8 text with one record per line::

    # label=Netflix
    # capture_ratio=0.05
    # seed=7
    1000,4ABC,DL,81928,24,F1_0

Fields are ``t_ms,rnti_hex,direction,tbs_bits,rb_count,dci_format``. Lines
starting with ``#`` carry ``key=value`` metadata.

Traces are stored column-wise in numpy arrays; :class:`DciRecord` is the
per-record view.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class TraceError(ValueError):
    """Raised for malformed or inconsistent trace data."""


class TraceParseError(TraceError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class UnsortedTraceWarning(UserWarning):
    pass


class Direction(enum.IntEnum):
    DL = 0
    UL = 1


class DciFormat(str, enum.Enum):
    F0_0 = "F0_0"  # uplink grant
    F1_0 = "F1_0"  # downlink assignment

    @classmethod
    def for_direction(cls, direction: Direction) -> "DciFormat":
        return cls.F0_0 if direction == Direction.UL else cls.F1_0


DEFAULT_APPS = (
    "YouTube",
    "Netflix",
    "Disney+",
    "PrimeVideo",
    "YTMusic",
    "Spotify",
    "WhatsApp",
    "Telegram",
)


@dataclass(frozen=True)
class DciRecord:
    t_ms: int
    rnti: int
    direction: Direction
    tbs_bits: int
    rb_count: int
    dci_format: DciFormat

    def __post_init__(self):
        if self.t_ms < 0:
            raise TraceError(f"negative timestamp {self.t_ms}")
        if not 0 <= self.rnti <= 0xFFFF:
            raise TraceError(f"rnti {self.rnti:#x} out of 16-bit range")
        if self.tbs_bits <= 0 or self.rb_count <= 0:
            raise TraceError("tbs_bits and rb_count must be positive")
        if DciFormat.for_direction(self.direction) != self.dci_format:
            raise TraceError(
                f"direction {self.direction.name} inconsistent with format {self.dci_format.value}"
            )

    def to_line(self) -> str:
        return (
            f"{self.t_ms},{self.rnti:04X},{self.direction.name},"
            f"{self.tbs_bits},{self.rb_count},{self.dci_format.value}"
        )


@dataclass
class TraceMeta:
    label: str | None = None
    capture_ratio: float | None = None
    seed: int | None = None
    extra: dict[str, str] = field(default_factory=dict)

    def copy(self, **changes) -> "TraceMeta":
        d = dict(label=self.label, capture_ratio=self.capture_ratio,
                 seed=self.seed, extra=dict(self.extra))
        d.update(changes)
        return TraceMeta(**d)


_COLUMNS = ("t_ms", "rnti", "direction", "tbs_bits", "rb_count")
_DTYPES = {"t_ms": np.int64, "rnti": np.int64, "direction": np.int8,
           "tbs_bits": np.int64, "rb_count": np.int64}


class Trace:
    """Time-ordered DCI records held as parallel numpy columns.

    ``direction`` is 0 for DL and 1 for UL; the DCI format is implied by it.
    Construction validates every invariant, so a ``Trace`` in hand is always
    well formed. Arrays are made read-only.
    """

    def __init__(self, t_ms, rnti, direction, tbs_bits, rb_count,
                 meta: TraceMeta | None = None, *, resorted: bool = False):
        cols = {}
        for name, arr in zip(_COLUMNS, (t_ms, rnti, direction, tbs_bits, rb_count)):
            a = np.array(arr, dtype=_DTYPES[name]).reshape(-1)
            a.flags.writeable = False
            cols[name] = a
        n = len(cols["t_ms"])
        if any(len(a) != n for a in cols.values()):
            raise TraceError("column length mismatch")
        self.t_ms = cols["t_ms"]
        self.rnti = cols["rnti"]
        self.direction = cols["direction"]
        self.tbs_bits = cols["tbs_bits"]
        self.rb_count = cols["rb_count"]
        self.meta = meta if meta is not None else TraceMeta()
        self.resorted = resorted
        self._validate()

    def _validate(self):
        if len(self) == 0:
            return
        if (self.t_ms < 0).any():
            raise TraceError("negative timestamp")
        if ((self.rnti < 0) | (self.rnti > 0xFFFF)).any():
            raise TraceError("rnti out of 16-bit range")
        if not np.isin(self.direction, (0, 1)).all():
            raise TraceError("direction must be 0 (DL) or 1 (UL)")
        if (self.tbs_bits <= 0).any() or (self.rb_count <= 0).any():
            raise TraceError("tbs_bits and rb_count must be positive")
        if (np.diff(self.t_ms) < 0).any():
            raise TraceError("records not sorted by t_ms")

    @classmethod
    def empty(cls, meta: TraceMeta | None = None) -> "Trace":
        return cls([], [], [], [], [], meta)

    @classmethod
    def from_records(cls, records: Iterable[DciRecord], meta: TraceMeta | None = None,
                     *, sort: bool = False) -> "Trace":
        records = list(records)
        cols = [[getattr(r, c) for r in records] for c in _COLUMNS]
        cols[2] = [int(d) for d in cols[2]]
        if sort:
            return cls.sorted_from_columns(*cols, meta=meta)
        return cls(*cols, meta=meta)

    @classmethod
    def sorted_from_columns(cls, t_ms, rnti, direction, tbs_bits, rb_count,
                            meta: TraceMeta | None = None) -> "Trace":
        """Build a trace from unsorted columns; ties keep their input order."""
        t = np.asarray(t_ms, dtype=np.int64)
        order = np.argsort(t, kind="stable")
        resorted = bool(len(t) > 1 and (np.diff(t) < 0).any())
        return cls(t[order], np.asarray(rnti)[order], np.asarray(direction)[order],
                   np.asarray(tbs_bits)[order], np.asarray(rb_count)[order],
                   meta, resorted=resorted)

    def __len__(self) -> int:
        return len(self.t_ms)

    def __getitem__(self, i: int) -> DciRecord:
        d = Direction(int(self.direction[i]))
        return DciRecord(int(self.t_ms[i]), int(self.rnti[i]), d,
                         int(self.tbs_bits[i]), int(self.rb_count[i]),
                         DciFormat.for_direction(d))

    def __iter__(self) -> Iterator[DciRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def records(self) -> list[DciRecord]:
        return list(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return self.meta == other.meta and self.same_records(other)

    def same_records(self, other: "Trace") -> bool:
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in _COLUMNS)

    __hash__ = None

    def __repr__(self) -> str:
        return f"Trace(n={len(self)}, rntis={len(self.rntis())}, meta={self.meta})"

    def take(self, idx, meta: TraceMeta | None = None) -> "Trace":
        """Subset by boolean mask or sorted index array."""
        return Trace(self.t_ms[idx], self.rnti[idx], self.direction[idx],
                     self.tbs_bits[idx], self.rb_count[idx],
                     self.meta.copy() if meta is None else meta)

    def filter_rnti(self, rnti: int) -> "Trace":
        return self.take(self.rnti == rnti)

    def rntis(self) -> list[int]:
        return [int(r) for r in np.unique(self.rnti)]

    def span_ms(self) -> int:
        return int(self.t_ms[-1] - self.t_ms[0]) if len(self) else 0

    def columns(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, c) for c in _COLUMNS)


def _format_meta(meta: TraceMeta) -> list[str]:
    lines = []
    if meta.label is not None:
        lines.append(f"# label={meta.label}")
    if meta.capture_ratio is not None:
        lines.append(f"# capture_ratio={meta.capture_ratio!r}")
    if meta.seed is not None:
        lines.append(f"# seed={meta.seed}")
    for k in sorted(meta.extra):
        lines.append(f"# {k}={meta.extra[k]}")
    return lines


_DIR_TOKENS = {"DL": 0, "UL": 1}
_FMT_TOKENS = {"F1_0": 0, "F0_0": 1}


def write_trace(trace: Trace, path) -> None:
    lines = _format_meta(trace.meta)
    dirs = np.array(["DL", "UL"])[trace.direction.astype(np.intp)]
    fmts = np.array(["F1_0", "F0_0"])[trace.direction.astype(np.intp)]
    for t, r, d, tbs, rb, f in zip(trace.t_ms.tolist(), trace.rnti.tolist(), dirs,
                                   trace.tbs_bits.tolist(), trace.rb_count.tolist(), fmts):
        lines.append(f"{t},{r:04X},{d},{tbs},{rb},{f}")
    text = "\n".join(lines)
    if lines:
        text += "\n"
    Path(path).write_text(text, encoding="utf-8")


def _parse_meta(meta: TraceMeta, lineno: int, body: str) -> None:
    body = body.strip()
    if not body:
        return
    if "=" not in body:
        raise TraceParseError(lineno, f"metadata line without '=': {body!r}")
    key, value = (s.strip() for s in body.split("=", 1))
    try:
        if key == "label":
            meta.label = value
        elif key == "capture_ratio":
            meta.capture_ratio = float(value)
        elif key == "seed":
            meta.seed = int(value)
        else:
            meta.extra[key] = value
    except ValueError as e:
        raise TraceParseError(lineno, f"bad {key} value {value!r}") from e


def read_trace(path) -> Trace:
    """Parse a trace file.

    Out-of-order records are re-sorted (stably); the returned trace then has
    ``resorted=True`` and an :class:`UnsortedTraceWarning` is emitted.
    """
    meta = TraceMeta()
    cols: list[list[int]] = [[], [], [], [], []]
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                _parse_meta(meta, lineno, line[1:])
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise TraceParseError(lineno, f"expected 6 fields, got {len(parts)}")
            t, r, d, tbs, rb, f = (p.strip() for p in parts)
            try:
                t_ms = int(t)
                rnti = int(r, 16)
                tbs_bits = int(tbs)
                rb_count = int(rb)
            except ValueError as e:
                raise TraceParseError(lineno, str(e)) from e
            if d not in _DIR_TOKENS:
                raise TraceParseError(lineno, f"unknown direction {d!r}")
            if f not in _FMT_TOKENS:
                raise TraceParseError(lineno, f"unknown DCI format {f!r}")
            if _DIR_TOKENS[d] != _FMT_TOKENS[f]:
                raise TraceError(f"line {lineno}: direction {d} inconsistent with format {f}")
            if t_ms < 0 or not 0 <= rnti <= 0xFFFF or tbs_bits <= 0 or rb_count <= 0:
                raise TraceError(f"line {lineno}: field out of range")
            for col, v in zip(cols, (t_ms, rnti, _DIR_TOKENS[d], tbs_bits, rb_count)):
                col.append(v)
    trace = Trace.sorted_from_columns(*cols, meta=meta)
    if trace.resorted:
        warnings.warn(f"{path}: records were not time-ordered and have been re-sorted",
                      UnsortedTraceWarning, stacklevel=2)
    return trace


def merge_traces(traces: Sequence[Trace]) -> Trace:
    """Interleave traces by timestamp.

    Ties are broken by input position, so each RNTI keeps its relative order.
    The same RNTI appearing in two inputs with different labels is an error.
    """
    owner: dict[int, str | None] = {}
    for tr in traces:
        for r in tr.rntis():
            if r in owner and owner[r] != tr.meta.label:
                raise TraceError(
                    f"RNTI {r:04X} appears with labels {owner[r]!r} and {tr.meta.label!r}")
            owner[r] = tr.meta.label
    if not traces:
        return Trace.empty()
    labels = {t.meta.label for t in traces}
    ratios = {t.meta.capture_ratio for t in traces}
    meta = TraceMeta(label=labels.pop() if len(labels) == 1 else None,
                     capture_ratio=ratios.pop() if len(ratios) == 1 else None)
    cols = [np.concatenate([tr.columns()[i] for tr in traces]) for i in range(5)]
    merged = Trace.sorted_from_columns(*cols, meta=meta)
    merged.resorted = False
    return merged
