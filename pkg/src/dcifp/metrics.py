"""Classification metrics, window-size sweeps and latency summaries."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cnn import ModelBundle, TrainConfig, train
from .features import build_dataset, stack, time_to_fill, WindowSample
from .trace import Trace

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    """Confusion matrix (rows true, columns predicted) and derived scores."""

    class_order: list[str]
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro: dict[str, float]
    weighted: dict[str, float]
    W: int | None = None
    # classes where a precision/recall denominator was zero (scored as 0)
    zero_division: list[str] = field(default_factory=list)
    # classes with neither true nor predicted samples; left out of macro
    absent: list[str] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    def to_kv(self) -> str:
        """Line-delimited ``key=value`` rendering."""
        lines = [f"W={self.W if self.W is not None else ''}",
                 f"n_samples={self.n_samples}",
                 f"accuracy={self.accuracy!r}"]
        for avg, d in (("macro", self.macro), ("weighted", self.weighted)):
            for k in ("precision", "recall", "f1"):
                lines.append(f"{avg}.{k}={d[k]!r}")
        for i, c in enumerate(self.class_order):
            lines.append(f"class.{c}.precision={self.precision[i]!r}")
            lines.append(f"class.{c}.recall={self.recall[i]!r}")
            lines.append(f"class.{c}.f1={self.f1[i]!r}")
            lines.append(f"class.{c}.support={int(self.support[i])}")
        lines.append("classes=" + ";".join(self.class_order))
        for i, c in enumerate(self.class_order):
            lines.append(f"confusion.{c}=" + ";".join(str(int(v)) for v in self.confusion[i]))
        if self.zero_division:
            lines.append("zero_division=" + ";".join(self.zero_division))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Aligned per-application table with accuracy and averages."""
        w = max([len(c) for c in self.class_order] + [12])
        out = [f"{'':<{w}}  {'Precision':>9}  {'Recall':>9}  {'F1-score':>9}  {'Support':>7}"]
        for i, c in enumerate(self.class_order):
            out.append(f"{c:<{w}}  {self.precision[i]:9.3f}  {self.recall[i]:9.3f}  "
                       f"{self.f1[i]:9.3f}  {int(self.support[i]):7d}")
        out.append("-" * len(out[0]))
        out.append(f"{'Accuracy':<{w}}  {'':>9}  {'':>9}  {self.accuracy:9.3f}  {self.n_samples:7d}")
        for name, d in (("Macro avg", self.macro), ("Weighted avg", self.weighted)):
            out.append(f"{name:<{w}}  {d['precision']:9.3f}  {d['recall']:9.3f}  {d['f1']:9.3f}")
        return "\n".join(out) + "\n"


def _safe_div(num, den):
    out = np.zeros(len(num), dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def compute_metrics(true_labels: Sequence[str], predicted_labels: Sequence[str],
                    class_order: Sequence[str], W: int | None = None) -> EvalReport:
    if len(true_labels) != len(predicted_labels):
        raise ValueError("label lists differ in length")
    if len(true_labels) == 0:
        raise ValueError("no samples to evaluate")
    index = {c: i for i, c in enumerate(class_order)}
    try:
        t = np.array([index[l] for l in true_labels])
        p = np.array([index[l] for l in predicted_labels])
    except KeyError as e:
        raise ValueError(f"label {e.args[0]!r} not in class order") from None
    n = len(class_order)
    cm = np.bincount(t * n + p, minlength=n * n).reshape(n, n)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    present = (support > 0) | (predicted > 0)
    zero_div = [c for i, c in enumerate(class_order) if support[i] == 0 or predicted[i] == 0]
    macro = {k: float(v[present].mean()) for k, v in
             (("precision", precision), ("recall", recall), ("f1", f1))}
    wts = support / support.sum()
    weighted = {k: float((v * wts).sum()) for k, v in
                (("precision", precision), ("f1", f1))}
    accuracy = float(tp.sum() / cm.sum())
    # support-weighted recall sums tp_i / n, i.e. the accuracy; use that form
    # so the two agree bit for bit
    weighted["recall"] = accuracy
    weighted = {k: weighted[k] for k in ("precision", "recall", "f1")}
    return EvalReport(list(class_order), cm, precision, recall, f1, support,
                      accuracy, macro, weighted, W, zero_div,
                      [c for i, c in enumerate(class_order) if not present[i]])


def normalized_confusion(report: EvalReport) -> np.ndarray:
    cm = report.confusion.astype(np.float64)
    rows = cm.sum(axis=1, keepdims=True)
    out = np.zeros_like(cm)
    np.divide(cm, rows, out=out, where=rows > 0)
    return out


def evaluate(bundle: ModelBundle, samples: Sequence[WindowSample]) -> EvalReport:
    pred, _ = bundle.predict_batch(stack(samples))
    return compute_metrics([s.label for s in samples], pred, bundle.class_order, bundle.W)


def cap_per_class(samples, cap, rng):
    """Random subset of at most ``cap`` samples per label, original order kept."""
    if cap is None:
        return samples
    by_class: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        by_class.setdefault(s.label, []).append(i)
    keep = []
    for idx in by_class.values():
        if len(idx) > cap:
            idx = sorted(rng.choice(idx, cap, replace=False).tolist())
        keep.extend(idx)
    return [samples[i] for i in sorted(keep)]


def _provenance(traces):
    return {(t.meta.label, t.meta.seed) for t in traces if t.meta.seed is not None}


def window_sweep(train_traces: Sequence[Trace], test_traces: Sequence[Trace],
                 windows: Sequence[int] = tuple(range(20, 161, 20)),
                 cfg: TrainConfig = TrainConfig(), *,
                 train_cap: Mapping[int, int] | None = None,
                 test_cap: Mapping[int, int] | None = None,
                 models: dict | None = None, progress=None
                 ) -> list[tuple[int, EvalReport]]:
    """Train and evaluate one model per window size.

    ``train_cap[W]`` and ``test_cap[W]`` limit the number of windows per
    class (random subset, seeded by ``cfg.seed``). Trained bundles are
    stored in ``models`` (keyed by W) when a dict is given.
    """
    overlap = _provenance(train_traces) & _provenance(test_traces)
    if overlap:
        raise ValueError(f"train and test share source traces: {sorted(overlap)[:3]}")
    rng = np.random.default_rng(cfg.seed)
    out = []
    for W in windows:
        tr = cap_per_class(build_dataset(train_traces, W), (train_cap or {}).get(W), rng)
        te = cap_per_class(build_dataset(test_traces, W), (test_cap or {}).get(W), rng)
        log.info("sweep W=%d: %d train / %d test windows", W, len(tr), len(te))
        bundle = train(tr, cfg)
        if models is not None:
            models[W] = bundle
        report = evaluate(bundle, te)
        if progress is not None:
            progress(W, report)
        out.append((W, report))
    return out


def sweep_table(results: Sequence[tuple[int, EvalReport]]) -> str:
    """Window size vs weighted precision, recall, F1 and accuracy."""
    lines = [f"{'Window Size':>11}  {'Precision':>9}  {'Recall':>9}  {'F1-score':>9}  {'Accuracy':>9}"]
    for W, r in results:
        w = r.weighted
        lines.append(f"{W:>11d}  {w['precision']:9.3f}  {w['recall']:9.3f}  "
                     f"{w['f1']:9.3f}  {r.accuracy:9.3f}")
    return "\n".join(lines) + "\n"


def sweep_csv(results: Sequence[tuple[int, EvalReport]]) -> str:
    lines = ["window,precision,recall,f1,accuracy,n_samples"]
    for W, r in results:
        w = r.weighted
        lines.append(f"{W},{w['precision']:.6f},{w['recall']:.6f},{w['f1']:.6f},"
                     f"{r.accuracy:.6f},{r.n_samples}")
    return "\n".join(lines) + "\n"


@dataclass
class LatencyStats:
    label: str | None
    W: int
    n: int
    mean_s: float | None
    std_s: float | None
    median_s: float | None

    @property
    def empty(self) -> bool:
        return self.n == 0


def classification_latency(trace: Trace, W: int, n_trials: int | None = None) -> LatencyStats:
    """Mean and spread of the time to collect ``W`` instances.

    Uses the first ``n_trials`` disjoint windows (all of them when None). A
    trace too short to fill one window yields ``n == 0`` and ``None`` stats.
    """
    if n_trials is not None and n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    fills = time_to_fill(trace, W)
    if n_trials is not None:
        fills = fills[:n_trials]
    if not fills:
        return LatencyStats(trace.meta.label, W, 0, None, None, None)
    a = np.asarray(fills)
    return LatencyStats(trace.meta.label, W, len(a), float(a.mean()),
                        float(a.std(ddof=1)) if len(a) > 1 else 0.0, float(np.median(a)))


def latency_table(traces: Mapping[str, Trace], windows: Sequence[int],
                  n_trials: int | None = None) -> dict[str, dict[int, LatencyStats]]:
    return {app: {W: classification_latency(tr, W, n_trials) for W in windows}
            for app, tr in traces.items()}


def latency_csv(table: Mapping[str, Mapping[int, LatencyStats]]) -> str:
    lines = ["app,window,n,mean_s,std_s,median_s"]
    for app, row in table.items():
        for W, s in row.items():
            f = (lambda v: "" if v is None or (isinstance(v, float) and math.isnan(v))
                 else f"{v:.3f}")
            lines.append(f"{app},{W},{s.n},{f(s.mean_s)},{f(s.std_s)},{f(s.median_s)}")
    return "\n".join(lines) + "\n"
