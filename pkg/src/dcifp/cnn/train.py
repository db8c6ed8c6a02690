"""Training, inference and the model bundle."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from ..features import FeatureScaling, N_FEATURES, WindowSample, stack
from ..trace import DEFAULT_APPS
from .model import ModelSpec, Network, ShapeError, build_model, cross_entropy, softmax

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser settings.

    The defaults (Adam, lr 1e-3, batch 64, 30 epochs, float64) are
    engineering choices; ``dtype="float32"`` trades bit-level agreement with
    the float64 gradient check for roughly twice the speed. With
    ``keep_best`` the returned weights are those of the epoch with the
    highest validation accuracy (earliest on ties) rather than the last.
    """

    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    validation_fraction: float = 0.1
    dtype: str = "float64"
    balance: bool = True
    class_order: tuple[str, ...] | None = None
    keep_best: bool = True

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class ModelBundle:
    spec: ModelSpec
    weights: list[np.ndarray]
    class_order: list[str]
    scaling: FeatureScaling = field(default_factory=FeatureScaling)
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.class_order) != self.spec.n_classes:
            raise ShapeError("class_order length must equal n_classes")
        self.network  # validates weight shapes

    @cached_property
    def network(self) -> Network:
        dtype = self.weights[0].dtype if self.weights else np.float64
        net = Network(self.spec, dtype)
        net.set_weights(self.weights)
        return net

    @property
    def W(self) -> int:
        return self.spec.W

    def proba(self, X: np.ndarray) -> np.ndarray:
        return self.network.predict_proba(X)

    def predict_batch(self, X: np.ndarray) -> tuple[list[str], np.ndarray]:
        p = self.proba(X)
        idx = p.argmax(axis=1)
        return [self.class_order[i] for i in idx], p[np.arange(len(p)), idx]


def forward(bundle: ModelBundle, sample: WindowSample | np.ndarray, training: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Class probabilities for one window; dropout only when ``training``."""
    rows = sample.rows if isinstance(sample, WindowSample) else np.asarray(sample)
    if rows.shape != (bundle.spec.W, bundle.spec.n_features):
        raise ShapeError(f"sample shape {rows.shape} does not match model "
                         f"({bundle.spec.W}, {bundle.spec.n_features})")
    if training and rng is None:
        rng = np.random.default_rng()
    net = bundle.network
    return softmax(net.logits(rows[None], training, rng))[0].astype(np.float64)


def predict(bundle: ModelBundle, sample: WindowSample | np.ndarray) -> tuple[str, float]:
    p = forward(bundle, sample)
    i = int(np.argmax(p))  # first index wins ties
    return bundle.class_order[i], float(p[i])


def resolve_class_order(labels: Sequence[str], requested: Sequence[str] | None) -> list[str]:
    present = set(labels)
    if requested is not None:
        missing = [c for c in requested if c not in present]
        if missing:
            raise TrainingError(f"classes absent from training data: {missing}")
        extra = present - set(requested)
        if extra:
            raise TrainingError(f"labels outside class order: {sorted(extra)}")
        return list(requested)
    known = [a for a in DEFAULT_APPS if a in present]
    return known + sorted(present - set(known))


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-7):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        a = self.lr * np.sqrt(1 - self.b2 ** self.t) / (1 - self.b1 ** self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= (a * m / (np.sqrt(v) + self.eps)).astype(p.dtype)


class _SGD:
    def __init__(self, params, lr, momentum=0.9):
        self.lr, self.mu = lr, momentum
        self.vel = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        for p, g, v in zip(params, grads, self.vel):
            v *= self.mu
            v -= self.lr * g
            p += v


def _split(y, n_classes, frac, rng, balance):
    """Per-class balanced, stratified train/validation index split."""
    per_class = [np.flatnonzero(y == c) for c in range(n_classes)]
    if balance:
        m = min(len(ix) for ix in per_class)
        per_class = [rng.choice(ix, m, replace=False) if len(ix) > m else ix for ix in per_class]
    tr, va = [], []
    for ix in per_class:
        ix = rng.permutation(ix)
        n_val = int(round(frac * len(ix)))
        if len(ix) > 1:
            n_val = min(max(n_val, 1), len(ix) - 1)
        va.append(ix[:n_val])
        tr.append(ix[n_val:])
    return np.sort(np.concatenate(tr)), np.sort(np.concatenate(va))


def evaluate_loss_acc(net: Network, X, y, batch_size=512):
    if len(X) == 0:
        return float("nan"), float("nan")
    loss_sum, correct = 0.0, 0
    for i in range(0, len(X), batch_size):
        logits = net.logits(X[i:i + batch_size])
        loss, _ = cross_entropy(logits, y[i:i + batch_size])
        loss_sum += loss * len(logits)
        correct += int((logits.argmax(axis=1) == y[i:i + batch_size]).sum())
    return loss_sum / len(X), correct / len(X)


def train(dataset: Sequence[WindowSample], cfg: TrainConfig = TrainConfig(),
          scaling: FeatureScaling = FeatureScaling(), progress=None) -> ModelBundle:
    """Fit the CNN on labelled windows with mini-batch cross-entropy descent.

    Classes are balanced by downsampling to the rarest class, then a
    stratified ``validation_fraction`` is held out. The returned bundle
    records per-epoch training loss and validation accuracy. Results are
    deterministic for a fixed seed.
    """
    if any(s.label is None for s in dataset):
        raise TrainingError("all training samples need a label")
    try:
        X = stack(dataset)
    except ValueError as e:
        raise TrainingError(str(e)) from e
    labels = [s.label for s in dataset]
    classes = resolve_class_order(labels, cfg.class_order)
    if len(classes) < 2:
        raise TrainingError("need at least two classes")
    lookup = {c: i for i, c in enumerate(classes)}
    y = np.array([lookup[l] for l in labels])

    rng = np.random.default_rng(cfg.seed)
    spec = build_model(X.shape[1], N_FEATURES, len(classes))
    net = Network(spec, np.dtype(cfg.dtype))
    net.init_weights(rng)
    tr, va = _split(y, len(classes), cfg.validation_fraction, rng, cfg.balance)
    X = X.astype(net.dtype)
    Xtr, ytr, Xva, yva = X[tr], y[tr], X[va], y[va]

    params = net.get_weights()
    opt = (_Adam if cfg.optimizer == "adam" else _SGD)(params, cfg.learning_rate)
    loss_curve, val_acc, val_loss = [], [], []
    best_acc, best_epoch, best = -1.0, 0, None
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(Xtr))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            b = order[i:i + cfg.batch_size]
            loss, grads = net.loss_and_grads(Xtr[b], ytr[b], training=True, rng=rng)
            opt.step(params, grads)
            total += loss * len(b)
        loss_curve.append(total / len(Xtr))
        vl, vacc = evaluate_loss_acc(net, Xva, yva)
        val_loss.append(vl)
        val_acc.append(vacc)
        if cfg.keep_best and vacc > best_acc:
            best_acc, best_epoch, best = vacc, epoch, [p.copy() for p in params]
        log.info("epoch %d/%d loss %.4f val_loss %.4f val_acc %.4f",
                 epoch + 1, cfg.epochs, loss_curve[-1], vl, vacc)
        if progress is not None:
            progress(epoch, loss_curve[-1], vacc)

    final = best if best is not None else [p.copy() for p in params]
    meta = dict(seed=cfg.seed, epochs=cfg.epochs, batch_size=cfg.batch_size,
                learning_rate=cfg.learning_rate, optimizer=cfg.optimizer, dtype=cfg.dtype,
                n_train=int(len(tr)), n_val=int(len(va)), keep_best=cfg.keep_best,
                selected_epoch=(best_epoch if best is not None else cfg.epochs - 1) + 1,
                loss_curve=[float(v) for v in loss_curve],
                val_loss=[float(v) for v in val_loss],
                val_accuracy=[float(v) for v in val_acc])
    return ModelBundle(spec, final, classes, scaling, meta)
