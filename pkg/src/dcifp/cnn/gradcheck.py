"""Finite-difference verification of the analytic gradients.

Every parameter gets a central difference ``(L(p+h) - L(p-h)) / 2h``.
Conv and dense pre-activations are linear in their own parameters, so the
perturbed pre-activation is formed exactly as ``z + h * dz/dp`` and only the
layers above it are re-run, with many perturbations stacked along the batch
axis. Nothing from the backward pass is reused.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .model import Conv1D, Dense, MaxPool1D, ModelSpec, Network, cross_entropy

# max elements of a stacked perturbation batch
_CHUNK_ELEMS = 2_000_000


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float]
    n_checked: int


def _random_batch(spec: ModelSpec, n: int, rng):
    x = np.empty((n, spec.W, spec.n_features))
    x[..., 0] = rng.integers(0, 2, (n, spec.W))
    x[..., 1:] = rng.uniform(0.0, 2.0, (n, spec.W, spec.n_features - 1))
    y = rng.integers(0, spec.n_classes, n)
    return x, y


def nudge_kinks(net: Network, x, margin: float) -> int:
    """Fix constant offsets that keep every ReLU input and max-pool
    comparison at least ``margin`` away from its kink for input ``x``.

    Returns the number of nudged entries.
    """
    nudged = 0
    for layer in net.layers:
        if hasattr(layer, "shift"):
            layer.shift = None
    h = net._prepare(x)
    for layer in net.layers:
        if isinstance(layer, (Conv1D, Dense)) and layer.activation == "relu":
            layer.forward(h)
            z = layer._z
            close = np.abs(z) < margin
            layer.shift = np.where(close, np.where(z >= 0, 2 * margin, -2 * margin) - z, 0.0)
            nudged += int(close.sum())
        elif isinstance(layer, MaxPool1D):
            n, L, c = h.shape
            p = layer.size
            Lo = L // p
            xr = h[:, :Lo * p].reshape(n, Lo, p, c)
            srt = np.sort(xr, axis=2)
            tie = (srt[:, :, -1] - srt[:, :, -2]) < margin
            sr = np.zeros_like(xr)
            np.put_along_axis(sr, xr.argmax(axis=2)[:, :, None, :],
                              np.where(tie, 2 * margin, 0.0)[:, :, None, :], axis=2)
            shift = np.zeros_like(h)
            shift[:, :Lo * p] = sr.reshape(n, Lo * p, c)
            layer.shift = shift
            nudged += int(tie.sum())
        h = layer.forward(h)
    return nudged


def _basis(layer, x):
    """Pre-activation ``z`` and the matrix ``A`` with dz[..., f]/dK[r, f] = A[..., r]."""
    if isinstance(layer, Conv1D):
        n, L, c = x.shape
        k = layer.kernel
        xp = np.pad(x, ((0, 0), layer.pad, (0, 0)))
        A = sliding_window_view(xp, k, axis=1).transpose(0, 1, 3, 2).reshape(n, L, k * c)
    else:
        A = x
    K = layer.params["kernel"].reshape(A.shape[-1], -1)
    return A @ K + layer.params["bias"], A


def _suffix_losses(net: Network, li: int, Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Loss for each stacked pre-activation ``Z[p]`` of layer ``li``."""
    P, n = Z.shape[:2]
    saved = {}
    try:
        for j in range(li, len(net.layers)):
            layer = net.layers[j]
            if getattr(layer, "shift", None) is not None:
                saved[j] = layer.shift
                layer.shift = np.tile(layer.shift, (P,) + (1,) * (layer.shift.ndim - 1))
        layer = net.layers[li]
        h = layer._activate(Z.reshape((P * n,) + Z.shape[2:]))
        logits = net.logits(h, start=li + 1) if li + 1 < len(net.layers) else h
    finally:
        for j, s in saved.items():
            net.layers[j].shift = s
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    nll = -logp[np.arange(P * n), np.tile(y, P)]
    return nll.reshape(P, n).mean(axis=1)


def numeric_grad_check(spec: ModelSpec, seed: int = 0, *, n_samples: int = 2,
                       h: float = 1e-4, margin: float = 1e-2,
                       floor: float = 1e-6) -> GradCheckResult:
    """Compare backprop gradients with central differences for every parameter.

    Runs in float64 with dropout off; kinks are avoided with
    :func:`nudge_kinks`. The relative error of one entry is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = np.random.default_rng(seed)
    net = Network(spec, np.float64)
    net.init_weights(rng)
    # non-zero biases so bias gradients are not checked at the origin only
    for layer in net.layers:
        if layer.params:
            layer.params["bias"] = rng.uniform(-0.1, 0.1, layer.params["bias"].shape)
    x, y = _random_batch(spec, n_samples, rng)
    nudge_kinks(net, x, margin)

    _, analytic = net.loss_and_grads(x, y, training=False)
    analytic = dict(zip(net.param_refs(), analytic))
    inputs, logits = net.forward_cached(x)
    base = cross_entropy(logits, y)[0]

    per_param: dict[str, float] = {}
    checked = 0
    names = dict(zip(net.param_refs(), net.param_names()))
    for li, layer in enumerate(net.layers):
        if not layer.params:
            continue
        z0, A = _basis(layer, inputs[li])
        # sanity: the rebuilt pre-activation reproduces the unperturbed loss
        l0 = _suffix_losses(net, li, z0[None], y)[0]
        if not np.isclose(l0, base, rtol=1e-12, atol=1e-12):
            raise AssertionError(f"layer {li}: rebuilt loss {l0} != {base}")
        F = z0.shape[-1]
        for key in ("kernel", "bias"):
            grad = analytic[(li, key)].reshape(-1)
            Rf = grad.size
            chunk = max(1, _CHUNK_ELEMS // z0.size)
            num = np.empty(Rf)
            for start in range(0, Rf, chunk):
                idx = np.arange(start, min(start + chunk, Rf))
                r, f = (idx // F, idx % F) if key == "kernel" else (None, idx)
                P = len(idx)
                delta = np.zeros((P,) + z0.shape)
                col = np.moveaxis(A[..., r], -1, 0) if key == "kernel" else 1.0
                delta[np.arange(P), ..., f] = col
                lp = _suffix_losses(net, li, z0 + h * delta, y)
                lm = _suffix_losses(net, li, z0 - h * delta, y)
                num[idx] = (lp - lm) / (2 * h)
            err = np.abs(grad - num) / np.maximum(np.maximum(np.abs(grad), np.abs(num)), floor)
            per_param[names[(li, key)]] = float(err.max())
            checked += Rf
    return GradCheckResult(max(per_param.values()), per_param, checked)
