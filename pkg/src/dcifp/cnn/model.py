"""1D-CNN layer plan and a small numpy implementation of it.

Tensors are laid out ``(batch, timesteps, channels)``. Convolutions use
"same" padding with stride 1, pooling is non-overlapping with floor
semantics, and dropout is inverted so inference needs no rescaling.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..features import N_FEATURES

PADDING = "same"
# Fixed divisors applied to (direction, tbs_kb, dt_s) on entry to the network.
# Transport blocks in kilobits sit at 10-60 for video on every row, which
# stalls training; tens of kilobits keep all three inputs O(0.1)-O(10).
INPUT_SCALE = (1.0, 10.0, 1.0)


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv1d | dropout | maxpool | flatten | dense
    size: int = 0  # filters, units or pool size
    kernel: int = 0
    rate: float = 0.0
    activation: str | None = None


@dataclass(frozen=True)
class ModelSpec:
    W: int
    n_features: int
    n_classes: int
    layers: tuple[LayerSpec, ...] = field(default=())
    padding: str = PADDING
    input_scale: tuple[float, ...] = ()  # per-feature divisors, empty for none

    def to_dict(self) -> dict:
        return dict(W=self.W, n_features=self.n_features, n_classes=self.n_classes,
                    padding=self.padding, layers=[asdict(l) for l in self.layers],
                    input_scale=list(self.input_scale))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["W"], d["n_features"], d["n_classes"],
                   tuple(LayerSpec(**l) for l in d["layers"]), d.get("padding", PADDING),
                   tuple(float(v) for v in d.get("input_scale", ())))

    def convs(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind == "conv1d"]


def build_model(W: int, n_features: int = N_FEATURES, n_classes: int = 8) -> ModelSpec:
    """Layer plan for window size ``W``; deeper blocks switch on at W >= 40 and W >= 80."""
    if n_classes < 2:
        raise ShapeError("need at least two classes")
    if W < 1 or n_features < 1:
        raise ShapeError("W and n_features must be positive")
    L = LayerSpec
    plan = [L("conv1d", 64, 5, activation="relu"), L("dropout", rate=0.2)]
    if W >= 40:
        plan += [L("conv1d", 64, 7, activation="relu"), L("dropout", rate=0.2), L("maxpool", 2)]
    if W >= 80:
        plan += [L("conv1d", 128, 9, activation="relu"), L("dropout", rate=0.3), L("maxpool", 2)]
    plan += [L("flatten"), L("dense", 256, activation="relu"), L("dropout", rate=0.1),
             L("dense", n_classes, activation="softmax")]
    scale = INPUT_SCALE if n_features == len(INPUT_SCALE) else ()
    spec = ModelSpec(W, n_features, n_classes, tuple(plan), PADDING, scale)
    layer_shapes(spec)
    return spec


def layer_shapes(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Output shape (without batch axis) after each layer of ``spec``."""
    shape: tuple[int, ...] = (spec.W, spec.n_features)
    out = []
    for l in spec.layers:
        if l.kind == "conv1d":
            if shape[0] < l.kernel:
                raise ShapeError(f"sequence length {shape[0]} shorter than kernel {l.kernel}")
            shape = (shape[0], l.size)
        elif l.kind == "maxpool":
            if shape[0] < l.size:
                raise ShapeError(f"sequence length {shape[0]} shorter than pool {l.size}")
            shape = (shape[0] // l.size, shape[1])
        elif l.kind == "flatten":
            shape = (shape[0] * shape[1],)
        elif l.kind == "dense":
            shape = (l.size,)
        elif l.kind != "dropout":
            raise ShapeError(f"unknown layer kind {l.kind!r}")
        out.append(shape)
    return out


# -- layers -------------------------------------------------------------------

class _Activated:
    """Mixin for a ReLU applied to a pre-activation.

    ``shift`` is a constant added to the pre-activation; it is ``None``
    except during gradient checking, where it moves values off the kink.
    """

    activation: str | None
    shift: np.ndarray | None = None

    def _activate(self, z):
        if self.shift is not None:
            z = z + self.shift
        self._z = z
        if self.activation == "relu":
            self._mask = z > 0
            return z * self._mask
        return z

    def _activation_grad(self, g):
        return g * self._mask if self.activation == "relu" else g


class Conv1D(_Activated):
    def __init__(self, in_ch, filters, kernel, activation, dtype):
        self.kernel = kernel
        self.activation = activation
        self.params = {"kernel": np.zeros((kernel, in_ch, filters), dtype),
                       "bias": np.zeros(filters, dtype)}
        self.fan_in = kernel * in_ch
        self.pad = ((kernel - 1) // 2, kernel - 1 - (kernel - 1) // 2)

    def forward(self, x, training=False, rng=None):
        n, L, c = x.shape
        k = self.kernel
        xp = np.pad(x, ((0, 0), self.pad, (0, 0)))
        cols = sliding_window_view(xp, k, axis=1)  # (n, L, c, k)
        self._cols = cols.transpose(0, 1, 3, 2).reshape(n * L, k * c)
        self._shape = x.shape
        Wm = self.params["kernel"].reshape(k * c, -1)
        z = (self._cols @ Wm).reshape(n, L, -1) + self.params["bias"]
        return self._activate(z)

    def backward(self, g):
        n, L, c = self._shape
        k = self.kernel
        gz = self._activation_grad(g)
        F = gz.shape[-1]
        g2 = gz.reshape(-1, F)
        Wm = self.params["kernel"].reshape(k * c, F)
        self.grads = {"kernel": (self._cols.T @ g2).reshape(k, c, F),
                      "bias": g2.sum(axis=0)}
        dcols = (g2 @ Wm.T).reshape(n, L, k, c)
        dxp = np.zeros((n, L + k - 1, c), dtype=g.dtype)
        for j in range(k):
            dxp[:, j:j + L] += dcols[:, :, j]
        return dxp[:, self.pad[0]:self.pad[0] + L]


class Dense(_Activated):
    def __init__(self, n_in, units, activation, dtype):
        self.activation = activation
        self.params = {"kernel": np.zeros((n_in, units), dtype), "bias": np.zeros(units, dtype)}
        self.fan_in = n_in

    def forward(self, x, training=False, rng=None):
        self._x = x
        z = x @ self.params["kernel"] + self.params["bias"]
        # softmax is folded into the loss; the layer returns logits
        return z if self.activation == "softmax" else self._activate(z)

    def backward(self, g):
        if self.activation != "softmax":
            g = self._activation_grad(g)
        self.grads = {"kernel": self._x.T @ g, "bias": g.sum(axis=0)}
        return g @ self.params["kernel"].T


class MaxPool1D:
    params: dict = {}
    shift: np.ndarray | None = None

    def __init__(self, size):
        self.size = size

    def forward(self, x, training=False, rng=None):
        if self.shift is not None:
            x = x + self.shift
        n, L, c = x.shape
        p = self.size
        Lo = L // p
        xr = x[:, :Lo * p].reshape(n, Lo, p, c)
        # elementwise scan over the (small) pool axis; first maximum wins
        best = xr[:, :, 0].copy()
        idx = np.zeros(best.shape, dtype=np.intp)
        for j in range(1, p):
            better = xr[:, :, j] > best
            idx[better] = j
            np.maximum(best, xr[:, :, j], out=best)
        self._onehot = np.arange(p)[None, None, :, None] == idx[:, :, None, :]
        self._shape = x.shape
        return best

    def backward(self, g):
        n, L, c = self._shape
        Lo = g.shape[1]
        dx = np.zeros(self._shape, dtype=g.dtype)
        dx[:, :Lo * self.size] = (self._onehot * g[:, :, None, :]).reshape(n, Lo * self.size, c)
        return dx


class Dropout:
    params: dict = {}

    def __init__(self, rate):
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        dt = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
        self._mask = (rng.random(x.shape, dtype=dt) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, g):
        return g if self._mask is None else g * self._mask


class Flatten:
    params: dict = {}

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, y):
    """Mean categorical cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), y].mean()
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    return float(loss), g / n


class Network:
    """Executable form of a :class:`ModelSpec`."""

    def __init__(self, spec: ModelSpec, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self._scale = np.asarray(spec.input_scale, self.dtype) if spec.input_scale else None
        self.layers = []
        shape = (spec.W, spec.n_features)
        for l, out_shape in zip(spec.layers, layer_shapes(spec)):
            if l.kind == "conv1d":
                layer = Conv1D(shape[1], l.size, l.kernel, l.activation, self.dtype)
            elif l.kind == "dense":
                layer = Dense(shape[0], l.size, l.activation, self.dtype)
            elif l.kind == "maxpool":
                layer = MaxPool1D(l.size)
            elif l.kind == "dropout":
                layer = Dropout(l.rate)
            else:
                layer = Flatten()
            self.layers.append(layer)
            shape = out_shape

    # parameters are enumerated layer by layer, kernel before bias
    def param_names(self) -> list[str]:
        names, seen = [], {}
        for i, layer in enumerate(self.layers):
            if layer.params:
                kind = self.spec.layers[i].kind
                seen[kind] = seen.get(kind, 0) + 1
                names += [f"{kind}_{seen[kind]}.kernel", f"{kind}_{seen[kind]}.bias"]
        return names

    def param_refs(self) -> list[tuple[int, str]]:
        return [(i, k) for i, layer in enumerate(self.layers) for k in ("kernel", "bias")
                if layer.params]

    def get_weights(self) -> list[np.ndarray]:
        return [self.layers[i].params[k] for i, k in self.param_refs()]

    def set_weights(self, weights) -> None:
        refs = self.param_refs()
        if len(weights) != len(refs):
            raise ShapeError(f"expected {len(refs)} weight arrays, got {len(weights)}")
        for (i, k), w in zip(refs, weights):
            cur = self.layers[i].params[k]
            if tuple(np.shape(w)) != cur.shape:
                raise ShapeError(f"layer {i} {k}: shape {np.shape(w)} != {cur.shape}")
            self.layers[i].params[k] = np.array(w, dtype=self.dtype)

    def init_weights(self, rng: np.random.Generator) -> None:
        """Uniform in +-sqrt(6 / fan_in) for kernels, zero biases."""
        for layer in self.layers:
            if layer.params:
                lim = np.sqrt(6.0 / layer.fan_in)
                w = layer.params["kernel"]
                layer.params["kernel"] = rng.uniform(-lim, lim, w.shape).astype(self.dtype)
                layer.params["bias"] = np.zeros_like(layer.params["bias"])

    def _prepare(self, x):
        x = np.asarray(x, dtype=self.dtype)
        return x if self._scale is None else x / self._scale

    def logits(self, x, training=False, rng=None, start=0):
        x = self._prepare(x) if start == 0 else np.asarray(x, dtype=self.dtype)
        for layer in self.layers[start:]:
            x = layer.forward(x, training, rng)
        return x

    def forward_cached(self, x):
        """Inference pass returning the input seen by each layer."""
        inputs = []
        x = self._prepare(x)
        for layer in self.layers:
            inputs.append(x)
            x = layer.forward(x, False, None)
        return inputs, x

    def predict_proba(self, x, batch_size=512):
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[1:] != (self.spec.W, self.spec.n_features):
            raise ShapeError(f"expected input (n, {self.spec.W}, {self.spec.n_features}), "
                             f"got {x.shape}")
        out = [softmax(self.logits(x[i:i + batch_size]))
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.empty((0, self.spec.n_classes))

    def loss_and_grads(self, x, y, training=False, rng=None):
        logits = self.logits(x, training, rng)
        loss, g = cross_entropy(logits, y)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        grads = [self.layers[i].grads[k] for i, k in self.param_refs()]
        return loss, grads
