"""ANN model graphs: ordered layer lists, forward passes, BN folding,
and a small deterministic SGD trainer for MLPs.

A model is a flat list of layers.  Activation layers are the future
spiking sites; the three supported families (relu, clipped-relu,
quantized-relu) cover the activation semantics of the conversion
baselines being modeled.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tz

LAYER_KINDS = ("linear", "conv2d", "batchnorm", "avgpool", "flatten", "activation")
ACTIVATION_FAMILIES = ("relu", "clipped-relu", "quantized-relu")


class StructureError(ValueError):
    """Model layers do not compose as required."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


@dataclass
class ActivationSpec:
    family: str = "relu"
    theta: float | None = None        # clip level, clipped/quantized only
    levels: int | None = None         # quantization levels, quantized only
    shift: float = 0.5                # quantized only

    def __post_init__(self):
        if self.family not in ACTIVATION_FAMILIES:
            raise StructureError(f"unknown activation family {self.family!r}")
        if self.family in ("clipped-relu", "quantized-relu"):
            if self.theta is None or self.theta <= 0:
                raise StructureError(f"{self.family} requires theta > 0")
        if self.family == "quantized-relu":
            if self.levels is None or self.levels < 1:
                raise StructureError("quantized-relu requires levels >= 1")
            if not 0.0 <= self.shift <= 1.0:
                raise StructureError("shift must be in [0, 1]")


@dataclass
class Layer:
    kind: str
    params: dict = field(default_factory=dict)
    activation: ActivationSpec | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise StructureError(f"unknown layer kind {self.kind!r}")
        if self.kind == "activation" and self.activation is None:
            self.activation = ActivationSpec()
        if self.kind == "batchnorm" and np.any(np.asarray(self.params["var"]) < 0):
            raise StructureError("batchnorm running variance must be >= 0")


@dataclass
class ModelGraph:
    layers: list
    input_shape: tuple

    def copy(self) -> "ModelGraph":
        layers = [
            Layer(
                l.kind,
                {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in l.params.items()},
                l.activation if l.activation is None else replace(l.activation),
            )
            for l in self.layers
        ]
        return ModelGraph(layers, tuple(self.input_shape))

    def activation_indices(self) -> list:
        return [i for i, l in enumerate(self.layers) if l.kind == "activation"]


def eval_activation(spec: ActivationSpec, x: np.ndarray) -> np.ndarray:
    x = tz.check_finite(tz.as_tensor(x), "activation input")
    if spec.family == "relu":
        return np.maximum(x, 0.0)
    if spec.family == "clipped-relu":
        return np.clip(x, 0.0, spec.theta)
    # quantized-relu: theta * clip(floor(x*L/theta + shift)/L, 0, 1)
    theta, levels = spec.theta, spec.levels
    return theta * np.clip(np.floor(x * levels / theta + spec.shift) / levels, 0.0, 1.0)


def apply_linear(layer: Layer, x: np.ndarray) -> np.ndarray:
    w, b = layer.params["w"], layer.params.get("b")
    if x.shape[-1] != w.shape[1]:
        raise tz.DimensionError(f"linear expects {w.shape[1]} features, got {x.shape}")
    out = x @ w.T
    if b is not None:
        out = out + b
    return out


def _apply_layer(layer: Layer, x: np.ndarray) -> np.ndarray:
    """Apply one layer to a batched value (leading batch axis)."""
    if layer.kind == "linear":
        return apply_linear(layer, x)
    if layer.kind == "conv2d":
        w = layer.params["w"]
        stride = layer.params.get("stride", 1)
        pad = layer.params.get("pad", 0)
        out = np.stack([tz.conv2d(s, w, stride, pad) for s in x])
        b = layer.params.get("b")
        if b is not None:
            out = out + b[None, :, None, None]
        return out
    if layer.kind == "batchnorm":
        g, beta = layer.params["gamma"], layer.params["beta"]
        mean, var = layer.params["mean"], layer.params["var"]
        eps = layer.params.get("eps", 1e-5)
        scale = g / np.sqrt(var + eps)
        if x.ndim == 4:  # (B, C, H, W)
            return x * scale[None, :, None, None] + (beta - mean * scale)[None, :, None, None]
        return x * scale + (beta - mean * scale)
    if layer.kind == "avgpool":
        k = layer.params["k"]
        stride = layer.params.get("stride", k)
        return np.stack([tz.avgpool2d(s, k, stride) for s in x])
    if layer.kind == "flatten":
        return x.reshape(x.shape[0], -1)
    if layer.kind == "activation":
        return eval_activation(layer.activation, x)
    raise StructureError(f"unknown layer kind {layer.kind!r}")


def ann_forward(model: ModelGraph, x: np.ndarray, record: bool = False):
    """Run the ANN on one sample or a batch (extra leading axis).

    Returns logits, or (logits, activations) when record is set, where
    activations holds the post-activation tensor of every activation
    layer in order.
    """
    x = tz.as_tensor(x)
    single = x.shape == tuple(model.input_shape)
    if single:
        x = x[None]
    elif x.shape[1:] != tuple(model.input_shape):
        raise tz.DimensionError(f"input shape {x.shape} does not match {model.input_shape}")
    recorded = []
    for layer in model.layers:
        x = _apply_layer(layer, x)
        tz.check_finite(x, f"output of {layer.kind} layer")
        if record and layer.kind == "activation":
            recorded.append(x[0] if single else x)
    logits = x[0] if single else x
    return (logits, recorded) if record else logits


def fold_batchnorm(model: ModelGraph) -> ModelGraph:
    """Fold every batchnorm into the immediately preceding linear/conv.

    The folded model computes the same function: W' = g*W/sqrt(var+eps),
    b' = g*(b - mean)/sqrt(var+eps) + beta, per output channel.
    """
    out = model.copy()
    layers = []
    for layer in out.layers:
        if layer.kind != "batchnorm":
            layers.append(layer)
            continue
        if not layers or layers[-1].kind not in ("linear", "conv2d"):
            raise StructureError("batchnorm must directly follow a linear or conv2d layer")
        prev = layers[-1]
        g, beta = layer.params["gamma"], layer.params["beta"]
        mean, var = layer.params["mean"], layer.params["var"]
        eps = layer.params.get("eps", 1e-5)
        s = g / np.sqrt(var + eps)
        w = prev.params["w"]
        b = prev.params.get("b")
        if b is None:
            b = np.zeros(w.shape[0])
        if prev.kind == "linear":
            prev.params["w"] = w * s[:, None]
        else:
            prev.params["w"] = w * s[:, None, None, None]
        prev.params["b"] = s * (b - mean) + beta
    out.layers = layers
    return out


def make_mlp(dims, seed: int = 0, activation: ActivationSpec | None = None) -> ModelGraph:
    """ReLU MLP with He-initialized weights, linear output layer."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(dims[i + 1], dims[i]))
        layers.append(Layer("linear", {"w": w, "b": np.zeros(dims[i + 1])}))
        if i < len(dims) - 2:
            spec = activation if activation is not None else ActivationSpec()
            layers.append(Layer("activation", activation=replace(spec)))
    return ModelGraph(layers, (dims[0],))


def _softmax_xent(logits: np.ndarray, labels: np.ndarray):
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    probs = expz / expz.sum(axis=1, keepdims=True)
    n = len(labels)
    loss = -np.mean(np.log(probs[np.arange(n), labels] + 1e-300))
    grad = probs
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def train_toy_mlp(dataset, arch, epochs: int, lr: float, seed: int = 0,
                  batch_size: int = 32) -> ModelGraph:
    """Mini-batch SGD with cross-entropy on a ReLU MLP; deterministic per seed.

    ``dataset`` is anything with flat float features and int labels:
    a (features, labels) pair or an object with .features/.labels.
    ``arch`` lists hidden sizes; input/output sizes come from the data.
    """
    if hasattr(dataset, "features"):
        feats, labels = dataset.features, dataset.labels
    else:
        feats, labels = dataset
    feats = tz.as_tensor(feats).reshape(len(labels), -1)
    labels = np.asarray(labels, dtype=np.int64)
    n_in = feats.shape[1]
    n_out = int(labels.max()) + 1
    dims = [n_in, *arch, n_out]
    model = make_mlp(dims, seed=seed)
    lin = [l for l in model.layers if l.kind == "linear"]
    rng = np.random.default_rng(seed + 1)

    for _ in range(epochs):
        order = rng.permutation(len(labels))
        for start in range(0, len(labels), batch_size):
            idx = order[start : start + batch_size]
            xb, yb = feats[idx], labels[idx]
            # forward, keeping pre-activations for the backward pass
            acts = [xb]
            h = xb
            for i, layer in enumerate(lin):
                z = apply_linear(layer, h)
                h = np.maximum(z, 0.0) if i < len(lin) - 1 else z
                acts.append(h)
            loss, delta = _softmax_xent(acts[-1], yb)
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged, loss={loss}")
            for i in range(len(lin) - 1, -1, -1):
                layer = lin[i]
                gw = delta.T @ acts[i]
                gb = delta.sum(axis=0)
                if i > 0:
                    delta = (delta @ layer.params["w"]) * (acts[i] > 0)
                layer.params["w"] -= lr * gw
                layer.params["b"] -= lr * gb
    return model


def classify(model: ModelGraph, feats: np.ndarray) -> np.ndarray:
    return np.argmax(ann_forward(model, tz.as_tensor(feats)), axis=1)


def accuracy(model: ModelGraph, feats, labels) -> float:
    return float(np.mean(classify(model, feats) == np.asarray(labels)))
