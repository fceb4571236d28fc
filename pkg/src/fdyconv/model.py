"""Configurable conv/CRNN stacks with dynamic layers, serialization and toy training.

A model is an ordered list of layers built from a declarative
`ModelConfig`. When any dynamic layer is present the first convolutional
layer must stay a plain conv2d. Inference is pure; `toy_train` runs plain
SGD on binary cross-entropy over the layers that implement a backward
pass (everything except GRU/DY/TDY).
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import dynconv, nn, serialization
from .errors import ConfigError, ShapeError

_DYNAMIC_KINDS = {"fdy", "dy", "tdy"}
_CONV_KINDS = {"conv2d"} | _DYNAMIC_KINDS
_KNOWN_KINDS = _CONV_KINDS | {"batchnorm", "relu", "avgpool", "gru", "linear", "sigmoid"}


@dataclass
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class ModelConfig:
    layers: List[LayerSpec]
    class_count: int
    in_channels: int = 1
    n_mels: int = 128
    dynamic_k: int = 4
    temperature: float = 31.0


def _kaiming(rng, shape, fan_in, dtype):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    kind = "?"
    has_backward = True

    def params(self) -> Dict[str, np.ndarray]:
        return {}

    def grads(self) -> Dict[str, np.ndarray]:
        return {}

    def trainable(self) -> Tuple[str, ...]:
        return tuple(self.grads())

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def out_shape(self, shape):
        raise NotImplementedError


class Conv2dLayer(Layer):
    kind = "conv2d"

    def __init__(self, c_in, c_out, kernel, rng, dtype):
        k_f, k_t = kernel
        fan = c_in * k_f * k_t
        self.weight = _kaiming(rng, (c_out, c_in, k_f, k_t), fan, dtype)
        self.bias = _kaiming(rng, (c_out,), fan, dtype)
        self.padding = ((k_f - 1) // 2, (k_t - 1) // 2)
        self._g = {}
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return self._g

    def _p(self):
        return nn.Conv2dParams(self.weight, self.bias, padding=self.padding)

    def forward(self, x, train=False):
        if train:
            self._x = x
        return nn.conv2d(x, self._p())

    def backward(self, grad):
        d_x, d_w, d_b = nn.conv2d_grads(self._x, self._p(), grad)
        self._g = {"weight": d_w, "bias": d_b}
        return d_x

    def out_shape(self, shape):
        b, c, f, t = shape
        if c != self.weight.shape[1]:
            raise ShapeError(f"conv2d expects {self.weight.shape[1]} channels, got {c}")
        return (b, self.weight.shape[0], f, t)


class FdyLayer(Layer):
    kind = "fdy"

    def __init__(self, c_in, c_out, k, kernel, temperature, rng, dtype):
        self.layer = dynconv.make_fdy_layer(
            c_in, c_out, k=k, kernel=kernel, temperature=temperature, dtype=dtype, rng=rng
        )
        self._g = {}
        self._ctx = None

    def params(self):
        lay = self.layer
        return {
            "basis_w": lay.bank.weights,
            "basis_b": lay.bank.biases,
            "attn_a_w": lay.attn.conv_a_w,
            "attn_a_b": lay.attn.conv_a_b,
            "bn_gamma": lay.attn.bn.gamma,
            "bn_beta": lay.attn.bn.beta,
            "bn_rmean": lay.attn.bn.running_mean,
            "bn_rvar": lay.attn.bn.running_var,
            "attn_b_w": lay.attn.conv_b_w,
            "attn_b_b": lay.attn.conv_b_b,
        }

    def grads(self):
        return self._g

    def forward(self, x, train=False):
        self.layer.attn.bn.mode = "train" if train else "eval"
        if train:
            self._ctx = dynconv.FdyContext()
            return dynconv.fdy_forward_efficient(x, self.layer, ctx=self._ctx)
        return dynconv.fdy_forward_efficient(x, self.layer)

    def backward(self, grad):
        g = dynconv.fdy_backward(self.layer, grad, self._ctx)
        self._g = {
            "basis_w": g["d_weights"],
            "basis_b": g["d_biases"],
            "attn_a_w": g["d_conv_a_w"],
            "attn_a_b": g["d_conv_a_b"],
            "bn_gamma": g["d_gamma"],
            "bn_beta": g["d_beta"],
            "attn_b_w": g["d_conv_b_w"],
            "attn_b_b": g["d_conv_b_b"],
        }
        return g["d_x"]

    def out_shape(self, shape):
        b, c, f, t = shape
        w = self.layer.bank.weights
        if c != w.shape[2]:
            raise ShapeError(f"fdy expects {w.shape[2]} channels, got {c}")
        return (b, w.shape[1], f, t)


class BatchNormLayer(Layer):
    kind = "batchnorm"

    def __init__(self, channels, dtype):
        self.p = nn.BatchNormParams.identity(channels, dtype)
        self._g = {}
        self._x = None

    def params(self):
        return {
            "gamma": self.p.gamma,
            "beta": self.p.beta,
            "running_mean": self.p.running_mean,
            "running_var": self.p.running_var,
        }

    def grads(self):
        return self._g

    def forward(self, x, train=False):
        self.p.mode = "train" if train else "eval"
        if train:
            self._x = x
        return nn.batchnorm(x, self.p)

    def backward(self, grad):
        d_x, d_gamma, d_beta = nn.batchnorm_grads(self._x, self.p, grad)
        self._g = {"gamma": d_gamma, "beta": d_beta}
        return d_x

    def out_shape(self, shape):
        if shape[1] != self.p.gamma.shape[0]:
            raise ShapeError(f"batchnorm over {self.p.gamma.shape[0]} channels, input has {shape[1]}")
        return shape


class ReluLayer(Layer):
    kind = "relu"

    def __init__(self):
        self._x = None

    def forward(self, x, train=False):
        if train:
            self._x = x
        return nn.relu(x)

    def backward(self, grad):
        return nn.relu_grad(self._x, grad)

    def out_shape(self, shape):
        return shape


class SigmoidLayer(Layer):
    kind = "sigmoid"

    def __init__(self):
        self._y = None

    def forward(self, x, train=False):
        y = nn.sigmoid(x)
        if train:
            self._y = y
        return y

    def backward(self, grad):
        return grad * self._y * (1.0 - self._y)

    def out_shape(self, shape):
        return shape


class AvgPoolLayer(Layer):
    kind = "avgpool"

    def __init__(self, window):
        self.window = tuple(window)

    def forward(self, x, train=False):
        return nn.avgpool2d(x, self.window)

    def backward(self, grad):
        return nn.avgpool2d_grad(grad, self.window)

    def out_shape(self, shape):
        b, c, f, t = shape
        w_f, w_t = self.window
        if f % w_f or t % w_t:
            raise ShapeError(f"avgpool window {self.window} does not divide ({f},{t})")
        return (b, c, f // w_f, t // w_t)


class LinearLayer(Layer):
    """Per-time-frame affine map over the flattened (C, F) axes."""

    kind = "linear"

    def __init__(self, d_in, d_out, rng, dtype):
        self.weight = _kaiming(rng, (d_out, d_in), d_in, dtype)
        self.bias = _kaiming(rng, (d_out,), d_in, dtype)
        self._g = {}
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return self._g

    def forward(self, x, train=False):
        if train:
            self._x = x
        b, c, f, t = x.shape
        flat = x.reshape(b, c * f, t)
        out = np.einsum("bdt,od->bot", flat, self.weight, optimize=True) + self.bias[None, :, None]
        return out[:, :, None, :]  # [B, d_out, 1, T]

    def backward(self, grad):
        g = grad[:, :, 0, :]
        b, c, f, t = self._x.shape
        flat = self._x.reshape(b, c * f, t)
        self._g = {
            "weight": np.einsum("bot,bdt->od", g, flat, optimize=True),
            "bias": g.sum(axis=(0, 2)),
        }
        d_flat = np.einsum("bot,od->bdt", g, self.weight, optimize=True)
        return d_flat.reshape(b, c, f, t)

    def out_shape(self, shape):
        b, c, f, t = shape
        if c * f != self.weight.shape[1]:
            raise ShapeError(f"linear expects {self.weight.shape[1]} features, got {c}*{f}")
        return (b, self.weight.shape[0], 1, t)


class GruLayer(Layer):
    kind = "gru"
    has_backward = False

    def __init__(self, d_in, hidden, rng, dtype):
        def direction():
            return (
                _kaiming(rng, (3 * hidden, d_in), d_in, dtype),
                _kaiming(rng, (3 * hidden, hidden), hidden, dtype),
                _kaiming(rng, (3 * hidden,), d_in, dtype),
                _kaiming(rng, (3 * hidden,), hidden, dtype),
            )

        self.p = nn.GruParams(direction(), direction())
        self.hidden = hidden
        self.d_in = d_in

    def params(self):
        out = {}
        for tag, direction in (("fw", self.p.forward), ("bw", self.p.backward)):
            for pname, arr in zip(("w_ih", "w_hh", "b_ih", "b_hh"), direction):
                out[f"{tag}_{pname}"] = arr
        return out

    def forward(self, x, train=False):
        b, c, f, t = x.shape
        seq = x.reshape(b, c * f, t).transpose(0, 2, 1)
        out = nn.gru_forward(seq, self.p)
        return out.transpose(0, 2, 1)[:, :, None, :]

    def out_shape(self, shape):
        b, c, f, t = shape
        if c * f != self.d_in:
            raise ShapeError(f"gru expects {self.d_in} features, got {c}*{f}")
        return (b, 2 * self.hidden, 1, t)


class DyLayer(Layer):
    kind = "dy"
    has_backward = False

    def __init__(self, c_in, c_out, k, kernel, temperature, rng, dtype):
        fdy = dynconv.make_fdy_layer(c_in, c_out, k=k, kernel=kernel, temperature=temperature, dtype=dtype, rng=rng)
        self.bank = fdy.bank
        h = max(c_in // 4, k)
        self.attn = dynconv.DyAttention(
            fc1_w=_kaiming(rng, (h, c_in), c_in, dtype),
            fc1_b=np.zeros(h, dtype),
            fc2_w=np.zeros((k, h), dtype),
            fc2_b=np.zeros(k, dtype),
            temperature=temperature,
        )

    def params(self):
        return {
            "basis_w": self.bank.weights,
            "basis_b": self.bank.biases,
            "fc1_w": self.attn.fc1_w,
            "fc1_b": self.attn.fc1_b,
            "fc2_w": self.attn.fc2_w,
            "fc2_b": self.attn.fc2_b,
        }

    def forward(self, x, train=False):
        return dynconv.dy_forward(x, self.bank, self.attn)

    def out_shape(self, shape):
        b, c, f, t = shape
        if c != self.bank.weights.shape[2]:
            raise ShapeError(f"dy expects {self.bank.weights.shape[2]} channels, got {c}")
        return (b, self.bank.weights.shape[1], f, t)


class TdyLayer(Layer):
    kind = "tdy"
    has_backward = False

    def __init__(self, c_in, c_out, k, kernel, temperature, rng, dtype):
        fdy = dynconv.make_fdy_layer(c_in, c_out, k=k, kernel=kernel, temperature=temperature, dtype=dtype, rng=rng)
        self.bank = fdy.bank
        self.attn = dynconv.TdyAttention(
            conv_a_w=fdy.attn.conv_a_w.copy(),
            conv_a_b=fdy.attn.conv_a_b.copy(),
            bn=nn.BatchNormParams.identity(fdy.attn.conv_a_w.shape[0], dtype),
            conv_b_w=fdy.attn.conv_b_w.copy(),
            conv_b_b=fdy.attn.conv_b_b.copy(),
            temperature=temperature,
        )

    def params(self):
        return {
            "basis_w": self.bank.weights,
            "basis_b": self.bank.biases,
            "attn_a_w": self.attn.conv_a_w,
            "attn_a_b": self.attn.conv_a_b,
            "bn_gamma": self.attn.bn.gamma,
            "bn_beta": self.attn.bn.beta,
            "bn_rmean": self.attn.bn.running_mean,
            "bn_rvar": self.attn.bn.running_var,
            "attn_b_w": self.attn.conv_b_w,
            "attn_b_b": self.attn.conv_b_b,
        }

    def forward(self, x, train=False):
        self.attn.bn.mode = "train" if train else "eval"
        return dynconv.tdy_forward(x, self.bank, self.attn)

    def out_shape(self, shape):
        b, c, f, t = shape
        if c != self.bank.weights.shape[2]:
            raise ShapeError(f"tdy expects {self.bank.weights.shape[2]} channels, got {c}")
        return (b, self.bank.weights.shape[1], f, t)


class Model:
    def __init__(self, cfg: ModelConfig, layers: List[Tuple[str, Layer]]):
        self.cfg = cfg
        self.layers = layers

    def named_params(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for name, layer in self.layers:
            for pname, arr in layer.params().items():
                out[f"{name}.{pname}"] = arr
        return out

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """[B, C, F, T] -> frame scores [B, classes, T_out]."""
        if x.ndim != 4:
            raise ShapeError(f"expected 4D input, got {x.shape}")
        for name, layer in self.layers:
            try:
                x = layer.forward(x, train=train)
            except ShapeError as exc:
                raise ShapeError(f"layer {name}: {exc}") from exc
        if x.ndim == 4:
            if x.shape[2] != 1:
                raise ShapeError(f"final frequency axis not collapsed: {x.shape}")
            x = x[:, :, 0, :]
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = grad[:, :, None, :]
        for name, layer in reversed(self.layers):
            if not layer.has_backward:
                raise ConfigError(f"layer {name} ({layer.kind}) has no backward pass")
            g = layer.backward(g)
        return g

    def sgd_step(self, lr: float) -> None:
        for _, layer in self.layers:
            params, grads = layer.params(), layer.grads()
            for pname in layer.trainable():
                params[pname] -= lr * grads[pname]


def build_model(cfg: ModelConfig, seed: int, dtype=np.float64) -> Model:
    """Deterministically initialize a model from its config.

    Rejects configs that violate the placement rule (a dynamic layer may
    not be the first convolutional layer) or whose shapes do not chain.
    """
    has_dynamic = any(s.kind in _DYNAMIC_KINDS for s in cfg.layers)
    for idx, s in enumerate(cfg.layers):
        if s.kind not in _KNOWN_KINDS:
            raise ConfigError(f"layer {idx}: unknown kind {s.kind!r}")
        if s.kind in _CONV_KINDS:
            if has_dynamic and s.kind != "conv2d":
                raise ConfigError(f"layer {idx}: first convolutional layer must be conv2d, got {s.kind!r}")
            break

    rng = np.random.default_rng(seed)
    shape = (1, cfg.in_channels, cfg.n_mels, 8)  # symbolic batch/time
    layers: List[Tuple[str, Layer]] = []
    counts: Dict[str, int] = {}
    for idx, s in enumerate(cfg.layers):
        kind, p = s.kind, s.params
        c = shape[1]
        if kind == "conv2d":
            layer = Conv2dLayer(c, p["out_channels"], tuple(p.get("kernel", (3, 3))), rng, dtype)
        elif kind == "fdy":
            layer = FdyLayer(
                c, p["out_channels"], p.get("k", cfg.dynamic_k), tuple(p.get("kernel", (3, 3))),
                p.get("temperature", cfg.temperature), rng, dtype,
            )
        elif kind == "dy":
            layer = DyLayer(
                c, p["out_channels"], p.get("k", cfg.dynamic_k), tuple(p.get("kernel", (3, 3))),
                p.get("temperature", cfg.temperature), rng, dtype,
            )
        elif kind == "tdy":
            layer = TdyLayer(
                c, p["out_channels"], p.get("k", cfg.dynamic_k), tuple(p.get("kernel", (3, 3))),
                p.get("temperature", cfg.temperature), rng, dtype,
            )
        elif kind == "batchnorm":
            layer = BatchNormLayer(c, dtype)
        elif kind == "relu":
            layer = ReluLayer()
        elif kind == "sigmoid":
            layer = SigmoidLayer()
        elif kind == "avgpool":
            layer = AvgPoolLayer(p["window"])
        elif kind == "linear":
            layer = LinearLayer(shape[1] * shape[2], p.get("out", cfg.class_count), rng, dtype)
        elif kind == "gru":
            layer = GruLayer(shape[1] * shape[2], p["hidden"], rng, dtype)
        counts[kind] = counts.get(kind, 0) + 1
        name = f"{kind}{counts[kind]}"
        try:
            shape = layer.out_shape(shape)
        except ShapeError as exc:
            raise ConfigError(f"layer {idx} ({name}): {exc}") from exc
        layers.append((name, layer))
    return Model(cfg, layers)


def save_weights(model: Model, path) -> None:
    serialization.save_arrays(path, model.named_params())


def load_weights(model: Model, path) -> None:
    from .errors import ManifestError

    stored = serialization.load_arrays(path)
    params = model.named_params()
    if list(stored) != list(params):
        missing = set(params) - set(stored)
        extra = set(stored) - set(params)
        raise ManifestError(f"manifest does not match model (missing={sorted(missing)}, extra={sorted(extra)})")
    for name, arr in stored.items():
        target = params[name]
        if arr.shape != target.shape or arr.dtype != target.dtype:
            raise ManifestError(
                f"entry {name!r}: stored {arr.dtype}{arr.shape} vs model {target.dtype}{target.shape}"
            )
        target[...] = arr


# ---------------------------------------------------------------------------
# Toy training
# ---------------------------------------------------------------------------


def bce_loss(scores: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    """Binary cross-entropy over frame scores [B, classes, T] with clip-level
    targets [B, classes]; returns (loss, d_scores)."""
    s = np.clip(scores, 1e-7, 1.0 - 1e-7)
    y = targets[:, :, None]
    n = s.size
    loss = -(y * np.log(s) + (1.0 - y) * np.log(1.0 - s)).sum() / n
    d_s = (s - y) / (s * (1.0 - s)) / n
    return float(loss), d_s


def toy_train(model: Model, dataset, steps: int, lr: float) -> List[float]:
    """Plain SGD on BCE. `dataset` is a list of (x [B,C,F,T], y [B,classes])
    batches, cycled in order; deterministic given the built model."""
    for name, layer in model.layers:
        if not layer.has_backward:
            raise ConfigError(f"toy_train cannot train layer {name} ({layer.kind})")
    trace: List[float] = []
    for step in range(steps):
        x, y = dataset[step % len(dataset)]
        scores = model.forward(x, train=True)
        loss, d_s = bce_loss(scores, y)
        model.backward(d_s)
        model.sgd_step(lr)
        trace.append(loss)
    return trace


def accuracy(model: Model, dataset) -> float:
    correct = total = 0
    for x, y in dataset:
        scores = model.forward(x)
        pred = scores.mean(axis=2).argmax(axis=1)
        correct += int((pred == y.argmax(axis=1)).sum())
        total += y.shape[0]
    return correct / total


def make_band_dataset(
    n: int, seed: int, f_bins: int = 32, t_bins: int = 16, batch: int = 8, dtype=np.float64
):
    """Synthetic band-location task: one 3x3 burst per clip, placed in the
    lower or upper half of the frequency axis; the label is the half."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for _ in range(n):
        x = np.zeros((1, f_bins, t_bins), dtype)
        label = int(rng.integers(2))
        lo = 0 if label == 0 else f_bins // 2
        f0 = int(rng.integers(lo + 1, lo + f_bins // 2 - 4))
        t0 = int(rng.integers(1, t_bins - 4))
        x[0, f0 : f0 + 3, t0 : t0 + 3] = 1.0 + 0.1 * rng.standard_normal((3, 3))
        y = np.zeros(2, dtype)
        y[label] = 1.0
        xs.append(x)
        ys.append(y)
    batches = []
    for i in range(0, n, batch):
        batches.append((np.stack(xs[i : i + batch]), np.stack(ys[i : i + batch])))
    return batches


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def default_config(class_count: int = 10, n_mels: int = 128) -> ModelConfig:
    """Shape-faithful miniature of an SED conv stack: one static conv, then
    dynamic blocks with frequency pooling, frame-wise classifier head."""
    layers = [
        LayerSpec("conv2d", {"out_channels": 16}),
        LayerSpec("fdy", {"out_channels": 32}),
        LayerSpec("batchnorm"),
        LayerSpec("relu"),
        LayerSpec("avgpool", {"window": (2, 1)}),
        LayerSpec("fdy", {"out_channels": 32}),
        LayerSpec("batchnorm"),
        LayerSpec("relu"),
        LayerSpec("avgpool", {"window": (2, 1)}),
        LayerSpec("fdy", {"out_channels": 32}),
        LayerSpec("batchnorm"),
        LayerSpec("relu"),
        LayerSpec("avgpool", {"window": (2, 1)}),
        LayerSpec("fdy", {"out_channels": 64}),
        LayerSpec("avgpool", {"window": (n_mels // 8, 1)}),
        LayerSpec("linear"),
        LayerSpec("sigmoid"),
    ]
    return ModelConfig(layers=layers, class_count=class_count, n_mels=n_mels)


def band_config(f_bins: int = 32) -> ModelConfig:
    """Mini FDY model for the band-location task (well under 50k parameters)."""
    layers = [
        LayerSpec("conv2d", {"out_channels": 8}),
        LayerSpec("relu"),
        LayerSpec("fdy", {"out_channels": 16}),
        LayerSpec("batchnorm"),
        LayerSpec("relu"),
        LayerSpec("avgpool", {"window": (2, 2)}),
        LayerSpec("fdy", {"out_channels": 16}),
        LayerSpec("batchnorm"),
        LayerSpec("relu"),
        LayerSpec("avgpool", {"window": (2, 2)}),
        LayerSpec("linear", {"out": 2}),
        LayerSpec("sigmoid"),
    ]
    return ModelConfig(layers=layers, class_count=2, n_mels=f_bins)


def param_count(model: Model) -> int:
    return sum(int(a.size) for a in model.named_params().values())
