"""Static neural-network building blocks.

Convolution here is cross-correlation (no kernel flip), the deep-learning
convention. Activations follow the [B, C, F, T] axis order. Forward
functions are pure; the gradient helpers recompute what they need from
(input, params, upstream) so no hidden state is carried between calls.
Batchnorm in train mode is the one exception: it updates running
statistics in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError

# ---------------------------------------------------------------------------
# 2D convolution
# ---------------------------------------------------------------------------


@dataclass
class Conv2dParams:
    weight: np.ndarray  # [C_out, C_in, k_f, k_t]
    bias: np.ndarray  # [C_out]
    stride: Tuple[int, int] = (1, 1)
    padding: Tuple[int, int] = (0, 0)
    padding_mode: str = "zeros"  # "zeros" | "circular", or "mode_f,mode_t"

    def pad_modes(self) -> Tuple[str, str]:
        if "," in self.padding_mode:
            mf, mt = self.padding_mode.split(",")
        else:
            mf = mt = self.padding_mode
        for m in (mf, mt):
            if m not in ("zeros", "circular"):
                raise ConfigError(f"unknown padding mode {m!r}")
        return mf, mt


def _pad_axis(x: np.ndarray, axis: int, amount: int, mode: str) -> np.ndarray:
    if amount == 0:
        return x
    width = [(0, 0)] * x.ndim
    width[axis] = (amount, amount)
    if mode == "zeros":
        return np.pad(x, width)
    return np.pad(x, width, mode="wrap")


def pad2d(x: np.ndarray, padding: Tuple[int, int], modes: Tuple[str, str]) -> np.ndarray:
    x = _pad_axis(x, 2, padding[0], modes[0])
    return _pad_axis(x, 3, padding[1], modes[1])


def im2col(xp: np.ndarray, k_f: int, k_t: int, stride: Tuple[int, int]) -> np.ndarray:
    """Padded input [B,C,Fp,Tp] -> windows [B, F', T', C*k_f*k_t]."""
    win = sliding_window_view(xp, (k_f, k_t), axis=(2, 3))
    win = win[:, :, :: stride[0], :: stride[1]]  # [B,C,F',T',kf,kt]
    b, c, fo, to, kf, kt = win.shape
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, fo, to, c * kf * kt)


def conv2d(x: np.ndarray, p: Conv2dParams) -> np.ndarray:
    """Strided 2D cross-correlation, [B,C_in,F,T] -> [B,C_out,F',T']."""
    if x.ndim != 4:
        raise ShapeError(f"expected 4D input, got shape {x.shape}")
    c_out, c_in, k_f, k_t = p.weight.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"input channels {x.shape[1]} != kernel channels {c_in}")
    xp = pad2d(x, p.padding, p.pad_modes())
    if xp.shape[2] < k_f or xp.shape[3] < k_t:
        raise ShapeError("padded extents smaller than kernel extents")
    cols = im2col(xp, k_f, k_t, p.stride)
    out = cols @ p.weight.reshape(c_out, -1).T + p.bias
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_grads(x: np.ndarray, p: Conv2dParams, grad: np.ndarray):
    """Gradients of `conv2d` w.r.t. input, weight and bias.

    Supports stride (1,1) and zero padding, which is all training needs
    (downsampling happens in pooling layers).
    """
    if p.stride != (1, 1):
        raise ConfigError("conv2d_grads requires stride (1,1)")
    if p.pad_modes() != ("zeros", "zeros"):
        raise ConfigError("conv2d_grads requires zero padding")
    c_out, c_in, k_f, k_t = p.weight.shape
    p_f, p_t = p.padding
    xp = pad2d(x, p.padding, ("zeros", "zeros"))

    d_bias = grad.sum(axis=(0, 2, 3))
    # d_W[o,c,i,j] = sum_{b,f,t} xp[b,c,f+i,t+j] * grad[b,o,f,t]
    win = sliding_window_view(xp, grad.shape[2:], axis=(2, 3))  # [B,C,kf,kt,F',T']
    d_weight = np.einsum("bcijft,boft->ocij", win, grad, optimize=True)

    # d_x: full correlation of grad with the spatially flipped kernel.
    gp = pad2d(grad, (k_f - 1, k_t - 1), ("zeros", "zeros"))
    gwin = sliding_window_view(gp, (k_f, k_t), axis=(2, 3))  # [B,Cout,Fp,Tp,kf,kt]
    w_flip = p.weight[:, :, ::-1, ::-1]
    d_xp = np.einsum("boftij,ocij->bcft", gwin, w_flip, optimize=True)
    f_in, t_in = x.shape[2], x.shape[3]
    d_x = d_xp[:, :, p_f : p_f + f_in, p_t : p_t + t_in]
    return d_x, d_weight, d_bias


# ---------------------------------------------------------------------------
# 1D convolution along the frequency axis
# ---------------------------------------------------------------------------


def conv1d_freq(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded 1D cross-correlation along F, [B,C_in,F] -> [B,C_out,F].

    Mixes channels; kernel width must be odd so "same" padding is symmetric.
    """
    c_out, c_in, k = weight.shape
    if k % 2 == 0:
        raise ConfigError(f"kernel width must be odd, got {k}")
    if x.ndim != 3 or x.shape[1] != c_in:
        raise ShapeError(f"expected [B,{c_in},F], got {x.shape}")
    p = Conv2dParams(weight[:, :, :, None], bias, padding=((k - 1) // 2, 0))
    return conv2d(x[:, :, :, None], p)[:, :, :, 0]


def conv1d_freq_grads(x: np.ndarray, weight: np.ndarray, grad: np.ndarray):
    k = weight.shape[2]
    p = Conv2dParams(weight[:, :, :, None], np.zeros(weight.shape[0], weight.dtype), padding=((k - 1) // 2, 0))
    d_x, d_w, d_b = conv2d_grads(x[:, :, :, None], p, grad[:, :, :, None])
    return d_x[:, :, :, 0], d_w[:, :, :, 0], d_b


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    mode: str = "train"  # "train" | "eval"

    @classmethod
    def identity(cls, channels: int, dtype=np.float64, mode: str = "train") -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            mode=mode,
        )


def _bn_axes(x: np.ndarray) -> tuple:
    # channel axis is 1; normalize over everything else
    return (0,) + tuple(range(2, x.ndim))


def _bn_bcast(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def batchnorm(x: np.ndarray, p: BatchNormParams, update_running: bool = True) -> np.ndarray:
    """Normalize over all non-channel axes, then scale/shift by gamma/beta.

    Train mode uses batch statistics (biased variance) and, unless
    `update_running` is False, folds them into the running statistics
    with the configured momentum.
    """
    if x.shape[1] != p.gamma.shape[0]:
        raise ShapeError(f"channel extent {x.shape[1]} != param length {p.gamma.shape[0]}")
    axes = _bn_axes(x)
    n = int(np.prod([x.shape[a] for a in axes]))
    if n == 0:
        raise ShapeError("empty normalization set")
    if p.mode == "train":
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if update_running:
            p.running_mean[...] = (1 - p.momentum) * p.running_mean + p.momentum * mean
            p.running_var[...] = (1 - p.momentum) * p.running_var + p.momentum * var
    else:
        mean, var = p.running_mean, p.running_var
    nd = x.ndim
    xhat = (x - _bn_bcast(mean, nd)) / np.sqrt(_bn_bcast(var, nd) + p.eps)
    return _bn_bcast(p.gamma, nd) * xhat + _bn_bcast(p.beta, nd)


def batchnorm_grads(x: np.ndarray, p: BatchNormParams, grad: np.ndarray):
    """Train-mode gradients including the batch-statistics terms."""
    if p.mode != "train":
        raise ConfigError("batchnorm_grads is defined for train mode")
    axes = _bn_axes(x)
    n = int(np.prod([x.shape[a] for a in axes]))
    nd = x.ndim
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - _bn_bcast(mean, nd)) * _bn_bcast(inv_std, nd)

    d_gamma = (grad * xhat).sum(axis=axes)
    d_beta = grad.sum(axis=axes)
    d_xhat = grad * _bn_bcast(p.gamma, nd)
    d_x = (
        _bn_bcast(inv_std, nd)
        / n
        * (n * d_xhat - _bn_bcast(d_xhat.sum(axis=axes), nd) - xhat * _bn_bcast((d_xhat * xhat).sum(axis=axes), nd))
    )
    return d_x, d_gamma, d_beta


# ---------------------------------------------------------------------------
# Pointwise / pooling / softmax
# ---------------------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_grad(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def avgpool2d(x: np.ndarray, window: Tuple[int, int]) -> np.ndarray:
    """Non-overlapping window means over (F, T); windows must tile exactly."""
    w_f, w_t = window
    b, c, f, t = x.shape
    if f % w_f or t % w_t:
        raise ShapeError(f"window {window} does not divide extents ({f},{t})")
    return x.reshape(b, c, f // w_f, w_f, t // w_t, w_t).mean(axis=(3, 5))


def avgpool2d_grad(grad: np.ndarray, window: Tuple[int, int]) -> np.ndarray:
    w_f, w_t = window
    scale = 1.0 / (w_f * w_t)
    g = np.repeat(np.repeat(grad, w_f, axis=2), w_t, axis=3)
    return g * scale


def softmax_temperature(logits: np.ndarray, axis: int, temperature: float) -> np.ndarray:
    """softmax(logits / temperature) along `axis`, max-subtracted for stability."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    z = (logits - logits.max(axis=axis, keepdims=True)) / temperature
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_temperature_grad(pi: np.ndarray, grad: np.ndarray, axis: int, temperature: float) -> np.ndarray:
    inner = (grad * pi).sum(axis=axis, keepdims=True)
    return pi * (grad - inner) / temperature


# ---------------------------------------------------------------------------
# Forward-only bidirectional GRU
# ---------------------------------------------------------------------------


@dataclass
class GruParams:
    """One direction holds (w_ih [3H,D], w_hh [3H,H], b_ih [3H], b_hh [3H]);
    gate order is (reset, update, candidate)."""

    forward: tuple
    backward: tuple
    hidden: int = field(default=0)

    def __post_init__(self):
        if self.hidden == 0:
            self.hidden = self.forward[1].shape[1]


def _gru_direction(x: np.ndarray, params: tuple, reverse: bool) -> np.ndarray:
    w_ih, w_hh, b_ih, b_hh = params
    h_dim = w_hh.shape[1]
    b, t_len, _ = x.shape
    h = np.zeros((b, h_dim), dtype=x.dtype)
    out = np.zeros((b, t_len, h_dim), dtype=x.dtype)
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in steps:
        gi = x[:, t, :] @ w_ih.T + b_ih
        gh = h @ w_hh.T + b_hh
        i_r, i_z, i_n = np.split(gi, 3, axis=1)
        h_r, h_z, h_n = np.split(gh, 3, axis=1)
        r = sigmoid(i_r + h_r)
        z = sigmoid(i_z + h_z)
        n = np.tanh(i_n + r * h_n)
        h = (1 - z) * n + z * h
        out[:, t, :] = h
    return out


def gru_forward(x: np.ndarray, params: GruParams) -> np.ndarray:
    """Bidirectional GRU, [B,T,D] -> [B,T,2H]; forward pass only."""
    if x.ndim != 3:
        raise ShapeError(f"expected [B,T,D], got {x.shape}")
    fwd = _gru_direction(x, params.forward, reverse=False)
    bwd = _gru_direction(x, params.backward, reverse=True)
    return np.concatenate([fwd, bwd], axis=2)
