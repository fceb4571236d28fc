"""Frequency dynamic convolution and the content-adaptive baselines.

An FDY layer keeps K basis kernels and computes, per input, a
frequency-resolved attention distribution over them. Two execution paths
are provided: the definitional one that assembles a kernel per output
frequency row (`fdy_forward_naive`) and the optimized one that convolves
with every basis kernel once and mixes the outputs (`fdy_forward_efficient`).
Both must agree to numerical precision; the verification suites lean on
that. `dy_forward` (one kernel per input) and `tdy_forward` (one kernel
per time frame) are comparison baselines with the pooling axes swapped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, ShapeError
from . import nn
from .nn import BatchNormParams, Conv2dParams


@dataclass
class BasisKernelBank:
    weights: np.ndarray  # [K, C_out, C_in, k_f, k_t]
    biases: np.ndarray  # [K, C_out]

    def __post_init__(self):
        if self.weights.ndim != 5:
            raise ShapeError(f"basis weights must be 5D, got {self.weights.shape}")
        if self.weights.shape[0] < 2:
            raise ConfigError("need at least 2 basis kernels")
        if self.biases.shape != self.weights.shape[:2]:
            raise ShapeError("biases must be [K, C_out]")

    @property
    def k(self) -> int:
        return self.weights.shape[0]


@dataclass
class AttentionBranch:
    conv_a_w: np.ndarray  # [C_hidden, C_in, k]
    conv_a_b: np.ndarray  # [C_hidden]
    bn: BatchNormParams  # over C_hidden
    conv_b_w: np.ndarray  # [K, C_hidden, k]
    conv_b_b: np.ndarray  # [K]
    temperature: float = 31.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.conv_b_w.shape[1] != self.conv_a_w.shape[0]:
            raise ShapeError("hidden widths of the two 1D convs disagree")


@dataclass
class FdyConvLayer:
    bank: BasisKernelBank
    attn: AttentionBranch
    stride_t: int = 1
    pad_mode_f: str = "zeros"
    pad_mode_t: str = "zeros"

    def __post_init__(self):
        if self.attn.conv_b_w.shape[0] != self.bank.k:
            raise ShapeError("attention output channels must equal number of basis kernels")


@dataclass
class FdyContext:
    """Intermediates retained by a forward call for the paired backward."""

    x: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    a1: Optional[np.ndarray] = None
    bn_out: Optional[np.ndarray] = None
    pi: Optional[np.ndarray] = None
    yi: Optional[np.ndarray] = None

    @property
    def filled(self) -> bool:
        return self.pi is not None and self.yi is not None


def _time_mean(x: np.ndarray) -> np.ndarray:
    # Sorting before summation makes the pooled value bitwise invariant
    # under any permutation of time frames (fixed accumulation order).
    # The layout must be forced contiguous: numpy's pairwise summation
    # blocks differently on strided arrays.
    s = np.ascontiguousarray(np.sort(x, axis=3))
    return s.sum(axis=3) / x.shape[3]


def attention_weights(
    x: np.ndarray,
    attn: AttentionBranch,
    ctx: Optional[FdyContext] = None,
    skip_normalize: bool = False,
) -> np.ndarray:
    """Frequency-resolved attention over basis kernels, [B,C,F,T] -> [B,K,F].

    Pipeline: mean over time, 1D conv over F, batchnorm + ReLU, 1D conv
    down to K channels, temperature softmax over K. Output rows lie on
    the probability simplex. `skip_normalize` exists only for the fault
    injection harness of the verify CLI.
    """
    if x.ndim != 4 or x.shape[1] != attn.conv_a_w.shape[1]:
        raise ShapeError(f"expected [B,{attn.conv_a_w.shape[1]},F,T], got {x.shape}")
    m = _time_mean(x)
    a1 = nn.conv1d_freq(m, attn.conv_a_w, attn.conv_a_b)
    bn_out = nn.batchnorm(a1, attn.bn)
    r = nn.relu(bn_out)
    a2 = nn.conv1d_freq(r, attn.conv_b_w, attn.conv_b_b)
    if skip_normalize:
        pi = np.exp(a2 / attn.temperature)
    else:
        pi = nn.softmax_temperature(a2, axis=1, temperature=attn.temperature)
    if ctx is not None:
        ctx.x, ctx.m, ctx.a1, ctx.bn_out, ctx.pi = x, m, a1, bn_out, pi
    return pi


def _same_padding(layer: FdyConvLayer) -> Tuple[int, int]:
    k_f, k_t = layer.bank.weights.shape[3], layer.bank.weights.shape[4]
    if k_f % 2 == 0 or k_t % 2 == 0:
        raise ConfigError("same padding requires odd kernel extents")
    return (k_f - 1) // 2, (k_t - 1) // 2


def _basis_outputs(x: np.ndarray, layer: FdyConvLayer) -> np.ndarray:
    """Convolve with all K basis kernels at once -> [B,K,C_out,F,T']."""
    k, c_out, c_in, k_f, k_t = layer.bank.weights.shape
    p_f, p_t = _same_padding(layer)
    p = Conv2dParams(
        layer.bank.weights.reshape(k * c_out, c_in, k_f, k_t),
        layer.bank.biases.reshape(-1),
        stride=(1, layer.stride_t),
        padding=(p_f, p_t),
        padding_mode=f"{layer.pad_mode_f},{layer.pad_mode_t}",
    )
    y = nn.conv2d(x, p)
    b = x.shape[0]
    return y.reshape(b, k, c_out, y.shape[2], y.shape[3])


def fdy_forward_efficient(x: np.ndarray, layer: FdyConvLayer, ctx: Optional[FdyContext] = None) -> np.ndarray:
    """Optimized path: per-basis convolutions, then attention-weighted sum."""
    pi = attention_weights(x, layer.attn, ctx=ctx)
    yi = _basis_outputs(x, layer)
    if yi.shape[3] != pi.shape[2]:
        raise AssertionError("output frequency axis misaligned with attention weights")
    if ctx is not None:
        ctx.yi = yi
    return np.einsum("bkcft,bkf->bcft", yi, pi, optimize=True)


def fdy_forward_naive(x: np.ndarray, layer: FdyConvLayer) -> np.ndarray:
    """Definitional path: assemble the attention-weighted kernel at every
    output frequency row, then convolve that row with it."""
    pi = attention_weights(x, layer.attn)
    w = layer.bank.weights
    k, c_out, c_in, k_f, k_t = w.shape
    p_f, p_t = _same_padding(layer)
    xp = nn.pad2d(x, (p_f, p_t), (layer.pad_mode_f, layer.pad_mode_t))
    win = sliding_window_view(xp, (k_f, k_t), axis=(2, 3))[:, :, :, :: layer.stride_t]
    b, _, f_out, t_out = win.shape[:4]
    y = np.zeros((b, c_out, f_out, t_out), dtype=x.dtype)
    for f in range(f_out):
        w_f = np.einsum("bk,kocij->bocij", pi[:, :, f], w)
        b_f = pi[:, :, f] @ layer.bank.biases
        y[:, :, f, :] = np.einsum("bctij,bocij->bot", win[:, :, f], w_f) + b_f[:, :, None]
    return y


def fdy_backward(layer: FdyConvLayer, upstream: np.ndarray, ctx: FdyContext) -> dict:
    """Analytic gradients of the efficient path.

    Requires the intermediates of a paired `fdy_forward_efficient` call.
    Returns d_x plus gradients for the basis bank and every attention
    branch parameter. Assumes stride 1, zero padding, train-mode
    batchnorm (what training uses).
    """
    if not ctx.filled:
        raise ContractError("fdy_backward needs intermediates from a paired forward call")
    if layer.stride_t != 1 or (layer.pad_mode_f, layer.pad_mode_t) != ("zeros", "zeros"):
        raise ConfigError("fdy_backward supports stride 1 and zero padding")
    x, pi, yi = ctx.x, ctx.pi, ctx.yi
    attn = layer.attn
    k, c_out, c_in, k_f, k_t = layer.bank.weights.shape
    p_f, p_t = _same_padding(layer)
    t_len = x.shape[3]

    # main path: y = sum_i pi_i * y_i
    d_yi = np.einsum("bcft,bkf->bkcft", upstream, pi)
    b = x.shape[0]
    p = Conv2dParams(
        layer.bank.weights.reshape(k * c_out, c_in, k_f, k_t),
        layer.bank.biases.reshape(-1),
        padding=(p_f, p_t),
    )
    d_x, d_w, d_b = nn.conv2d_grads(x, p, d_yi.reshape(b, k * c_out, *d_yi.shape[3:]))
    d_weights = d_w.reshape(k, c_out, c_in, k_f, k_t)
    d_biases = d_b.reshape(k, c_out)

    # attention path: d_pi then chain back through the branch
    d_pi = np.einsum("bcft,bkcft->bkf", upstream, yi)
    d_a2 = nn.softmax_temperature_grad(pi, d_pi, axis=1, temperature=attn.temperature)
    r = nn.relu(ctx.bn_out)
    d_r, d_conv_b_w, d_conv_b_b = nn.conv1d_freq_grads(r, attn.conv_b_w, d_a2)
    d_bn = nn.relu_grad(ctx.bn_out, d_r)
    d_a1, d_gamma, d_beta = nn.batchnorm_grads(ctx.a1, attn.bn, d_bn)
    d_m, d_conv_a_w, d_conv_a_b = nn.conv1d_freq_grads(ctx.m, attn.conv_a_w, d_a1)
    d_x = d_x + d_m[:, :, :, None] / t_len

    return {
        "d_x": d_x,
        "d_weights": d_weights,
        "d_biases": d_biases,
        "d_conv_a_w": d_conv_a_w,
        "d_conv_a_b": d_conv_a_b,
        "d_gamma": d_gamma,
        "d_beta": d_beta,
        "d_conv_b_w": d_conv_b_w,
        "d_conv_b_b": d_conv_b_b,
    }


# ---------------------------------------------------------------------------
# Baselines: input-adaptive (DY) and time-adaptive (TDY) kernels
# ---------------------------------------------------------------------------


@dataclass
class DyAttention:
    fc1_w: np.ndarray  # [C_hidden, C_in]
    fc1_b: np.ndarray
    fc2_w: np.ndarray  # [K, C_hidden]
    fc2_b: np.ndarray
    temperature: float = 31.0


def dy_forward(x: np.ndarray, bank: BasisKernelBank, attn: DyAttention) -> np.ndarray:
    """One scalar attention weight per (sample, basis kernel): global average
    pool, two FC stages with ReLU between, temperature softmax."""
    pooled = x.mean(axis=(2, 3))  # [B, C_in]
    h = nn.relu(pooled @ attn.fc1_w.T + attn.fc1_b)
    logits = h @ attn.fc2_w.T + attn.fc2_b  # [B, K]
    pi = nn.softmax_temperature(logits, axis=1, temperature=attn.temperature)
    yi = _basis_outputs(x, FdyConvLayer(bank, _dummy_branch(bank, x.shape[1], x.dtype)))
    return np.einsum("bkcft,bk->bcft", yi, pi, optimize=True)


@dataclass
class TdyAttention:
    conv_a_w: np.ndarray  # [C_hidden, C_in, k], conv along time
    conv_a_b: np.ndarray
    bn: BatchNormParams
    conv_b_w: np.ndarray  # [K, C_hidden, k]
    conv_b_b: np.ndarray
    temperature: float = 31.0


def tdy_attention_weights(x: np.ndarray, attn: TdyAttention) -> np.ndarray:
    """[B,C,F,T] -> pi [B,K,T]; mirror of the frequency branch with the
    pooling axis swapped (mean over F, 1D convs along T)."""
    m = np.ascontiguousarray(np.sort(x, axis=2)).sum(axis=2) / x.shape[2]  # [B, C, T]
    a1 = nn.conv1d_freq(m, attn.conv_a_w, attn.conv_a_b)
    r = nn.relu(nn.batchnorm(a1, attn.bn))
    a2 = nn.conv1d_freq(r, attn.conv_b_w, attn.conv_b_b)
    return nn.softmax_temperature(a2, axis=1, temperature=attn.temperature)


def tdy_forward(x: np.ndarray, bank: BasisKernelBank, attn: TdyAttention) -> np.ndarray:
    """Time-adaptive mixing: y(b,c,f,t) = sum_i pi_i(b,t) y_i(b,c,f,t).
    Requires time stride 1 with same padding so pi aligns with T'."""
    pi = tdy_attention_weights(x, attn)
    yi = _basis_outputs(x, FdyConvLayer(bank, _dummy_branch(bank, x.shape[1], x.dtype)))
    if yi.shape[4] != pi.shape[2]:
        raise ShapeError("tdy needs time stride 1 / same padding")
    return np.einsum("bkcft,bkt->bcft", yi, pi, optimize=True)


def _dummy_branch(bank: BasisKernelBank, c_in: int, dtype) -> AttentionBranch:
    # shape-only placeholder so _basis_outputs can reuse FdyConvLayer
    h = max(c_in // 4, bank.k)
    return AttentionBranch(
        conv_a_w=np.zeros((h, c_in, 3), dtype),
        conv_a_b=np.zeros(h, dtype),
        bn=BatchNormParams.identity(h, dtype),
        conv_b_w=np.zeros((bank.k, h, 3), dtype),
        conv_b_b=np.zeros(bank.k, dtype),
    )


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def make_fdy_layer(
    c_in: int,
    c_out: int,
    k: int = 4,
    kernel: Tuple[int, int] = (3, 3),
    temperature: float = 31.0,
    c_hidden: Optional[int] = None,
    attn_kernel: int = 3,
    stride_t: int = 1,
    dtype=np.float64,
    rng: Optional[np.random.Generator] = None,
    random_attention: bool = False,
) -> FdyConvLayer:
    """Build an FDY layer with Kaiming-uniform basis kernels.

    By default the last attention conv starts at zero so the initial
    attention is exactly uniform over basis kernels (stable training
    start). `random_attention=True` randomizes the whole branch instead;
    the verification suites use that to expose frequency adaptivity.
    """
    rng = rng or np.random.default_rng(0)
    if c_hidden is None:
        c_hidden = max(c_in // 4, k)
    k_f, k_t = kernel
    fan = c_in * k_f * k_t
    weights = _kaiming_uniform(rng, (k, c_out, c_in, k_f, k_t), fan, dtype)
    biases = _kaiming_uniform(rng, (k, c_out), fan, dtype)
    bank = BasisKernelBank(weights, biases)

    conv_a_w = _kaiming_uniform(rng, (c_hidden, c_in, attn_kernel), c_in * attn_kernel, dtype)
    conv_a_b = np.zeros(c_hidden, dtype)
    if random_attention:
        conv_b_w = rng.standard_normal((k, c_hidden, attn_kernel)).astype(dtype)
        conv_b_b = rng.standard_normal(k).astype(dtype)
        conv_a_w = rng.standard_normal((c_hidden, c_in, attn_kernel)).astype(dtype)
    else:
        conv_b_w = np.zeros((k, c_hidden, attn_kernel), dtype)
        conv_b_b = np.zeros(k, dtype)
    attn = AttentionBranch(
        conv_a_w=conv_a_w,
        conv_a_b=conv_a_b,
        bn=BatchNormParams.identity(c_hidden, dtype),
        conv_b_w=conv_b_w,
        conv_b_b=conv_b_b,
        temperature=temperature,
    )
    return FdyConvLayer(bank, attn, stride_t=stride_t)
