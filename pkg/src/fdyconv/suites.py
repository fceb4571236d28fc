"""Randomized verification suites, gradient checking and benchmarks.

These back the `verify`, `gradcheck` and `bench` CLI subcommands and the
acceptance tests. Every suite is deterministic given its seed and
reports (max observed error, bound, pass flag).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from . import dynconv, nn
from .dynconv import FdyContext, FdyConvLayer
from .errors import ConfigError


@dataclass
class SuiteResult:
    name: str
    max_error: float
    bound: float
    passed: bool
    detail: str = ""


def _random_layer(rng: np.random.Generator, dtype, temperature: float = 31.0, **kw) -> FdyConvLayer:
    c_in = int(rng.integers(1, 9))
    c_out = int(rng.integers(1, 9))
    k = int(rng.integers(2, 7))
    return dynconv.make_fdy_layer(
        c_in, c_out, k=k, temperature=temperature, dtype=dtype, rng=rng, random_attention=True, **kw
    )


def _random_input(rng: np.random.Generator, layer: FdyConvLayer, dtype, f=None, t=None) -> np.ndarray:
    b = int(rng.integers(1, 3))
    c_in = layer.bank.weights.shape[2]
    f = f if f is not None else int(rng.integers(4, 33))
    t = t if t is not None else int(rng.integers(4, 33))
    return rng.standard_normal((b, c_in, f, t)).astype(dtype)


def path_equivalence_suite(seed: int, trials: int, dtype=np.float32) -> SuiteResult:
    """fdy_forward_naive and fdy_forward_efficient must agree."""
    bound = 1e-5 if dtype == np.float32 else 1e-10
    rng = np.random.default_rng(seed)
    worst = 0.0
    detail = ""
    for trial in range(trials):
        layer = _random_layer(rng, dtype)
        x = _random_input(rng, layer, dtype)
        err = float(np.abs(dynconv.fdy_forward_naive(x, layer) - dynconv.fdy_forward_efficient(x, layer)).max())
        if err > worst:
            worst, detail = err, f"trial={trial}"
    return SuiteResult("path_equivalence", worst, bound, worst <= bound, detail)


def simplex_suite(seed: int, trials: int, dtype=np.float64, skip_normalize: bool = False) -> SuiteResult:
    """Attention weights are nonnegative and sum to one over basis kernels."""
    rng = np.random.default_rng(seed)
    worst_neg = 0.0
    worst_sum = 0.0
    detail = ""
    for trial in range(trials):
        layer = _random_layer(rng, dtype)
        x = _random_input(rng, layer, dtype)
        pi = dynconv.attention_weights(x, layer.attn, skip_normalize=skip_normalize)
        neg = max(0.0, -float(pi.min()))
        serr = float(np.abs(pi.sum(axis=1) - 1.0).max())
        if max(neg, serr) > max(worst_neg, worst_sum):
            detail = f"trial={trial}"
        worst_neg = max(worst_neg, neg)
        worst_sum = max(worst_sum, serr)
    passed = worst_neg <= 1e-9 and worst_sum <= 1e-6
    return SuiteResult("simplex", max(worst_neg, worst_sum), 1e-6, passed, detail)


def _circ_shift(x: np.ndarray, s: int, axis: int) -> np.ndarray:
    return np.roll(x, s, axis=axis)


def time_equivariance_suite(seed: int, trials: int, dtype=np.float64) -> SuiteResult:
    """With circular time padding, shifting the input in time shifts the
    output identically; attention weights are bitwise shift-invariant."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    detail = ""
    for trial in range(trials):
        layer = _random_layer(rng, dtype)
        layer.pad_mode_t = "circular"
        x = _random_input(rng, layer, dtype, t=16)
        y = dynconv.fdy_forward_efficient(x, layer)
        pi = dynconv.attention_weights(x, layer.attn)
        for s in range(1, x.shape[3]):
            xs = _circ_shift(x, s, axis=3)
            pis = dynconv.attention_weights(xs, layer.attn)
            if not np.array_equal(pi, pis):
                return SuiteResult("time_equivariance", np.inf, 1e-5, False, f"pi not shift-invariant, trial={trial} s={s}")
            err = float(np.abs(dynconv.fdy_forward_efficient(xs, layer) - _circ_shift(y, s, axis=3)).max())
            if err > worst:
                worst, detail = err, f"trial={trial} s={s}"
    return SuiteResult("time_equivariance", worst, 1e-5, worst <= 1e-5, detail)


def freq_nonequivariance_suite(seed: int, trials: int, dtype=np.float64) -> SuiteResult:
    """FDY with circular frequency padding must break shift equivariance on
    most random instances, while plain conv2d under the identical
    protocol stays equivariant on all of them."""
    rng = np.random.default_rng(seed)
    fdy_broken = 0
    conv_ok = 0
    worst_conv = 0.0
    for trial in range(trials):
        layer = _random_layer(rng, dtype, temperature=1.0)
        layer.pad_mode_f = "circular"
        x = _random_input(rng, layer, dtype, f=16)
        y = dynconv.fdy_forward_efficient(x, layer)
        disc = 0.0
        for s in range(1, x.shape[2]):
            xs = _circ_shift(x, s, axis=2)
            disc = max(disc, float(np.abs(dynconv.fdy_forward_efficient(xs, layer) - _circ_shift(y, s, axis=2)).max()))
        if disc > 1e-3:
            fdy_broken += 1

        w = layer.bank.weights[0]
        p = nn.Conv2dParams(w, layer.bank.biases[0], padding=(1, 1), padding_mode="circular,zeros")
        yc = nn.conv2d(x, p)
        cdisc = 0.0
        for s in range(1, x.shape[2]):
            xs = _circ_shift(x, s, axis=2)
            cdisc = max(cdisc, float(np.abs(nn.conv2d(xs, p) - _circ_shift(yc, s, axis=2)).max()))
        worst_conv = max(worst_conv, cdisc)
        if cdisc < 1e-5:
            conv_ok += 1
    passed = fdy_broken >= int(np.ceil(0.95 * trials)) and conv_ok == trials
    detail = f"fdy_broken={fdy_broken}/{trials} conv_equivariant={conv_ok}/{trials} conv_worst={worst_conv:.2e}"
    return SuiteResult("freq_nonequivariance", float(trials - fdy_broken), float(trials) * 0.05, passed, detail)


def run_verify(seed: int, trials: int, dtype=np.float32, fault: Optional[str] = None) -> List[SuiteResult]:
    if trials < 1:
        raise ConfigError("trials must be >= 1 (nothing verified otherwise)")
    return [
        path_equivalence_suite(seed, trials, dtype),
        simplex_suite(seed + 1, trials, skip_normalize=(fault == "skip-softmax-norm")),
        time_equivariance_suite(seed + 2, max(1, trials // 10)),
        freq_nonequivariance_suite(seed + 3, trials),
    ]


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

GRADCHECK_SHAPE = dict(b=2, c_in=3, c_out=4, f=8, t=10, k=3)


def gradcheck_fdy(seed: int = 42, step: float = 1e-5, shape: Optional[dict] = None) -> Dict[str, float]:
    """Central finite differences vs `fdy_backward` on every parameter group
    and the input; real64. Returns worst relative error per group."""
    sh = dict(GRADCHECK_SHAPE, **(shape or {}))
    rng = np.random.default_rng(seed)
    layer = dynconv.make_fdy_layer(
        sh["c_in"], sh["c_out"], k=sh["k"], dtype=np.float64, rng=rng, random_attention=True
    )
    x = rng.standard_normal((sh["b"], sh["c_in"], sh["f"], sh["t"]))
    upstream = rng.standard_normal((sh["b"], sh["c_out"], sh["f"], sh["t"]))

    ctx = FdyContext()
    dynconv.fdy_forward_efficient(x, layer, ctx=ctx)
    analytic = dynconv.fdy_backward(layer, upstream, ctx)

    def objective() -> float:
        return float((dynconv.fdy_forward_efficient(x, layer) * upstream).sum())

    groups = {
        "input": (x, analytic["d_x"]),
        "basis_weights": (layer.bank.weights, analytic["d_weights"]),
        "basis_biases": (layer.bank.biases, analytic["d_biases"]),
        "attn_conv_a_w": (layer.attn.conv_a_w, analytic["d_conv_a_w"]),
        "attn_conv_a_b": (layer.attn.conv_a_b, analytic["d_conv_a_b"]),
        "bn_gamma": (layer.attn.bn.gamma, analytic["d_gamma"]),
        "bn_beta": (layer.attn.bn.beta, analytic["d_beta"]),
        "attn_conv_b_w": (layer.attn.conv_b_w, analytic["d_conv_b_w"]),
        "attn_conv_b_b": (layer.attn.conv_b_b, analytic["d_conv_b_b"]),
    }
    worst: Dict[str, float] = {}
    for name, (arr, grad) in groups.items():
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        err = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = objective()
            flat[i] = orig - step
            down = objective()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            err = max(err, abs(numeric - gflat[i]) / max(abs(numeric) + abs(gflat[i]), 1e-6))
        worst[name] = err
    return worst


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

BENCH_PRESETS = {
    "default": dict(b=1, c_in=32, c_out=64, f=128, t=626, k=4),
    "small": dict(b=1, c_in=8, c_out=16, f=32, t=64, k=4),
}


def run_bench(preset: str = "default", repeats: int = 20, seed: int = 42, dtype=np.float32) -> Dict[str, float]:
    """Median wall time per execution path. Returns seconds keyed by path."""
    if preset not in BENCH_PRESETS:
        raise ConfigError(f"unknown bench preset {preset!r}")
    sh = BENCH_PRESETS[preset]
    rng = np.random.default_rng(seed)
    layer = dynconv.make_fdy_layer(
        sh["c_in"], sh["c_out"], k=sh["k"], dtype=dtype, rng=rng, random_attention=True
    )
    x = rng.standard_normal((sh["b"], sh["c_in"], sh["f"], sh["t"])).astype(dtype)
    plain = nn.Conv2dParams(layer.bank.weights[0], layer.bank.biases[0], padding=(1, 1))

    def timed(fn: Callable[[], object]) -> float:
        fn()  # warm up
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        return float(np.median(samples))

    return {
        "efficient": timed(lambda: dynconv.fdy_forward_efficient(x, layer)),
        "naive": timed(lambda: dynconv.fdy_forward_naive(x, layer)),
        "plain_conv": timed(lambda: nn.conv2d(x, plain)),
    }
