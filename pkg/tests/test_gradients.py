import numpy as np
import pytest

from fdyconv import dynconv, nn, suites
from fdyconv.dynconv import FdyContext, fdy_backward, fdy_forward_efficient, make_fdy_layer
from fdyconv.errors import ContractError
from fdyconv.nn import Conv2dParams


def make_layer(seed=42, **kw):
    rng = np.random.default_rng(seed)
    return make_fdy_layer(3, 4, k=3, dtype=np.float64, rng=rng, random_attention=True, **kw)


class TestFdyBackward:
    def test_requires_forward_context(self):
        layer = make_layer()
        with pytest.raises(ContractError):
            fdy_backward(layer, np.zeros((1, 4, 8, 8)), FdyContext())

    def test_zero_upstream_gives_zero_grads(self):
        layer = make_layer()
        x = np.random.default_rng(0).standard_normal((2, 3, 8, 10))
        ctx = FdyContext()
        fdy_forward_efficient(x, layer, ctx=ctx)
        grads = fdy_backward(layer, np.zeros((2, 4, 8, 10)), ctx)
        for name, g in grads.items():
            assert np.all(g == 0), name

    def test_frozen_uniform_attention_matches_plain_conv_backward(self):
        # attention detached at exactly uniform pi: d_W_i is 1/K of the plain
        # conv weight gradient with the same upstream
        layer = make_layer()
        layer.attn.conv_b_w[:] = 0
        layer.attn.conv_b_b[:] = 0
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 8, 10))
        up = rng.standard_normal((2, 4, 8, 10))
        ctx = FdyContext()
        fdy_forward_efficient(x, layer, ctx=ctx)
        grads = fdy_backward(layer, up, ctx)
        k = layer.bank.k
        for i in range(k):
            p = Conv2dParams(layer.bank.weights[i], layer.bank.biases[i], padding=(1, 1))
            _, d_w, d_b = nn.conv2d_grads(x, p, up)
            np.testing.assert_allclose(grads["d_weights"][i], d_w / k, atol=1e-10)
            np.testing.assert_allclose(grads["d_biases"][i], d_b / k, atol=1e-10)

    def test_finite_differences_all_groups(self):
        worst = suites.gradcheck_fdy(seed=42)
        for group, err in worst.items():
            assert err < 1e-3, f"{group}: {err}"

    def test_finite_differences_second_seed(self):
        worst = suites.gradcheck_fdy(seed=7)
        assert max(worst.values()) < 1e-3


class TestGradcheckHarness:
    def test_reports_all_parameter_groups(self):
        worst = suites.gradcheck_fdy(seed=42)
        expected = {
            "input",
            "basis_weights",
            "basis_biases",
            "attn_conv_a_w",
            "attn_conv_a_b",
            "bn_gamma",
            "bn_beta",
            "attn_conv_b_w",
            "attn_conv_b_b",
        }
        assert set(worst) == expected
