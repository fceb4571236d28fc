import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdyconv.errors import ShapeError
from fdyconv.tensor import allclose, reduce_mean, tensor_create


class TestTensorCreate:
    def test_zero_fill(self):
        t = tensor_create([2, 2], fill=0)
        assert t.shape == (2, 2)
        np.testing.assert_array_equal(t, np.zeros((2, 2)))

    def test_identity_layout(self):
        t = tensor_create([1, 3], data=[1, 2, 3])
        assert t[0, 2] == 3

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            tensor_create([2, 3], data=[1, 2, 3, 4, 5])

    def test_roundtrip_exhaustive_small_shapes(self):
        for shape in [(1,), (2, 3), (2, 2, 2), (3, 1, 2)]:
            n = int(np.prod(shape))
            data = np.arange(n, dtype=np.float64)
            t = tensor_create(shape, data=data)
            for flat_idx in range(n):
                idx = np.unravel_index(flat_idx, shape)
                assert t[idx] == data[flat_idx]

    def test_requires_exactly_one_source(self):
        with pytest.raises(ShapeError):
            tensor_create([2], fill=1, data=[1, 2])
        with pytest.raises(ShapeError):
            tensor_create([2])


class TestReduceMean:
    def test_row_means(self):
        x = np.array([[1.0, 3.0], [5.0, 7.0]])
        np.testing.assert_array_equal(reduce_mean(x, 1), [2.0, 6.0])

    def test_constant(self):
        x = np.full((3, 4, 5), 2.5)
        out = reduce_mean(x, 1)
        assert out.shape == (3, 5)
        np.testing.assert_array_equal(out, np.full((3, 5), 2.5))

    def test_against_loop_oracle_4d(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 4, 5))
        for axis in range(4):
            expected = np.zeros([s for i, s in enumerate(x.shape) if i != axis])
            for idx in np.ndindex(x.shape):
                out_idx = tuple(v for i, v in enumerate(idx) if i != axis)
                expected[out_idx] += x[idx]
            expected /= x.shape[axis]
            assert np.abs(reduce_mean(x, axis) - expected).max() < 1e-12

    def test_axis_of_extent_one_is_reshape(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 1, 3))
        np.testing.assert_array_equal(reduce_mean(x, 1), x[:, 0, :])

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            reduce_mean(np.zeros((2, 2)), 5)

    @given(st.integers(0, 3), st.integers(0, 3))
    @settings(max_examples=20, deadline=None)
    def test_commutes_over_disjoint_axes(self, a, b):
        if a == b:
            return
        rng = np.random.default_rng(7)
        x = rng.standard_normal((3, 4, 5, 6))
        a2 = a - 1 if a > b else a
        b2 = b - 1 if b > a else b
        first = reduce_mean(reduce_mean(x, a), b2)
        second = reduce_mean(reduce_mean(x, b), a2)
        assert np.abs(first - second).max() < 1e-12


class TestAllclose:
    def test_exact_equal(self):
        x = np.array([1.0, 2.0])
        assert allclose(x, x.copy(), rtol=0, atol=0)

    def test_atol_violated(self):
        atol = 1e-3
        b = np.array([1.0, 2.0])
        a = b + 2 * atol
        assert not allclose(a, b, rtol=0.0, atol=atol)

    def test_rtol_accepts_half_margin(self):
        rtol = 1e-4
        b = np.array([1.0, 10.0, 3.0])
        a = b * (1 + rtol / 2)
        assert allclose(a, b, rtol=rtol, atol=0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            allclose(np.zeros(2), np.zeros(3), 0, 0)
