"""Core tensor ops: construction, elementwise, matmul, reshape."""

import numpy as np
import pytest

from neurofuse import tensor
from neurofuse.errors import ShapeError


class TestConstruction:
    def test_zero_fill(self):
        t = tensor.full((2, 2), 0.0)
        assert t.shape == (2, 2)
        assert np.all(t == 0.0)

    def test_constant_fill(self):
        t = tensor.full((3,), 1.5)
        np.testing.assert_array_equal(t, np.float32([1.5, 1.5, 1.5]))

    def test_element_count_is_product_of_extents(self):
        assert tensor.full((2, 3, 4), 0.0).size == 24

    def test_dtype_is_float32(self):
        assert tensor.full((4,), 2.0).dtype == np.float32

    @pytest.mark.parametrize("shape", [(0,), (2, 0, 3), (-1, 4), ()])
    def test_bad_extents_rejected(self, shape):
        with pytest.raises(ShapeError):
            tensor.full(shape, 0.0)

    def test_rank_above_six_rejected(self):
        with pytest.raises(ShapeError):
            tensor.validate_shape((2,) * 7)

    def test_element_count_overflow_rejected(self):
        with pytest.raises(ShapeError):
            tensor.validate_shape((2**32, 2**32, 2))


class TestElementwise:
    def test_add(self):
        out = tensor.add(tensor.as_tensor([1.0, 2.0]), tensor.as_tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out, np.float32([4.0, 6.0]))

    def test_mul_identity(self):
        rng = np.random.default_rng(0)
        x = tensor.as_tensor(rng.normal(size=(3, 4)))
        np.testing.assert_array_equal(tensor.mul(x, tensor.full((3, 4), 1.0)), x)

    def test_sub_self_is_zero(self):
        x = tensor.as_tensor(np.random.default_rng(1).normal(size=(5,)))
        assert np.all(tensor.sub(x, x) == 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.add(tensor.full((2,), 1.0), tensor.full((3,), 1.0))

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            tensor.elementwise("div", tensor.full((2,), 1.0), tensor.full((2,), 1.0))


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(2)
        b = tensor.as_tensor(rng.normal(size=(3, 2)))
        out = tensor.matmul(tensor.as_tensor(np.eye(3)), b)
        np.testing.assert_allclose(out, b, atol=1e-6)

    def test_hand_sum(self):
        a = tensor.as_tensor([[1.0, 2.0], [3.0, 4.0]])
        b = tensor.as_tensor([[1.0], [1.0]])
        np.testing.assert_array_equal(tensor.matmul(a, b), np.float32([[3.0], [7.0]]))

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(3)
        a = tensor.as_tensor(rng.normal(size=(4, 5)))
        b = tensor.as_tensor(rng.normal(size=(5, 3)))
        expected = np.zeros((4, 3), dtype=np.float64)
        for i in range(4):
            for j in range(3):
                for p in range(5):
                    expected[i, j] += float(a[i, p]) * float(b[p, j])
        np.testing.assert_allclose(tensor.matmul(a, b), expected, atol=1e-5)

    def test_associativity(self):
        rng = np.random.default_rng(4)
        a, b, c = (tensor.as_tensor(rng.normal(size=(4, 4))) for _ in range(3))
        left = tensor.matmul(tensor.matmul(a, b), c)
        right = tensor.matmul(a, tensor.matmul(b, c))
        np.testing.assert_allclose(left, right, atol=1e-4)

    def test_rank_and_inner_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.matmul(tensor.full((2, 2, 2), 1.0), tensor.full((2, 2), 1.0))
        with pytest.raises(ShapeError):
            tensor.matmul(tensor.full((2, 3), 1.0), tensor.full((2, 3), 1.0))


class TestReshape:
    def test_flatten_preserves_order(self):
        t = tensor.as_tensor([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]])
        np.testing.assert_array_equal(tensor.reshape(t, (6,)), np.arange(6, dtype=np.float32))

    def test_round_trip_identity(self):
        t = tensor.as_tensor(np.arange(6, dtype=np.float32))
        back = tensor.reshape(tensor.reshape(t, (3, 2)), (6,))
        np.testing.assert_array_equal(back, t)

    def test_rank3_to_flat(self):
        t = tensor.as_tensor(np.arange(8, dtype=np.float32), shape=(2, 2, 2))
        np.testing.assert_array_equal(tensor.reshape(t, (8,)), np.arange(8, dtype=np.float32))

    def test_count_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.reshape(tensor.full((4,), 1.0), (5,))

    def test_reshape_never_changes_flat_data(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            rank = rng.integers(1, 5)
            shape = tuple(int(rng.integers(1, 5)) for _ in range(rank))
            t = tensor.as_tensor(rng.normal(size=shape))
            flat = tensor.reshape(t, (t.size,))
            assert flat.tobytes() == np.ascontiguousarray(t).tobytes()


class TestRowMajorLayout:
    def test_flat_index_matches_coordinate_iteration(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            a, b = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            t = tensor.as_tensor(rng.normal(size=(a, b)))
            flat = t.reshape(-1)
            for i in range(a):
                for j in range(b):
                    assert flat[i * b + j] == t[i, j]


class TestDebugChecks:
    def test_nonfinite_rejected_when_enabled(self):
        tensor.set_debug_checks(True)
        try:
            with pytest.raises(ShapeError):
                tensor.as_tensor([np.inf, 1.0])
        finally:
            tensor.set_debug_checks(False)
        # release mode: passes through
        assert np.isinf(tensor.as_tensor([np.inf, 1.0])[0])
