"""
Tests for the tensor engine: primitives, tape, optimizer.
"""

import numpy as np
import pytest

from cycleseg.errors import ShapeError
from cycleseg.gradcheck import numeric_gradient, relative_error
from cycleseg.tensor import (
    AdamState,
    Parameter,
    Tape,
    Tensor,
    active_tape,
    adam_step,
    average,
    backward,
    bin_edges,
    conv2d,
    elementwise,
    global_avg_pool,
    matmul,
    mul,
    pool,
    scale,
    softmax_rows,
    tanh,
    total,
    upsample_bilinear,
)


def _grad(fn, *params):
    with Tape() as tape:
        tape.watch(*params)
        loss = fn()
    return tape.backward(loss).for_params(params)


# =============================================================================
# Values
# =============================================================================

class TestTensor:
    def test_data_is_read_only(self):
        t = Tensor([[1.0, 2.0]])
        with pytest.raises(ValueError):
            t.data[0, 0] = 5.0

    def test_numpy_returns_writable_copy(self):
        t = Tensor([1.0, 2.0])
        copy = t.numpy()
        copy[0] = 9.0
        assert t.data[0] == 1.0

    def test_zero_extent_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((0, 3)))

    def test_parameter_assign_checks_shape(self):
        p = Parameter(np.zeros((2, 2)))
        p.assign(np.ones((2, 2)))
        assert np.all(p.data == 1.0)
        with pytest.raises(ShapeError):
            p.assign(np.ones(3))


# =============================================================================
# Elementwise
# =============================================================================

class TestElementwise:
    def test_sigmoid_of_zeros_is_half(self):
        out = elementwise("sigmoid", Tensor(np.zeros((1, 1, 2, 2))))
        assert np.all(out.data == 0.5)

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = elementwise("sigmoid", Tensor([-1000.0, 1000.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] == pytest.approx(0.0)
        assert out.data[1] == pytest.approx(1.0)

    def test_mul_by_ones_is_identity(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 3)))
        assert np.array_equal(mul(x, Tensor(np.ones(x.shape))).data, x.data)

    def test_tanh_gradient_matches_finite_difference(self):
        x = Parameter([0.3])
        (analytic,) = _grad(lambda: total(tanh(x)), x)
        numeric = numeric_gradient(lambda: total(tanh(x)), x, np.array([0]), 1e-5)
        assert relative_error(analytic, numeric) < 1e-6

    def test_channel_bias_broadcast(self):
        x = Tensor(np.zeros((1, 2, 2, 2)))
        out = elementwise("add", x, Tensor([1.0, -1.0]))
        assert np.all(out.data[0, 0] == 1.0)
        assert np.all(out.data[0, 1] == -1.0)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            elementwise("add", Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))

    def test_unknown_kind_raises(self):
        with pytest.raises(ValueError):
            elementwise("pow", Tensor([1.0]), Tensor([1.0]))


# =============================================================================
# Convolution & linear algebra
# =============================================================================

class TestConv2d:
    def test_unit_kernel_is_identity(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 4, 4)))
        out = conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor([0.0]))
        assert np.allclose(out.data, x.data, rtol=0, atol=1e-15)

    def test_ones_kernel_sums_window(self):
        c = 1.5
        x = Tensor(np.full((1, 1, 5, 5), c))
        out = conv2d(x, Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]), padding=1)
        assert np.allclose(out.data[0, 0, 1:-1, 1:-1], 9 * c)
        assert out.data[0, 0, 0, 0] == pytest.approx(4 * c)

    @pytest.mark.parametrize("size,kernel,stride,padding,expected", [
        (5, 3, 1, 1, 5),
        (8, 3, 2, 1, 4),
        (7, 3, 2, 0, 3),
    ])
    def test_output_size(self, size, kernel, stride, padding, expected):
        x = Tensor(np.zeros((1, 2, size, size)))
        out = conv2d(x, Tensor(np.zeros((3, 2, kernel, kernel))), None, stride=stride, padding=padding)
        assert out.shape == (1, 3, expected, expected)

    def test_non_positive_output_raises(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))), None)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 1, 1))), None)

    def test_gradients_match_finite_differences(self, rng):
        x = Parameter(rng.normal(size=(1, 2, 5, 5)))
        kernel = Parameter(rng.normal(size=(3, 2, 3, 3)))
        bias = Parameter(rng.normal(size=3))
        weights = Tensor(rng.normal(size=(1, 3, 5, 5)))

        def fn():
            return total(mul(conv2d(x, kernel, bias, padding=1), weights))

        grads = _grad(fn, x, kernel, bias)
        for param, grad in zip((x, kernel, bias), grads):
            idx = np.arange(param.size)
            numeric = numeric_gradient(fn, param, idx, 1e-5)
            assert relative_error(grad.reshape(-1), numeric) < 1e-5


class TestMatmul:
    def test_identity(self, rng):
        a = Tensor(rng.normal(size=(3, 4)))
        assert np.array_equal(matmul(a, Tensor(np.eye(4))).data, a.data)

    def test_hand_sum(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        assert np.array_equal(out.data, [[3.0], [7.0]])

    def test_gradient(self, rng):
        a, b = Parameter(rng.normal(size=(3, 4))), Parameter(rng.normal(size=(4, 2)))
        fn = lambda: total(matmul(a, b))  # noqa: E731
        ga, gb = _grad(fn, a, b)
        assert relative_error(ga.reshape(-1), numeric_gradient(fn, a, np.arange(12), 1e-5)) < 1e-6
        assert relative_error(gb.reshape(-1), numeric_gradient(fn, b, np.arange(8), 1e-5)) < 1e-6

    def test_inner_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestSoftmaxRows:
    def test_uniform_row(self):
        out = softmax_rows(Tensor([[1.0, 1.0, 1.0]]))
        assert np.allclose(out.data, 1 / 3, atol=1e-15)

    def test_no_overflow(self):
        out = softmax_rows(Tensor([[1000.0, 0.0]]))
        assert np.allclose(out.data, [[1.0, 0.0]], atol=1e-12)

    def test_rows_sum_to_one_and_shift_invariant(self, rng):
        s = rng.normal(size=(5, 7)) * 10
        out = softmax_rows(Tensor(s)).data
        assert np.all(np.abs(out.sum(axis=1) - 1.0) < 1e-12)
        shifted = softmax_rows(Tensor(s + rng.normal(size=(5, 1)) * 100)).data
        assert np.allclose(out, shifted, atol=1e-12)

    def test_jacobian(self, rng):
        s = Parameter(rng.normal(size=(2, 4)))
        weights = Tensor(rng.normal(size=(2, 4)))
        fn = lambda: total(mul(softmax_rows(s), weights))  # noqa: E731
        (g,) = _grad(fn, s)
        assert relative_error(g.reshape(-1), numeric_gradient(fn, s, np.arange(8), 1e-5)) < 1e-6


# =============================================================================
# Pooling & resampling
# =============================================================================

class TestPool:
    def test_bin_edges_floor_partition(self):
        assert bin_edges(5, 2) == [0, 2, 5]
        assert bin_edges(4, 4) == [0, 1, 2, 3, 4]

    def test_constant_map(self):
        out = pool("roi_avg", Tensor(np.full((1, 2, 4, 4), 2.5)), 2, 2)
        assert np.all(out.data == 2.5)

    def test_max_to_single_bin(self, rng):
        x = rng.normal(size=(1, 3, 4, 5))
        out = pool("roi_max", Tensor(x), 1, 1)
        assert np.array_equal(out.data[0, :, 0, 0], x[0].max(axis=(1, 2)))

    def test_avg_matches_loop_oracle(self, rng):
        x = rng.normal(size=(1, 2, 5, 5))
        out = pool("roi_avg", Tensor(x), 2, 2).data
        edges = [0, 2, 5]
        for c in range(2):
            for i in range(2):
                for j in range(2):
                    total_ = 0.0
                    count = 0
                    for y in range(edges[i], edges[i + 1]):
                        for xx in range(edges[j], edges[j + 1]):
                            total_ += x[0, c, y, xx]
                            count += 1
                    assert out[0, c, i, j] == pytest.approx(total_ / count, abs=1e-12)

    def test_global_average_equals_spatial_mean(self, rng):
        x = rng.normal(size=(1, 4, 6, 6))
        out = global_avg_pool(Tensor(x)).data[0, :, 0, 0]
        assert np.allclose(out, x[0].mean(axis=(1, 2)), atol=1e-12)

    def test_output_larger_than_input_raises(self):
        with pytest.raises(ShapeError):
            pool("roi_avg", Tensor(np.zeros((1, 1, 2, 2))), 3, 3)


class TestUpsampleBilinear:
    def test_constant_map_stays_constant(self):
        out = upsample_bilinear(Tensor(np.full((1, 2, 3, 3), 0.7)), 6, 6)
        assert np.allclose(out.data, 0.7, atol=1e-15)

    def test_single_value_broadcasts(self):
        out = upsample_bilinear(Tensor(np.full((1, 1, 1, 1), 4.2)), 4, 4)
        assert np.all(out.data == 4.2)

    def test_matches_pointwise_formula(self, rng):
        x = rng.normal(size=(2, 2))
        out = upsample_bilinear(Tensor(x[None, None]), 4, 4).data[0, 0]

        def coord(dst, n_in, n_out):
            src = max((dst + 0.5) * n_in / n_out - 0.5, 0.0)
            lo = int(np.floor(src))
            hi = min(lo + 1, n_in - 1)
            return lo, hi, src - lo

        for y in range(4):
            y0, y1, wy = coord(y, 2, 4)
            for xx in range(4):
                x0, x1, wx = coord(xx, 2, 4)
                expected = ((1 - wy) * (1 - wx) * x[y0, x0] + (1 - wy) * wx * x[y0, x1]
                            + wy * (1 - wx) * x[y1, x0] + wy * wx * x[y1, x1])
                assert out[y, xx] == pytest.approx(expected, abs=1e-12)

    def test_downsampling_rejected(self):
        with pytest.raises(ShapeError):
            upsample_bilinear(Tensor(np.zeros((1, 1, 4, 4))), 2, 2)


# =============================================================================
# Tape
# =============================================================================

class TestTape:
    def test_sum_gradient_is_ones(self, rng):
        x = Parameter(rng.normal(size=(2, 3)))
        (g,) = _grad(lambda: total(x), x)
        assert np.array_equal(g, np.ones((2, 3)))

    @pytest.mark.filterwarnings("error::DeprecationWarning")
    def test_total_is_zero_dimensional(self, rng):
        x = Parameter(rng.normal(size=(2, 2)))
        assert total(x).shape == ()
        (g,) = _grad(lambda: scale(average([total(x), total(mul(x, x))]), 3.0), x)
        assert g.shape == (2, 2)
        assert np.allclose(g, 1.5 * (1.0 + 2.0 * x.data), atol=1e-15)

    def test_square_gradient(self, rng):
        x = Parameter(rng.normal(size=(2, 3)))
        (g,) = _grad(lambda: total(mul(x, x)), x)
        assert np.allclose(g, 2 * x.data, atol=1e-15)

    def test_unused_nodes_get_zero_gradient(self, rng):
        x, unused = Parameter(rng.normal(size=3)), Parameter(rng.normal(size=2))
        gx, gu = _grad(lambda: total(x), x, unused)
        assert np.array_equal(gu, np.zeros(2))

    def test_backward_needs_scalar(self):
        x = Parameter(np.ones(3))
        with Tape() as tape:
            tape.watch(x)
            y = mul(x, x)
        with pytest.raises(ShapeError):
            backward(tape, y)

    def test_tape_is_scoped_to_context(self):
        assert active_tape() is None
        with Tape() as tape:
            assert active_tape() is tape
        assert active_tape() is None

    def test_replay_is_deterministic(self, rng):
        x = Parameter(rng.normal(size=(1, 2, 4, 4)))
        kernel = Parameter(rng.normal(size=(2, 2, 3, 3)))

        def fn():
            return total(tanh(conv2d(x, kernel, None, padding=1)))

        first = _grad(fn, x, kernel)
        second = _grad(fn, x, kernel)
        for a, b in zip(first, second):
            assert np.array_equal(a, b)


# =============================================================================
# Adam
# =============================================================================

class TestAdam:
    def test_zero_gradient_leaves_params(self, rng):
        p = Parameter(rng.normal(size=(2, 2)))
        before = p.numpy()
        adam_step([p], [np.zeros((2, 2))], AdamState(lr=0.1))
        assert np.array_equal(p.data, before)

    def test_first_step(self):
        p = Parameter([1.0])
        state = AdamState(lr=0.1)
        adam_step([p], [np.array([1.0])], state)
        assert p.data[0] == pytest.approx(0.9, abs=1e-6)
        assert state.step == 1

    def test_converges_on_quadratic(self):
        p = Parameter([2.5])
        state = AdamState(lr=0.1)
        for _ in range(100):
            adam_step([p], [2.0 * (p.data - 3.0)], state)
        assert abs(p.data[0] - 3.0) < 1e-2

    def test_decoupled_weight_decay(self):
        p = Parameter([2.0])
        adam_step([p], [np.zeros(1)], AdamState(lr=0.1, weight_decay=0.5))
        assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step([Parameter(np.zeros(2))], [np.zeros(3)], AdamState())
