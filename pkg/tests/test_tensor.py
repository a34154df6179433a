import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from invennet import tensor as T
from invennet.errors import ContractError, NumericError
from invennet.gradcheck import numeric_gradient, relative_error


def conv_loop(x, w, b, stride, padding):
    """Six nested loops; the reference the vectorised conv2d is checked against."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for b_ in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b_, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[b_, o, i, j] = acc
    return out


def box_loop(x, r):
    """Window mean with reflect borders, one pixel at a time."""
    h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)

    def refl(i, n):
        while i < 0 or i >= n:
            i = -i if i < 0 else 2 * (n - 1) - i
        return i

    for i in range(h):
        for j in range(w):
            vals = [x[refl(i + u, h), refl(j + v, w)] for u in range(-r, r + 1) for v in range(-r, r + 1)]
            out[i, j] = np.mean(vals)
    return out


def grad_of(fn, *arrays):
    params = [T.parameter(a, dtype=np.float64) for a in arrays]
    return T.gradients(fn(*params), params)


def fd_of(fn, *arrays):
    def value(arrs):
        with T.no_grad():
            return float(fn(*[T.tensor(a, dtype=np.float64) for a in arrs]).data)

    return numeric_gradient(value, list(arrays))


class TestConv2d:
    def test_all_ones_overlap_counts(self):
        x = T.tensor(np.ones((1, 1, 3, 3)))
        w = T.tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, w, T.tensor(np.zeros(1)), stride=1, padding=1).data[0, 0]
        assert out[1, 1] == 9.0
        assert out[0, 0] == out[0, 2] == out[2, 0] == out[2, 2] == 4.0

    def test_unit_kernel_is_identity(self):
        x = np.random.default_rng(0).random((2, 1, 4, 5)).astype(np.float32)
        out = T.conv2d(T.tensor(x), T.tensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out.data, x)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_nested_loops(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        got = T.conv2d(T.tensor(x), T.tensor(w), T.tensor(b), stride, padding).data
        np.testing.assert_allclose(got, conv_loop(x, w, b, stride, padding), atol=1e-5)

    def test_weight_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 2, 6, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        proj = rng.normal(size=(1, 3, 6, 6))

        def loss(x_, w_):
            return T.sum_(T.conv2d(x_, w_, padding=1) * T.tensor(proj, dtype=np.float64))

        assert relative_error(grad_of(loss, x, w), fd_of(loss, x, w)) < 1e-3

    def test_input_gradient_strided_vs_finite_differences(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 2, 7, 6))
        w = rng.normal(size=(2, 2, 4, 4))
        b = rng.normal(size=2)

        def loss(x_, w_, b_):
            return T.sum_(T.square(T.conv2d(x_, w_, b_, stride=2, padding=1)))

        assert relative_error(grad_of(loss, x, w, b), fd_of(loss, x, w, b)) < 1e-3

    def test_channel_mismatch_names_dimensions(self):
        with pytest.raises(ContractError, match="Cin=2.*Cin=3"):
            T.conv2d(T.tensor(np.zeros((1, 2, 4, 4))), T.tensor(np.zeros((1, 3, 3, 3))))

    def test_collapsed_output_is_rejected(self):
        with pytest.raises(ContractError, match="not positive"):
            T.conv2d(T.tensor(np.zeros((1, 1, 2, 2))), T.tensor(np.zeros((1, 1, 4, 4))), stride=2)


class TestElementwise:
    def test_exp_values(self):
        out = T.elementwise("exp", T.tensor([0.0, 1.0, -1.0])).data
        np.testing.assert_allclose(out, [1.0, 2.7182817, 0.36787945], rtol=1e-6)

    def test_clamp_values_and_gradient(self):
        x = T.parameter([1.3, -0.2, 0.5])
        y = T.elementwise("clamp", x, 0.0, 1.0)
        np.testing.assert_allclose(y.data, [1.0, 0.0, 0.5])
        (g,) = T.gradients(T.sum_(y), [x])
        np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])

    def test_lrelu_slope_on_negatives(self):
        x = T.parameter([-2.0, 3.0])
        y = T.elementwise("lrelu", x, slope=0.2)
        np.testing.assert_allclose(y.data, [-0.4, 3.0], rtol=1e-6)
        np.testing.assert_allclose(T.gradients(T.sum_(y), [x])[0], [0.2, 1.0], rtol=1e-6)

    def test_debug_mode_flags_hazardous_division(self):
        with T.debug_mode():
            with pytest.raises(NumericError):
                T.div(T.tensor([1.0]), T.tensor([1e-13]))
        T.div(T.tensor([1.0]), T.tensor([1e-13]))  # tolerated outside debug mode

    def test_debug_mode_flags_non_finite_results(self):
        with T.debug_mode(), pytest.raises(NumericError):
            T.exp(T.tensor([1000.0]))

    def test_three_channel_coefficients_broadcast_over_stack(self):
        x = np.arange(2 * 6 * 2 * 2, dtype=np.float32).reshape(2, 6, 2, 2)
        s = np.array([1.0, 2.0, 3.0], dtype=np.float32).reshape(1, 1, 3, 1, 1)
        out = T.mul(T.reshape(T.tensor(x), (2, 2, 3, 2, 2)), T.tensor(s)).data.reshape(x.shape)
        np.testing.assert_array_equal(out[:, 0:3], x[:, 0:3] * s.reshape(1, 3, 1, 1))
        np.testing.assert_array_equal(out[:, 3:6], x[:, 3:6] * s.reshape(1, 3, 1, 1))

    @pytest.mark.parametrize("kind", ["exp", "tanh", "square", "abs", "relu"])
    def test_unary_gradients_vs_finite_differences(self, kind):
        x = np.random.default_rng(3).normal(size=(3, 4))
        x[np.abs(x) < 0.05] = 0.3  # stay away from kinks

        def loss(x_):
            return T.sum_(T.elementwise(kind, x_) * T.tensor(np.linspace(-1, 1, 12).reshape(3, 4),
                                                            dtype=np.float64))

        assert relative_error(grad_of(loss, x), fd_of(loss, x)) < 1e-6

    def test_binary_broadcast_gradients(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(2, 3, 4))
        b = rng.uniform(1, 2, size=(3, 1))

        def loss(a_, b_):
            return T.sum_(T.square((a_ * b_ - b_) / b_ + a_))

        assert relative_error(grad_of(loss, a, b), fd_of(loss, a, b)) < 1e-6


class TestStructural:
    def test_upsample_single_value(self):
        out = T.structural("upsample_nearest_2x", T.tensor(np.full((1, 1, 1, 1), 7.0)))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 7.0))

    def test_mean_of_four(self):
        assert T.structural("mean", T.tensor([1.0, 2.0, 3.0, 4.0])).item() == 2.5

    def test_box_mean_keeps_constants(self):
        out = T.structural("box_mean", T.tensor(np.full((1, 3, 5, 7), 0.3)), radius=1)
        np.testing.assert_allclose(out.data, 0.3, rtol=1e-6)

    @pytest.mark.parametrize("radius", [1, 2, 4])
    def test_box_mean_matches_window_loop(self, radius):
        x = np.random.default_rng(radius).random((6, 9))
        got = T.box_mean(T.tensor(x, dtype=np.float64), radius).data
        np.testing.assert_allclose(got, box_loop(x, radius), atol=1e-12)

    def test_split_of_concat_is_exact(self):
        rng = np.random.default_rng(5)
        a = T.tensor(rng.random((2, 3, 4, 4)))
        b = T.tensor(rng.random((2, 5, 4, 4)))
        left, right = T.structural("split_channels", T.structural("concat_channels", [a, b]), 3)
        np.testing.assert_array_equal(left.data, a.data)
        np.testing.assert_array_equal(right.data, b.data)

    @pytest.mark.parametrize("point", [0, 4, -1])
    def test_split_point_out_of_range(self, point):
        with pytest.raises(ContractError):
            T.split_channels(T.tensor(np.zeros((1, 4, 2, 2))), point)

    def test_bilinear_rows_sum_to_one_and_identity(self):
        m = T.bilinear_matrix(7, 13)
        np.testing.assert_allclose(m.sum(axis=1), 1.0)
        np.testing.assert_allclose(T.bilinear_matrix(5, 5), np.eye(5))

    def test_bilinear_upsample_by_two_of_ramp(self):
        # half-pixel centres: output i samples input at (i + 0.5) / 2 - 0.5
        out = T.resize_bilinear(T.tensor(np.arange(4.0).reshape(1, 1, 1, 4), dtype=np.float64), 1, 8).data
        np.testing.assert_allclose(out.ravel(), [0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3])

    def test_structural_gradients(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1, 2, 6, 4))
        proj = rng.normal(size=(1, 2, 6, 6))

        def loss(x_):
            y = T.resize_bilinear(T.box_mean(x_, 1), 3, 3)
            up = T.upsample_nearest_2x(y)
            pooled = T.max_pool_2x(x_)
            return T.sum_(up * T.tensor(proj, dtype=np.float64)) + T.sum_(T.square(pooled))

        assert relative_error(grad_of(loss, x), fd_of(loss, x)) < 1e-6


class TestBackward:
    def test_square_at_three(self):
        x = T.parameter(3.0)
        T.square(x).backward()
        assert x.grad == 6.0

    def test_mean_exp(self):
        v = np.array([0.1, -0.5, 1.0, 2.0])
        x = T.parameter(v, dtype=np.float64)
        (g,) = T.gradients(T.mean(T.exp(x)), [x])
        np.testing.assert_allclose(g, np.exp(v) / 4, rtol=1e-12)

    def test_non_scalar_loss_rejected(self):
        x = T.parameter([1.0, 2.0])
        with pytest.raises(ContractError):
            T.gradients(x * 2.0, [x])

    def test_unused_parameter_gets_zeros(self):
        x = T.parameter([1.0, 2.0])
        unused = T.parameter(np.ones((2, 2)))
        gx, gu = T.gradients(T.sum_(x * x), [x, unused])
        np.testing.assert_array_equal(gu, np.zeros((2, 2)))
        np.testing.assert_array_equal(gx, [2.0, 4.0])

    def test_reuse_accumulates(self):
        x = T.parameter(2.0, dtype=np.float64)
        loss = x * x + x * 3.0 + T.exp(x) * 0.0
        (g,) = T.gradients(loss, [x])
        assert g == pytest.approx(7.0)

    def test_no_grad_records_nothing(self):
        x = T.parameter([1.0])
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_diamond_graph_visits_each_node_once(self):
        x = T.parameter(1.5, dtype=np.float64)
        h = T.exp(x)
        loss = h * h + h
        (g,) = T.gradients(loss, [x])
        e = np.exp(1.5)
        assert g == pytest.approx(2 * e * e + e, rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-2, 2)),
           st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity_of_gradients(self, data, a, b):
        x = T.parameter(data, dtype=np.float64)

        def l1():
            return T.sum_(T.square(x))

        def l2():
            return T.mean(T.tanh(x))

        (g1,) = T.gradients(l1(), [x])
        (g2,) = T.gradients(l2(), [x])
        (g,) = T.gradients(l1() * a + l2() * b, [x])
        np.testing.assert_allclose(g, a * g1 + b * g2, atol=1e-6)

    def test_repeated_runs_are_bit_identical(self):
        rng = np.random.default_rng(7)
        x = rng.random((2, 3, 8, 8)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)

        def run():
            xp = T.parameter(x)
            wp = T.parameter(w)
            loss = T.mean(T.square(T.conv2d(xp, wp, padding=1)))
            return loss.data.tobytes(), [g.tobytes() for g in T.gradients(loss, [xp, wp])]

        assert run() == run()

    def test_float32_storage_with_wide_reduction(self):
        x = T.tensor(np.full(10_000_000 // 100, 0.1, dtype=np.float32))
        assert x.dtype == np.float32
        assert T.sum_(x).item() == pytest.approx(10_000.0, rel=1e-6)
