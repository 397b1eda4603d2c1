import numpy as np
import pytest

from quatgan.errors import ConfigError, DomainError, ShapeMismatchError
from quatgan.layers import (
    ConvConfig,
    QWeight,
    conv_out_size,
    global_sum_pool,
    guided_max_pool,
    im2col,
    col2im,
    init_sigma,
    qconv2d_forward,
    qdense_forward,
    qtransposed_conv2d_forward,
    quaternion_init,
    split_activation,
    split_pool,
    tconv_out_size,
    upsample_nearest2x,
)
from quatgan.quaternion import Quaternion, hamilton_product
from quatgan.qtensor import QTensor


def _qt(rng, shape):
    return QTensor(rng.standard_normal((4, *shape)))


def _at(t: QTensor, *idx) -> Quaternion:
    return Quaternion(*(float(t.data[(c, *idx)]) for c in range(4)))


def dense_oracle(x: QTensor, w: QWeight) -> QTensor:
    """Scalar-loop reference: y[b,o] = sum_i w[o,i] * x[b,i] + bias[o]."""
    b, i_q = x.shape
    o_q = w.kernel.shape[0]
    out = QTensor.zeros((b, o_q))
    for bb in range(b):
        for o in range(o_q):
            acc = Quaternion(0.0, 0.0, 0.0, 0.0)
            for i in range(i_q):
                acc = acc.add(hamilton_product(_at(w.kernel, o, i), _at(x, bb, i)))
            if w.bias is not None:
                acc = acc.add(_at(w.bias, o))
            out.data[:, bb, o] = acc
    return out


def conv_oracle(x: QTensor, w: QWeight, cfg: ConvConfig) -> QTensor:
    b, i_q, h, wd = x.shape
    ho = conv_out_size(h, cfg.kernel, cfg.stride, cfg.padding)
    wo = conv_out_size(wd, cfg.kernel, cfg.stride, cfg.padding)
    p = cfg.padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, 0), (p, p), (p, p)))
    out = QTensor.zeros((b, cfg.out_q, ho, wo))
    for bb in range(b):
        for o in range(cfg.out_q):
            for oh in range(ho):
                for ow in range(wo):
                    acc = Quaternion(0.0, 0.0, 0.0, 0.0)
                    for i in range(i_q):
                        for ki in range(cfg.kernel):
                            for kj in range(cfg.kernel):
                                wq = _at(w.kernel, o, i, ki, kj)
                                xq = Quaternion(*(
                                    xp[c, bb, i, oh * cfg.stride + ki, ow * cfg.stride + kj]
                                    for c in range(4)
                                ))
                                acc = acc.add(hamilton_product(wq, xq))
                    if w.bias is not None:
                        acc = acc.add(_at(w.bias, o))
                    out.data[:, bb, o, oh, ow] = acc
    return out


class TestQDense:
    def test_quaternion_identity_weight(self, rng):
        x = _qt(rng, (3, 5))
        kernel = QTensor.zeros((5, 5))
        kernel.q0[...] = np.eye(5)
        y = qdense_forward(x, QWeight(kernel))
        assert y.allclose(x)

    def test_single_channel_matches_hamilton(self, rng):
        # weight = pure i unit: output must be i * x
        kernel = QTensor.zeros((1, 1))
        kernel.q1[...] = 1.0
        x = _qt(rng, (4, 1))
        y = qdense_forward(x, QWeight(kernel))
        for bb in range(4):
            want = hamilton_product(Quaternion(0, 1, 0, 0), _at(x, bb, 0))
            got = _at(y, bb, 0)
            assert all(abs(a - b) < 1e-12 for a, b in zip(got, want))

    def test_general_weight_matches_scalar_oracle(self, rng):
        x = _qt(rng, (2, 3))
        w = QWeight(_qt(rng, (4, 3)), _qt(rng, (4,)))
        assert qdense_forward(x, w).allclose(dense_oracle(x, w))

    def test_parameter_ratio_quarter(self):
        w = quaternion_init((16, 16), 16, 16, "glorot", 0)
        assert 4 * w.kernel.size == 1024  # vs 64*64 = 4096 for the real layer
        assert w.real_parameter_count() == 1024 + 64

    def test_dimension_mismatch(self, rng):
        x = _qt(rng, (2, 3))
        with pytest.raises(ShapeMismatchError):
            qdense_forward(x, QWeight(_qt(rng, (4, 5))))


class TestQConv2d:
    def test_identity_one_by_one(self, rng):
        x = _qt(rng, (2, 3, 4, 4))
        kernel = QTensor.zeros((3, 3, 1, 1))
        kernel.q0[:, :, 0, 0] = np.eye(3)
        cfg = ConvConfig(1, 1, 0, 3, 3)
        assert qconv2d_forward(x, QWeight(kernel), cfg).allclose(x)

    def test_one_by_one_equals_dense_per_pixel(self, rng):
        x = _qt(rng, (2, 3, 3, 3))
        kernel = _qt(rng, (2, 3, 1, 1))
        bias = _qt(rng, (2,))
        cfg = ConvConfig(1, 1, 0, 3, 2)
        y = qconv2d_forward(x, QWeight(kernel, bias), cfg)
        wd = QWeight(QTensor(kernel.data[:, :, :, 0, 0]), bias)
        for ph in range(3):
            for pw in range(3):
                pix = QTensor(np.ascontiguousarray(x.data[:, :, :, ph, pw]))
                want = qdense_forward(pix, wd)
                assert np.allclose(y.data[:, :, :, ph, pw], want.data, atol=1e-12)

    def test_shape_arithmetic(self, rng):
        x = _qt(rng, (1, 2, 8, 8))
        w = QWeight(_qt(rng, (2, 2, 3, 3)))
        y = qconv2d_forward(x, w, ConvConfig(3, 1, 1, 2, 2))
        assert y.shape == (1, 2, 8, 8)

    def test_matches_scalar_loop_oracle(self, rng):
        x = _qt(rng, (2, 2, 4, 4))
        w = QWeight(_qt(rng, (2, 2, 3, 3)), _qt(rng, (2,)))
        cfg = ConvConfig(3, 1, 1, 2, 2)
        got = qconv2d_forward(x, w, cfg)
        want = conv_oracle(x, w, cfg)
        assert np.allclose(got.data, want.data, atol=1e-12)

    def test_strided_matches_oracle(self, rng):
        x = _qt(rng, (1, 2, 6, 6))
        w = QWeight(_qt(rng, (3, 2, 2, 2)))
        cfg = ConvConfig(2, 2, 0, 2, 3)
        assert np.allclose(
            qconv2d_forward(x, w, cfg).data, conv_oracle(x, w, cfg).data, atol=1e-12
        )

    def test_kernel_larger_than_padded_input(self, rng):
        x = _qt(rng, (1, 1, 2, 2))
        w = QWeight(_qt(rng, (1, 1, 5, 5)))
        with pytest.raises(ShapeMismatchError):
            qconv2d_forward(x, w, ConvConfig(5, 1, 0, 1, 1))


class TestTransposedConv:
    def test_shape_formula(self, rng):
        assert tconv_out_size(8, 4, 2, 1) == 16
        x = _qt(rng, (1, 2, 8, 8))
        w = QWeight(_qt(rng, (2, 2, 4, 4)))
        y = qtransposed_conv2d_forward(x, w, ConvConfig(4, 2, 1, 2, 2))
        assert y.shape == (1, 2, 16, 16)

    def test_identity_one_by_one(self, rng):
        x = _qt(rng, (2, 3, 4, 4))
        kernel = QTensor.zeros((3, 3, 1, 1))
        kernel.q0[:, :, 0, 0] = np.eye(3)
        y = qtransposed_conv2d_forward(x, QWeight(kernel), ConvConfig(1, 1, 0, 3, 3))
        assert y.allclose(x)

    def test_adjoint_of_conv_with_conjugated_weights(self, rng):
        """<conv(x), g> = <x, tconv(g, adapted w)>: the input gradient of the
        quaternion conv equals the transposed conv with conjugated kernel."""
        from quatgan import autodiff as ad

        x = _qt(rng, (2, 2, 4, 4))
        kernel = _qt(rng, (3, 2, 3, 3))
        cfg = ConvConfig(3, 1, 1, 2, 3)
        g = _qt(rng, (2, 3, 4, 4))

        tape = ad.Tape()
        xn = tape.param("x", x)
        y = ad.qconv2d(xn, tape.constant(kernel), None, cfg)
        loss = ad.inner_const(y, g)
        dx = tape.backward(loss)["x"]

        adapted = kernel.data.copy()
        adapted[1:] = -adapted[1:]
        tw = QWeight(QTensor(adapted))  # (out,in,k,k) already matches the (in,out) slot
        got = qtransposed_conv2d_forward(g, tw, ConvConfig(3, 1, 1, 3, 2))
        assert np.allclose(got.data, dx.data, atol=1e-10)

    def test_im2col_col2im_adjoint(self, rng):
        x = rng.standard_normal((2, 3, 5, 5))
        cols = rng.standard_normal((2, 25, 27))
        lhs = (im2col(x, 3, 1, 1) * cols).sum()
        rhs = (x * col2im(cols, x.shape, 3, 1, 1)).sum()
        assert abs(lhs - rhs) < 1e-10


class TestSplitOps:
    def test_relu_example(self):
        x = QTensor(np.array([-1.0, 2.0, -3.0, 4.0]).reshape(4, 1))
        y = split_activation(x, "relu")
        assert np.allclose(y.data.reshape(4), [0.0, 2.0, 0.0, 4.0])

    def test_tanh_zero(self):
        z = QTensor.zeros((3, 3))
        assert split_activation(z, "tanh").allclose(z)

    def test_sigmoid_range(self, rng):
        y = split_activation(_qt(rng, (10,)), "sigmoid")
        assert np.all(y.data > 0.0) and np.all(y.data < 1.0)

    def test_leaky_relu_slope(self):
        x = QTensor(np.array([-2.0, 2.0, -1.0, 1.0]).reshape(4, 1))
        y = split_activation(x, "leaky_relu", alpha=0.2)
        assert np.allclose(y.data.reshape(4), [-0.4, 2.0, -0.2, 1.0])

    def test_unknown_kind(self, rng):
        with pytest.raises(ConfigError):
            split_activation(_qt(rng, (2,)), "swish")

    def test_avg_pool_constant(self):
        x = QTensor(np.full((4, 1, 1, 4, 4), 2.5))
        y = split_pool(x, "avg", 2)
        assert np.allclose(y.data, 2.5)

    def test_sum_pool_ones(self):
        x = QTensor(np.ones((4, 1, 1, 4, 4)))
        y = split_pool(x, "sum", 2)
        assert y.shape == (1, 1, 2, 2)
        assert np.allclose(y.data, 4.0)

    def test_global_sum_pool_matches_loop(self, rng):
        x = _qt(rng, (2, 3, 4, 4))
        y = global_sum_pool(x)
        assert y.shape == (2, 3, 1, 1)
        for c in range(4):
            for b in range(2):
                for ch in range(3):
                    assert abs(y.data[c, b, ch, 0, 0] - x.data[c, b, ch].sum()) < 1e-12

    def test_pool_divisibility(self, rng):
        with pytest.raises(ShapeMismatchError):
            split_pool(_qt(rng, (1, 1, 5, 5)), "avg", 2)

    def test_upsample(self, rng):
        x = _qt(rng, (1, 1, 2, 2))
        y = upsample_nearest2x(x)
        assert y.shape == (1, 1, 4, 4)
        assert np.all(y.data[:, :, :, 0:2, 0:2] == x.data[:, :, :, 0:1, 0:1])


class TestGuidedMaxPool:
    def test_amplitude_wins(self):
        x = QTensor.zeros((1, 1, 2, 2))
        x.data[:, 0, 0, 0, 0] = [1.0, 0.0, 0.0, 0.0]   # amplitude 1
        x.data[:, 0, 0, 0, 1] = [0.0, 3.0, 0.0, 0.0]   # amplitude 3
        y = guided_max_pool(x, 2)
        assert np.allclose(y.data[:, 0, 0, 0, 0], [0.0, 3.0, 0.0, 0.0])

    def test_constant_input(self):
        x = QTensor(np.tile(np.array([1.0, -2.0, 0.5, 0.25]).reshape(4, 1, 1, 1, 1), (1, 1, 1, 4, 4)))
        y = guided_max_pool(x, 2)
        assert np.allclose(y.data, x.data[:, :, :, :2, :2])

    def test_no_component_mixing_vs_split_max(self):
        # split max would fabricate (2, 9): guided picks the whole quaternion
        x2 = QTensor.zeros((1, 1, 2, 2))
        x2.data[:, 0, 0, 0, 0] = [2.0, 0.0, 0.0, 0.0]
        x2.data[:, 0, 0, 0, 1] = [1.0, 9.0, 0.0, 0.0]
        got = guided_max_pool(x2, 2)
        assert np.allclose(got.data[:, 0, 0, 0, 0], [1.0, 9.0, 0.0, 0.0])
        split_max = x2.data.max(axis=(3, 4))
        assert np.allclose(split_max[:, 0, 0], [2.0, 9.0, 0.0, 0.0])  # the mix guided avoids

    def test_outputs_are_window_elements(self, rng):
        x = _qt(rng, (2, 2, 4, 4))
        y = guided_max_pool(x, 2)
        for b in range(2):
            for ch in range(2):
                for oh in range(2):
                    for ow in range(2):
                        window = x.data[:, b, ch, 2 * oh : 2 * oh + 2, 2 * ow : 2 * ow + 2]
                        got = y.data[:, b, ch, oh, ow]
                        matches = [
                            np.allclose(window[:, i, j], got)
                            for i in range(2)
                            for j in range(2)
                        ]
                        assert any(matches)


class TestInit:
    def test_sigma_formulas(self):
        assert abs(init_sigma(128, 128, "glorot") - 1.0 / np.sqrt(512)) < 1e-15
        assert abs(init_sigma(64, 256, "he") - 1.0 / np.sqrt(128)) < 1e-15
        with pytest.raises(DomainError):
            init_sigma(0, 4, "glorot")

    def test_seed_determinism(self):
        a = quaternion_init((8, 8), 8, 8, "glorot", 7)
        b = quaternion_init((8, 8), 8, 8, "glorot", 7)
        assert np.array_equal(a.kernel.data, b.kernel.data)

    @pytest.mark.parametrize("criterion,fans", [("glorot", (32, 48)), ("he", (32, 48))])
    def test_summed_component_variance_is_4_sigma_squared(self, criterion, fans):
        n = 100_000
        w = quaternion_init((n,), fans[0], fans[1], criterion, rng=3)
        sigma = init_sigma(fans[0], fans[1], criterion)
        total_var = sum(w.kernel.data[c].var() for c in range(4))
        assert abs(total_var - 4 * sigma**2) / (4 * sigma**2) < 0.05

    def test_component_means_near_zero(self):
        n = 100_000
        w = quaternion_init((n,), 16, 16, "glorot", rng=11)
        sigma = init_sigma(16, 16, "glorot")
        for c in range(4):
            comp = w.kernel.data[c]
            stderr = comp.std() / np.sqrt(n)
            assert abs(comp.mean()) < 3 * stderr + 1e-12, (c, comp.mean(), stderr)

    def test_bias_zero_by_default(self):
        w = quaternion_init((4, 4), 4, 4, "glorot", 0)
        assert np.all(w.bias.data == 0.0)
