"""Primitive-level forward oracles and gradient properties."""

import numpy as np
import pytest

from trajbehav import autodiff as ad
from trajbehav.autodiff import Parameter, Tensor
from trajbehav.errors import ConfigError, DataError, DimensionError


def fd_check_primitive(build_loss, params, step=1e-5, tol=1e-5):
    """Central finite differences vs reverse-mode for every element."""
    for p in params:
        p.zero_grad()
    build_loss().backward()
    analytic = {id(p): p.grad.copy() for p in params}
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        an = analytic[id(p)].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = build_loss().data.item()
            flat[i] = orig - step
            lm = build_loss().data.item()
            flat[i] = orig
            fd = (lp - lm) / (2 * step)
            worst = max(worst, abs(fd - an[i]) / max(abs(fd), abs(an[i]), 1e-3))
    assert worst < tol, f"max relative error {worst}"


def _sum_all(t):
    flat = ad.reshape(t, (1, t.data.size))
    ones = Tensor(np.ones((t.data.size, 1)))
    return ad.matmul(flat, ones)


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = ad.matmul(a, Tensor(np.eye(2)))
        assert np.array_equal(out.data, a.data)

    def test_identity_times_column(self):
        out = ad.matmul(Tensor(np.eye(2)), Tensor(np.array([[5.0], [7.0]])))
        assert np.array_equal(out.data, [[5.0], [7.0]])

    def test_matches_triple_loop(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        out = ad.matmul(Tensor(a), Tensor(b)).data
        expect = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expect[i, j] += a[i, k] * b[k, j]
        assert np.abs(out - expect).max() < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradients(self, rng):
        for trial in range(100):
            r = np.random.default_rng(trial)
            a = Parameter(r.normal(size=(2, 3)), "a")
            b = Parameter(r.normal(size=(3, 2)), "b")
            w = r.normal(size=(2, 2))
            fd_check_primitive(
                lambda: _sum_all(ad.mul(ad.matmul(a, b), Tensor(w))), [a, b]
            )


class TestConv1d:
    def test_zero_input_gives_bias(self, rng):
        x = Tensor(np.zeros((2, 3, 5)))
        w = Tensor(rng.normal(size=(4, 3, 2)))
        b = Tensor(np.array([1.0, -2.0, 0.5, 3.0]))
        out = ad.conv1d_valid(x, w, b).data
        assert out.shape == (2, 4, 4)
        for c in range(4):
            assert np.allclose(out[:, c, :], b.data[c])

    def test_finite_difference_kernel(self):
        x = Tensor(np.array([1.0, 2.0, 4.0, 7.0, 11.0]).reshape(1, 1, 5))
        w = Tensor(np.array([-1.0, 1.0]).reshape(1, 1, 2))
        b = Tensor(np.zeros(1))
        out = ad.conv1d_valid(x, w, b).data
        # cross-correlation with [-1, 1] is the first difference
        assert np.allclose(out[0, 0], [1.0, 2.0, 3.0, 4.0])

    def test_matches_quadruple_loop(self, rng):
        x = rng.normal(size=(2, 4, 5))
        w = rng.normal(size=(3, 4, 3))
        b = rng.normal(size=3)
        out = ad.conv1d_valid(Tensor(x), Tensor(w), Tensor(b)).data
        expect = np.zeros((2, 3, 3))
        for bi in range(2):
            for o in range(3):
                for t in range(3):
                    acc = b[o]
                    for c in range(4):
                        for j in range(3):
                            acc += x[bi, c, t + j] * w[o, c, j]
                    expect[bi, o, t] = acc
        assert np.abs(out - expect).max() < 1e-12

    def test_output_length_property(self, rng):
        for trial in range(50):
            r = np.random.default_rng(trial)
            t_len = int(r.integers(1, 12))
            k = int(r.integers(1, t_len + 1))
            x = Tensor(r.normal(size=(1, 2, t_len)))
            w = Tensor(r.normal(size=(3, 2, k)))
            out = ad.conv1d_valid(x, w, Tensor(np.zeros(3)))
            assert out.data.shape[2] == t_len - k + 1

    def test_kernel_longer_than_sequence(self):
        with pytest.raises(ConfigError):
            ad.conv1d_valid(
                Tensor(np.zeros((1, 1, 3))),
                Tensor(np.zeros((1, 1, 4))),
                Tensor(np.zeros(1)),
            )

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ad.conv1d_valid(
                Tensor(np.zeros((1, 2, 5))),
                Tensor(np.zeros((1, 3, 2))),
                Tensor(np.zeros(1)),
            )

    def test_gradients(self):
        for trial in range(100):
            r = np.random.default_rng(trial)
            x = Parameter(r.normal(size=(2, 2, 5)), "x")
            w = Parameter(r.normal(size=(2, 2, 3)), "w")
            b = Parameter(r.normal(size=2), "b")
            mix = r.normal(size=(2, 2, 3))
            fd_check_primitive(
                lambda: _sum_all(ad.mul(ad.conv1d_valid(x, w, b), Tensor(mix))),
                [x, w, b],
            )


class TestMaxOverTime:
    def test_simple(self):
        out = ad.max_over_time(Tensor(np.array([[[1.0, 5.0, 3.0]]])))
        assert out.data.shape == (1, 1)
        assert out.data[0, 0] == 5.0

    def test_tie_routes_gradient_to_first_index(self):
        x = Parameter(np.array([[[2.0, 2.0, 2.0]]]), "x")
        out = ad.max_over_time(x)
        assert out.data[0, 0] == 2.0
        _sum_all(out).backward()
        assert np.array_equal(x.grad, [[[1.0, 0.0, 0.0]]])

    def test_matches_scan(self, rng):
        x = rng.normal(size=(3, 4, 7))
        out = ad.max_over_time(Tensor(x)).data
        for b in range(3):
            for c in range(4):
                best = x[b, c, 0]
                for t in range(1, 7):
                    if x[b, c, t] > best:
                        best = x[b, c, t]
                assert out[b, c] == best

    def test_gradients(self):
        for trial in range(100):
            r = np.random.default_rng(trial)
            x = Parameter(r.normal(size=(2, 3, 5)), "x")
            mix = r.normal(size=(2, 3))
            fd_check_primitive(
                lambda: _sum_all(ad.mul(ad.max_over_time(x), Tensor(mix))), [x]
            )


class TestLSTMCell:
    def _weights(self, d_in, hidden, rng=None, zero=False):
        if zero:
            wx = np.zeros((d_in, 4 * hidden))
            wh = np.zeros((hidden, 4 * hidden))
            b = np.zeros(4 * hidden)
        else:
            wx = rng.normal(size=(d_in, 4 * hidden)) * 0.5
            wh = rng.normal(size=(hidden, 4 * hidden)) * 0.5
            b = rng.normal(size=4 * hidden) * 0.5
        return Parameter(wx, "wx"), Parameter(wh, "wh"), Parameter(b, "b")

    def test_zero_weights_zero_output(self, rng):
        wx, wh, b = self._weights(4, 3, zero=True)
        x = Tensor(rng.normal(size=(2, 4)))
        h = Tensor(np.zeros((2, 3)))
        c = Tensor(np.zeros((2, 3)))
        h2, c2 = ad.lstm_cell(x, h, c, wx, wh, b)
        assert np.allclose(h2.data, 0.0)

    def test_forget_gate_saturation_preserves_cell(self, rng):
        hidden = 3
        wx, wh, b = self._weights(4, hidden, zero=True)
        b.data[hidden:2 * hidden] = 100.0   # forget gate ~ 1
        b.data[:hidden] = -100.0            # input gate ~ 0
        x = Tensor(rng.normal(size=(2, 4)))
        h = Tensor(np.zeros((2, hidden)))
        c = Tensor(rng.normal(size=(2, hidden)))
        _, c2 = ad.lstm_cell(x, h, c, wx, wh, b)
        assert np.abs(c2.data - c.data).max() < 1e-6

    def test_gradients(self):
        for trial in range(100):
            r = np.random.default_rng(trial)
            wx, wh, b = self._weights(3, 2, rng=r)
            x = Tensor(r.normal(size=(2, 3)))
            h0 = Tensor(r.normal(size=(2, 2)))
            c0 = Tensor(r.normal(size=(2, 2)))
            mix_h = r.normal(size=(2, 2))
            mix_c = r.normal(size=(2, 2))

            def loss():
                h1, c1 = ad.lstm_cell(x, h0, c0, wx, wh, b)
                h2, c2 = ad.lstm_cell(x, h1, c1, wx, wh, b)
                return _sum_all(
                    ad.add(ad.mul(h2, Tensor(mix_h)), ad.mul(c2, Tensor(mix_c)))
                )

            fd_check_primitive(loss, [wx, wh, b])

    def test_shape_mismatch(self):
        wx, wh, b = self._weights(4, 3, zero=True)
        with pytest.raises(DimensionError):
            ad.lstm_cell(
                Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 3))),
                Tensor(np.zeros((2, 3))), wx, wh, b,
            )


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        logits = Tensor(np.zeros((2, 13)))
        loss = ad.softmax_cross_entropy(logits, np.array([0, 5]))
        assert abs(loss.item() - np.log(13)) < 1e-12

    def test_confident_correct_goes_to_zero(self):
        logits = np.zeros((1, 6))
        logits[0, 2] = 100.0
        loss = ad.softmax_cross_entropy(Tensor(logits), np.array([2]))
        assert loss.item() < 1e-6

    def test_matches_log_sum_exp_oracle(self, rng):
        z = rng.normal(size=(4, 6))
        labels = rng.integers(0, 6, size=4)
        loss = ad.softmax_cross_entropy(Tensor(z), labels).item()
        expect = 0.0
        for i in range(4):
            expect += np.log(np.exp(z[i]).sum()) - z[i, labels[i]]
        assert abs(loss - expect / 4) < 1e-12

    def test_label_out_of_range_names_sample(self):
        with pytest.raises(DataError, match="sample index 1"):
            ad.softmax_cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 7, 1]))

    def test_weighted_reduces_to_plain_with_uniform_weights(self, rng):
        z = rng.normal(size=(5, 3))
        labels = rng.integers(0, 3, size=5)
        a = ad.softmax_cross_entropy(Tensor(z), labels).item()
        b = ad.softmax_cross_entropy(Tensor(z), labels, np.ones(3)).item()
        assert abs(a - b) < 1e-12

    def test_weighted_matches_direct_formula(self, rng):
        z = rng.normal(size=(6, 4))
        labels = rng.integers(0, 4, size=6)
        w = np.array([0.5, 2.0, 1.0, 3.0])
        loss = ad.softmax_cross_entropy(Tensor(z), labels, w).item()
        num = den = 0.0
        for i in range(6):
            nll = np.log(np.exp(z[i]).sum()) - z[i, labels[i]]
            num += w[labels[i]] * nll
            den += w[labels[i]]
        assert abs(loss - num / den) < 1e-12

    def test_softmax_rows_sum_to_one(self, rng):
        for trial in range(100):
            r = np.random.default_rng(trial)
            p = ad.softmax(r.normal(size=(3, 7)) * r.uniform(0.1, 50))
            assert (p >= 0).all()
            assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-12

    def test_gradients(self):
        for trial in range(100):
            r = np.random.default_rng(trial)
            z = Parameter(r.normal(size=(3, 4)), "z")
            labels = r.integers(0, 4, size=3)
            w = r.uniform(0.5, 2.0, size=4)
            fd_check_primitive(
                lambda: ad.softmax_cross_entropy(z, labels, w), [z]
            )


class TestOtherPrimitives:
    def test_concat_and_mean_gradients(self):
        for trial in range(100):
            r = np.random.default_rng(trial)
            a = Parameter(r.normal(size=(2, 3)), "a")
            b = Parameter(r.normal(size=(2, 2)), "b")
            c = Parameter(r.normal(size=(2, 3)), "c")
            mix = r.normal(size=(2, 5))
            mix2 = r.normal(size=(2, 3))

            def loss():
                cat = ad.mul(ad.concat([a, b], axis=1), Tensor(mix))
                avg = ad.mul(ad.mean_tensors([a, c]), Tensor(mix2))
                return ad.add(_sum_all(cat), _sum_all(avg))

            fd_check_primitive(loss, [a, b, c])

    def test_activations_gradients(self):
        for trial in range(100):
            r = np.random.default_rng(trial)
            x = Parameter(r.normal(size=(3, 4)), "x")
            mix = r.normal(size=(3, 4))

            def loss():
                y = ad.add(ad.sigmoid(x), ad.add(ad.tanh(x), ad.relu(x)))
                return _sum_all(ad.mul(y, Tensor(mix)))

            fd_check_primitive(loss, [x])

    def test_determinism_bit_identical(self, rng):
        x = rng.normal(size=(2, 3, 5))
        w = rng.normal(size=(4, 3, 2))
        b = rng.normal(size=4)
        out1 = ad.conv1d_valid(Tensor(x), Tensor(w), Tensor(b)).data
        out2 = ad.conv1d_valid(Tensor(x.copy()), Tensor(w.copy()), Tensor(b.copy())).data
        assert np.array_equal(out1, out2)

    def test_finite_outputs_on_finite_inputs(self, rng):
        x = Parameter(rng.normal(size=(2, 5, 4)) * 100, "x")
        flat = ad.reshape(x, (2, 20))
        w = Parameter(rng.normal(size=(20, 3)) * 100, "w")
        loss = ad.softmax_cross_entropy(ad.matmul(flat, w), np.array([0, 2]))
        loss.backward()
        assert np.isfinite(loss.data).all()
        assert np.isfinite(x.grad).all()
        assert np.isfinite(w.grad).all()
