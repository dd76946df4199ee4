"""Model-level oracles: branch semantics, batch independence, gradients."""

import numpy as np
import pytest

from trajbehav import autodiff as ad
from trajbehav.autodiff import Tensor
from trajbehav.errors import ConfigError, DimensionError
from trajbehav.gradcheck import grad_check
from trajbehav.models import (
    Conv1DBaseline,
    Conv1DBaselineConfig,
    FusionConfig,
    FusionModel,
    LSTMBaseline,
    LSTMBaselineConfig,
    build_model,
    fusion_parameter_count,
    parameter_count,
    predict,
)


def reference_lstm_sequence(x_seq, wx, wh, b, hidden):
    """Independent single-sample LSTM loop (plain numpy, no tape)."""

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    h = np.zeros(hidden)
    c = np.zeros(hidden)
    hs = []
    for x in x_seq:
        pre = x @ wx + h @ wh + b
        i = sig(pre[:hidden])
        f = sig(pre[hidden:2 * hidden])
        g = np.tanh(pre[2 * hidden:3 * hidden])
        o = sig(pre[3 * hidden:])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs.append(h)
    return np.stack(hs)


def zero_model(model):
    for p in model.parameters.values():
        p.data[...] = 0.0
    return model


class TestBiLSTMBranch:
    def test_zero_weights_zero_feature(self, rng):
        model = zero_model(FusionModel(FusionConfig(num_classes=4), precision="verify"))
        batch = rng.normal(size=(3, 5, 4))
        feats = model.bilstm_features(batch).data
        assert feats.shape == (3, 128)
        assert np.allclose(feats, 0.0)

    def test_batch_order_invariance(self, rng):
        model = FusionModel(FusionConfig(num_classes=4), seed=3, precision="verify")
        batch = rng.normal(size=(6, 5, 4))
        perm = rng.permutation(6)
        out = model.bilstm_features(batch).data
        out_perm = model.bilstm_features(batch[perm]).data
        assert np.allclose(out[perm], out_perm)

    def test_matches_per_sample_sequential_reference(self, rng):
        cfg = FusionConfig(num_classes=4)
        model = FusionModel(cfg, seed=9, precision="verify")
        batch = rng.normal(size=(4, 5, 4))
        got = model.bilstm_features(batch).data
        h = cfg.lstm_hidden
        for b in range(4):
            seq = batch[b]
            layer_in = [seq[t] for t in range(5)]
            for layer in range(cfg.lstm_layers):
                pre = f"bilstm.l{layer}"
                fw = reference_lstm_sequence(
                    layer_in,
                    model.parameters[f"{pre}.fw.wx"].data,
                    model.parameters[f"{pre}.fw.wh"].data,
                    model.parameters[f"{pre}.fw.b"].data, h,
                )
                bw = reference_lstm_sequence(
                    layer_in[::-1],
                    model.parameters[f"{pre}.bw.wx"].data,
                    model.parameters[f"{pre}.bw.wh"].data,
                    model.parameters[f"{pre}.bw.b"].data, h,
                )[::-1]
                layer_in = [np.concatenate([fw[t], bw[t]]) for t in range(5)]
            expect = np.mean(layer_in, axis=0)
            assert np.abs(got[b] - expect).max() < 1e-10


class TestMSCNNBranch:
    def test_zero_input_zero_feature(self):
        model = FusionModel(FusionConfig(num_classes=4), seed=1, precision="verify")
        feats = model.mscnn_features(np.zeros((2, 5, 4))).data
        assert feats.shape == (2, 32)
        # zero input, zero conv biases: pooled activations are zero
        assert np.allclose(feats, 0.0)

    def test_concat_width_is_96(self, rng):
        model = FusionModel(FusionConfig(num_classes=4), seed=1, precision="verify")
        batch = rng.normal(size=(2, 5, 4))
        x = Tensor(batch.transpose(0, 2, 1))
        pooled = []
        for k in model.config.kernel_sizes:
            y = ad.conv1d_valid(
                x, model.parameters[f"mscnn.k{k}.w"], model.parameters[f"mscnn.k{k}.b"]
            )
            assert y.data.shape[2] == 5 - k + 1
            pooled.append(ad.max_over_time(ad.relu(y)))
        assert ad.concat(pooled, axis=1).data.shape == (2, 96)

    def test_matches_composed_primitive_oracle(self, rng):
        model = FusionModel(FusionConfig(num_classes=4), seed=5, precision="verify")
        batch = rng.normal(size=(3, 5, 4))
        got = model.mscnn_features(batch).data
        x = batch.transpose(0, 2, 1)
        pooled = []
        for k in model.config.kernel_sizes:
            w = model.parameters[f"mscnn.k{k}.w"].data
            b = model.parameters[f"mscnn.k{k}.b"].data
            length = 5 - k + 1
            y = np.zeros((3, 32, length))
            for bi in range(3):
                for o in range(32):
                    for t in range(length):
                        y[bi, o, t] = b[o] + (x[bi, :, t:t + k] * w[o]).sum()
            pooled.append(np.maximum(y, 0).max(axis=2))
        feats = np.concatenate(pooled, axis=1)
        fc1 = feats @ model.parameters["mscnn.fc1.w"].data \
            + model.parameters["mscnn.fc1.b"].data
        expect = np.maximum(fc1, 0)
        assert np.abs(got - expect).max() < 1e-10


class TestFusionForward:
    def test_zero_parameters_uniform_logits(self, rng):
        model = zero_model(FusionModel(FusionConfig(num_classes=6), precision="verify"))
        batch = rng.normal(size=(4, 5, 4))
        logits = model.forward(batch)
        assert np.allclose(logits.data, 0.0)
        loss = ad.softmax_cross_entropy(logits, np.zeros(4, dtype=int))
        assert abs(loss.item() - np.log(6)) < 1e-12

    def test_duplicated_sample_identical_rows(self, rng):
        model = FusionModel(FusionConfig(num_classes=5), seed=2, precision="verify")
        one = rng.normal(size=(1, 5, 4))
        batch = np.repeat(one, 3, axis=0)
        logits = model.forward(batch).data
        assert np.array_equal(logits[0], logits[1])
        assert np.array_equal(logits[0], logits[2])

    def test_single_vs_batch_row_equality(self, rng):
        model = FusionModel(FusionConfig(num_classes=5), seed=2, precision="verify")
        batch = rng.normal(size=(5, 5, 4))
        full = model.forward(batch).data
        for b in range(5):
            row = model.forward(batch[b:b + 1]).data[0]
            assert np.abs(row - full[b]).max() < 1e-6

    def test_shape_errors(self):
        model = FusionModel(FusionConfig(num_classes=5), seed=2)
        with pytest.raises(DimensionError):
            model.forward(np.zeros((2, 4, 4)))
        with pytest.raises(DimensionError):
            model.forward(np.zeros((2, 5, 3)))

    def test_parameter_count_formula(self):
        for c, mscnn in [(13, True), (6, True), (7, True), (6, False)]:
            cfg = FusionConfig(num_classes=c, use_mscnn=mscnn)
            model = FusionModel(cfg, seed=0)
            assert parameter_count(model) == fusion_parameter_count(cfg)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            FusionConfig(num_classes=1).validate()
        with pytest.raises(ConfigError):
            FusionConfig(num_classes=3, kernel_sizes=(2, 6)).validate()


class TestBaselines:
    def test_lstm_zero_parameters_uniform_logits(self, rng):
        model = zero_model(
            LSTMBaseline(LSTMBaselineConfig(num_classes=7), precision="verify")
        )
        logits = model.forward(rng.normal(size=(3, 5, 4))).data
        assert logits.shape == (3, 7)
        assert np.allclose(logits, 0.0)

    def test_conv1d_zero_parameters_uniform_logits(self, rng):
        model = zero_model(
            Conv1DBaseline(Conv1DBaselineConfig(num_classes=7), precision="verify")
        )
        logits = model.forward(rng.normal(size=(3, 5, 4))).data
        assert logits.shape == (3, 7)
        assert np.allclose(logits, 0.0)

    def test_conv1d_output_shape_for_any_batch(self, rng):
        model = Conv1DBaseline(Conv1DBaselineConfig(num_classes=4), seed=1)
        for b in (1, 2, 9):
            assert model.forward(rng.normal(size=(b, 5, 4))).data.shape == (b, 4)

    def test_lstm_requires_fixed_length(self, rng):
        model = LSTMBaseline(LSTMBaselineConfig(num_classes=4), seed=1)
        with pytest.raises(DimensionError):
            model.forward(rng.normal(size=(2, 1, 4)))

    def test_conv1d_layer_budget_validated(self):
        with pytest.raises(ConfigError):
            Conv1DBaselineConfig(num_classes=3, channels=(8, 8, 8, 8, 8)).validate()


class TestGradients:
    @pytest.mark.parametrize("kind", ["fusion", "lstm", "conv1d"])
    def test_full_model_gradcheck(self, kind, rng):
        model = build_model(kind, num_classes=4, seed=11, precision="verify")
        batch = rng.normal(size=(3, 5, 4))
        labels = rng.integers(0, 4, size=3)

        def forward():
            return ad.softmax_cross_entropy(model.forward(batch), labels)

        err = grad_check(forward, model.param_list(), max_elements=25, seed=7)
        assert err < 1e-5, f"{kind}: {err}"

    def test_bilstm_only_model_gradcheck(self, rng):
        model = FusionModel(
            FusionConfig(num_classes=4, use_mscnn=False), seed=11, precision="verify"
        )
        batch = rng.normal(size=(3, 5, 4))
        labels = rng.integers(0, 4, size=3)

        def forward():
            return ad.softmax_cross_entropy(model.forward(batch), labels)

        assert grad_check(forward, model.param_list(), max_elements=20, seed=7) < 1e-5


class TestPredict:
    def test_argmax(self):
        model = zero_model(FusionModel(FusionConfig(num_classes=3), precision="verify"))
        model.parameters["head.b"].data[...] = [0.1, 0.9, 0.3]
        out = predict(model, np.zeros((2, 5, 4)))
        assert list(out) == [1, 1]

    def test_tie_goes_to_lowest_index(self):
        model = zero_model(FusionModel(FusionConfig(num_classes=3), precision="verify"))
        model.parameters["head.b"].data[...] = [1.0, 1.0, 0.0]
        assert list(predict(model, np.zeros((1, 5, 4)))) == [0]

    def test_matches_scan_argmax(self, rng):
        model = FusionModel(FusionConfig(num_classes=6), seed=4, precision="verify")
        batch = rng.normal(size=(8, 5, 4))
        logits = model.forward(batch).data
        preds = predict(model, batch)
        for i in range(8):
            best = 0
            for c in range(1, 6):
                if logits[i, c] > logits[i, best]:
                    best = c
            assert preds[i] == best

    def test_argmax_invariant_under_increasing_transform(self, rng):
        logits = rng.normal(size=(10, 5))
        base = np.argmax(logits, axis=1)
        for f in (lambda z: 3 * z + 2, np.exp, lambda z: z ** 3):
            assert np.array_equal(np.argmax(f(logits), axis=1), base)
