"""Training loop: schedule, determinism, convergence, isolation."""

import numpy as np
import pytest

from trajbehav.data import DatasetSplit, class_weights
from trajbehav.errors import ConfigError, DataError
from trajbehav.hmm import HMMClassifier
from trajbehav.metrics import recall_per_class
from trajbehav.train import TrainConfig, evaluate, lr_at, predict_batch, train

from conftest import blob_samples


def blob_split(rng, counts=(40, 40), spread=3.0, sigma=0.3, num_classes=None):
    num_classes = num_classes or len(counts)
    centers = [spread * c for c in range(num_classes)]
    samples = blob_samples(rng, counts, centers, sigma=sigma)
    n_train = [int(0.8 * c) for c in counts]
    train_s, test_s = [], []
    offset = 0
    for c, count in enumerate(counts):
        group = samples[offset:offset + count]
        train_s.extend(group[: n_train[c]])
        test_s.extend(group[n_train[c]:])
        offset += count
    names = [f"C{c}" for c in range(num_classes)]
    return DatasetSplit(train=train_s, test=test_s, class_names=names, seed=0)


def tiny_config(**kw):
    base = dict(epochs=3, batch_size=16, lr_switch_epoch=1, seed=0,
                hmm_states=2, hmm_max_iters=10)
    base.update(kw)
    return TrainConfig(**base)


class TestSchedule:
    def test_lr_schedule_values(self):
        config = TrainConfig()
        assert lr_at(config, 1) == 0.005
        assert lr_at(config, 40) == 0.005
        assert lr_at(config, 41) == 0.001
        assert lr_at(config, 60) == 0.001

    def test_log_reflects_schedule(self, rng):
        split = blob_split(rng)
        config = tiny_config(epochs=4, lr_switch_epoch=2)
        _, log = train("lstm", config, split)
        assert [e.lr for e in log.entries] == [0.005, 0.005, 0.001, 0.001]
        assert [e.epoch for e in log.entries] == [1, 2, 3, 4]

    def test_invalid_switch_epoch(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=10, lr_switch_epoch=10).validate()

    def test_batch_size_validated(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0).validate()


class TestTrainLoop:
    def test_zero_epochs_returns_initialized_model(self, rng):
        split = blob_split(rng)
        config = tiny_config(epochs=0)
        model, log = train("fusion", config, split)
        assert log.entries == []
        from trajbehav.models import build_model
        fresh = build_model("fusion", 2, seed=0, precision=config.precision)
        for name, p in model.parameters.items():
            assert np.array_equal(p.data, fresh.parameters[name].data)

    def test_same_seed_bit_identical_parameters(self, rng):
        split = blob_split(rng)
        config = tiny_config()
        m1, log1 = train("fusion", config, split)
        m2, log2 = train("fusion", config, split)
        for name in m1.parameters:
            assert np.array_equal(m1.parameters[name].data,
                                  m2.parameters[name].data)
        assert [e.loss for e in log1.entries] == [e.loss for e in log2.entries]

    def test_two_blob_convergence(self):
        rng = np.random.default_rng(3)
        split = blob_split(rng, counts=(60, 60), spread=2.0, sigma=0.4)
        config = TrainConfig(epochs=60, batch_size=256, lr_switch_epoch=40,
                             seed=1)
        model, log = train("fusion", config, split)
        assert log.entries[-1].loss < 0.1
        assert len(log.entries) == 60

    def test_empty_split_rejected(self):
        split = DatasetSplit(train=[], test=[], class_names=["A"], seed=0)
        with pytest.raises(ConfigError):
            train("fusion", tiny_config(), split)

    def test_epoch_loss_is_batch_weighted_mean(self, rng, monkeypatch):
        split = blob_split(rng, counts=(40, 40))
        config = tiny_config(epochs=1, batch_size=24, lr_switch_epoch=0)  # 24/24/16
        recorded = []
        import trajbehav.train as train_mod
        real = train_mod.ad.softmax_cross_entropy

        def spy(logits, labels, weights=None):
            loss = real(logits, labels, weights)
            recorded.append((loss.item(), len(labels)))
            return loss

        monkeypatch.setattr(train_mod.ad, "softmax_cross_entropy", spy)
        _, log = train("lstm", config, split)
        n = len(split.train)
        assert [b for _, b in recorded] == [24, 24, 16]
        expect = sum(l * b for l, b in recorded) / n
        assert abs(log.entries[0].loss - expect) < 1e-12

    def test_training_never_touches_test_samples(self, rng):
        split = blob_split(rng)

        class Exploding(list):
            def __iter__(self):
                raise AssertionError("training read the test split")

            def __getitem__(self, item):
                raise AssertionError("training read the test split")

        guarded = DatasetSplit(
            train=split.train, test=Exploding(split.test),
            class_names=split.class_names, seed=split.seed,
        )
        train("lstm", tiny_config(), guarded)

    def test_weighted_loss_path(self, rng):
        split = blob_split(rng, counts=(60, 12))
        weights = class_weights(split.train, 2)
        model, log = train("lstm", tiny_config(), split, loss_weights=weights)
        assert len(log.entries) == 3

    def test_hmm_training_one_model_per_class(self, rng):
        split = blob_split(rng, counts=(30, 30, 30), spread=4.0)
        clf, log = train("hmm", tiny_config(), split)
        assert isinstance(clf, HMMClassifier)
        assert len(clf.models) == 3
        assert len(log.entries) == 3


class TestEvaluate:
    def test_separable_blobs_near_perfect(self):
        rng = np.random.default_rng(5)
        split = blob_split(rng, counts=(60, 60), spread=4.0, sigma=0.2)
        config = TrainConfig(epochs=30, batch_size=64, lr_switch_epoch=20, seed=2)
        model, _ = train("fusion", config, split)
        rep = evaluate(model, split.train, split.class_names)
        assert rep.balanced_accuracy >= 0.99

    def test_uniform_logit_model_predicts_class_zero(self, rng):
        split = blob_split(rng, counts=(20, 20, 20))
        model, _ = train("fusion", tiny_config(epochs=0), split)
        for p in model.parameters.values():
            p.data[...] = 0.0
        rep = evaluate(model, split.test, split.class_names)
        assert rep.per_class[0]["recall"] == 1.0
        assert abs(rep.balanced_accuracy - 1.0 / 3.0) < 1e-12

    def test_evaluate_twice_identical(self, rng):
        split = blob_split(rng)
        model, _ = train("lstm", tiny_config(), split)
        r1 = evaluate(model, split.test, split.class_names)
        r2 = evaluate(model, split.test, split.class_names)
        assert r1.to_dict() == r2.to_dict()

    def test_empty_test_set_rejected(self, rng):
        split = blob_split(rng)
        model, _ = train("lstm", tiny_config(), split)
        with pytest.raises(ConfigError):
            evaluate(model, [], split.class_names)

    def test_predict_batch_dispatches_to_hmm(self, rng):
        split = blob_split(rng, counts=(30, 30), spread=5.0, sigma=0.2)
        clf, _ = train("hmm", tiny_config(), split)
        states = np.stack([s.states for s in split.test])
        preds = predict_batch(clf, states)
        labels = np.array([s.label for s in split.test])
        assert (preds == labels).mean() >= 0.9
