import struct
import zlib

import numpy as np
import pytest

from rigscan.bids import Label
from rigscan.errors import (ChecksumMismatch, ConfigError, InsufficientData, ModelFileError,
                            ShapeMismatch, VersionMismatch)
from rigscan.model import (CnnModel, TrainConfig, load_model, model_bytes, parse_model, predict,
                           save_model, train)
from rigscan.nn import OptimizerConfig


def sanity_corpus(n=20, size=32):
    """Half all-dark, half all-light images."""
    x = np.zeros((n, 1, size, size))
    x[n // 2:] = 1.0
    y = np.array([0] * (n // 2) + [1] * (n - n // 2))
    return x, y


def test_separable_corpus_reaches_full_training_accuracy():
    x, y = sanity_corpus()
    model, report = train(x, y, TrainConfig(epochs=40, seed=0))
    assert len(report.epochs) == 40
    assert report.epochs[-1].train_accuracy == 1.0
    assert report.epochs[-1].loss < report.epochs[0].loss
    assert report.n_train + report.n_validation == 20 and report.n_validation == 2
    assert list(model.classify(model.predict_proba(x))) == list(y)


def test_shuffled_labels_give_chance_validation_accuracy():
    rng = np.random.default_rng(11)
    x = rng.random((200, 1, 32, 32))
    y = rng.permutation(np.repeat([0, 1], 100))
    _, report = train(x, y, TrainConfig(epochs=5, validation_fraction=0.5, seed=3))
    assert abs(report.epochs[-1].val_accuracy - 0.5) <= 0.15


def test_training_is_deterministic(tmp_path):
    x, y = sanity_corpus(12)
    cfg = TrainConfig(epochs=3, batch_size=4, seed=5)
    m1, r1 = train(x, y, cfg)
    m2, r2 = train(x, y, cfg)
    assert r1 == r2
    assert model_bytes(m1) == model_bytes(m2)
    r1.to_csv(tmp_path / "a.csv")
    r2.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_seed_changes_the_model():
    x, y = sanity_corpus(12)
    m1, _ = train(x, y, TrainConfig(epochs=1, seed=1))
    m2, _ = train(x, y, TrainConfig(epochs=1, seed=2))
    assert model_bytes(m1) != model_bytes(m2)


def test_sgd_optimizer_trains_too():
    x, y = sanity_corpus()
    cfg = TrainConfig(epochs=10, optimizer=OptimizerConfig("sgd", learning_rate=0.05), seed=0)
    _, report = train(x, y, cfg)
    assert report.epochs[-1].loss < report.epochs[0].loss


def test_train_preconditions():
    x, y = sanity_corpus()
    with pytest.raises(InsufficientData):
        train(x[:11], y[:11])
    with pytest.raises(ShapeMismatch):
        train(x, y[:-1])
    with pytest.raises(ShapeMismatch):
        train(np.zeros((4, 1, 32, 30)), [0, 0, 1, 1])


@pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"batch_size": 0},
                                    {"validation_fraction": 0.0}, {"validation_fraction": 1.0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_zero_model_predicts_one_half_and_collusive():
    model = CnnModel.build(64)
    p, cls = predict(model, np.random.default_rng(0).random((64, 64)))
    assert p == 0.5
    assert cls is Label.COLLUSIVE


def test_threshold_rule():
    model = CnnModel.build(32, threshold=0.5)
    assert list(model.classify([0.7, 0.5, 0.4999])) == [1, 1, 0]


def test_predict_rejects_wrong_size():
    with pytest.raises(ShapeMismatch):
        predict(CnnModel.build(64), np.zeros((32, 32)))


def test_save_load_preserves_predictions(tmp_path):
    model = CnnModel.build(64, np.random.default_rng(4), threshold=0.4)
    images = np.random.default_rng(5).random((100, 1, 64, 64))
    path = tmp_path / "m.rgsn"
    save_model(model, path)
    back = load_model(path)
    assert back.threshold == 0.4
    np.testing.assert_array_equal(back.predict_proba(images), model.predict_proba(images))
    for a, b in zip(model.network.params, back.network.params):
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()
    assert model_bytes(back) == path.read_bytes()


def test_model_file_corruption():
    data = model_bytes(CnnModel.build(32, np.random.default_rng(0)))
    assert data[:4] == b"RGSN"
    with pytest.raises(ChecksumMismatch):
        parse_model(data[:-100])
    flipped = bytearray(data)
    flipped[200] ^= 1
    with pytest.raises(ChecksumMismatch):
        parse_model(bytes(flipped))
    with pytest.raises(ModelFileError):
        parse_model(b"NOPE" + data[4:])


def test_future_version_rejected():
    data = bytearray(model_bytes(CnnModel.build(32)))
    struct.pack_into("<H", data, 4, 99)
    body = bytes(data[:-4])
    data = body + struct.pack("<I", zlib.crc32(body))
    with pytest.raises(VersionMismatch):
        parse_model(data)
