import hashlib
import struct

import numpy as np
import pytest

from lulc.classifiers import predict_windows
from lulc.classifiers.forest import forest_fit
from lulc.classifiers.kmeans import kmeans_fit, map_clusters
from lulc.classifiers.networks import CnnModel, MlpModel, nn_fit
from lulc.classifiers.persistence import load_model, model_kind, save_model
from lulc.dataset import ChipDataset
from lulc.errors import FormatError, IoError
from lulc.schemas import ForestParams, TrainConfig


@pytest.fixture
def chips() -> ChipDataset:
    rng = np.random.default_rng(0)
    labels = np.arange(30) % 3
    windows = rng.normal(size=(30, 3, 3, 2))
    windows[:, :, :, 1] += labels[:, None, None] * 2.0
    return ChipDataset(windows=windows, centers=np.zeros((30, 2)), labels=labels)


def _models(chips: ChipDataset) -> list:
    config = TrainConfig(max_epochs=3, early_stopping_patience=1, batch_size=10)
    kmeans = kmeans_fit(chips.center_pixels(), 3, seed=1)
    return [
        kmeans,
        map_clusters(kmeans, chips.center_pixels(), chips.labels, 3),
        forest_fit(chips.flattened(), chips.labels, ForestParams(n_estimators=4), seed=2),
        nn_fit(MlpModel.create(3, 2, 3, hidden=6), chips, None, config)[0],
        nn_fit(CnnModel.create(3, 2, 3, widths=(4, 4, 4)), chips, None, config)[0],
    ]


def test_reloaded_models_predict_identically(tmp_path, chips):
    batch = np.random.default_rng(9).normal(size=(50, 3, 3, 2))
    for i, model in enumerate(_models(chips)):
        path = tmp_path / f"model_{i}.lkm1"
        save_model(model, path)
        back = load_model(path, expected_kind=model_kind(model))
        assert model_kind(back) == model_kind(model)
        np.testing.assert_array_equal(predict_windows(back, batch), predict_windows(model, batch))


def test_saving_is_deterministic(tmp_path, chips):
    model = _models(chips)[2]
    save_model(model, tmp_path / "a.lkm1")
    save_model(model, tmp_path / "b.lkm1")
    assert (tmp_path / "a.lkm1").read_bytes() == (tmp_path / "b.lkm1").read_bytes()


def test_corruption_is_detected(tmp_path, chips):
    path = tmp_path / "model.lkm1"
    save_model(_models(chips)[3], path)
    payload = bytearray(path.read_bytes())
    payload[40] ^= 0xFF
    path.write_bytes(bytes(payload))
    with pytest.raises(FormatError):
        load_model(path)


def test_wrong_magic_kind_and_version(tmp_path, chips):
    path = tmp_path / "model.lkm1"
    save_model(_models(chips)[0], path)
    payload = path.read_bytes()
    with pytest.raises(FormatError):
        load_model(path, expected_kind="cnn")

    (tmp_path / "magic.lkm1").write_bytes(b"NOPE" + payload[4:])
    with pytest.raises(FormatError):
        load_model(tmp_path / "magic.lkm1")

    body = bytearray(payload[:-32])
    struct.pack_into("<H", body, 5, 2)
    (tmp_path / "v2.lkm1").write_bytes(bytes(body) + hashlib.sha256(bytes(body)).digest())
    with pytest.raises(FormatError, match="version 2"):
        load_model(tmp_path / "v2.lkm1")


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_model(tmp_path / "absent.lkm1")
