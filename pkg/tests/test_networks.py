from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lulc.classifiers.networks import (
    CnnModel,
    MlpModel,
    cnn_feature_maps,
    gradient_check,
    loss_and_gradients,
    nn_fit,
    nn_predict,
)
from lulc.dataset import ChipDataset, normalize
from lulc.errors import ConfigError, DivergenceError, ShapeError
from lulc.schemas import TrainConfig


def _chips(n: int, size: int, channels: int, n_classes: int, seed: int, separable: bool = True) -> ChipDataset:
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    windows = rng.normal(0.0, 1.0, (n, size, size, channels))
    if separable:
        windows[:, :, :, 0] += labels[:, None, None] * 4.0
    else:
        labels = rng.permutation(labels)
    return ChipDataset(windows=windows, centers=np.zeros((n, 2)), labels=labels, split_tag="train")


def test_default_cnn_parameter_count():
    assert CnnModel.create(9, 10, 7).parameter_count() == 41_367


def test_mlp_gradients_match_finite_differences():
    for seed in range(10):
        data = _chips(6, 3, 2, 3, seed)
        model = MlpModel.create(3, 2, 3, hidden=5, seed=seed)
        assert gradient_check(model, data.windows, data.labels) < 1e-4


def test_small_cnn_gradients_match_finite_differences():
    for seed in range(10):
        data = _chips(4, 3, 2, 3, seed)
        model = CnnModel.create(3, 2, 3, widths=(3, 4), seed=seed)
        assert gradient_check(model, data.windows, data.labels) < 1e-4


def test_feature_maps_keep_the_grid():
    model = CnnModel.create(5, 3, 4, widths=(4, 6), seed=0)
    maps = cnn_feature_maps(model, np.random.default_rng(0).random((2, 5, 5, 3)))
    assert maps.shape == (2, 5, 5, 6)
    assert (maps >= 0).all()


def test_fit_learns_separable_chips():
    train = _chips(120, 3, 2, 3, seed=1)
    val = _chips(30, 3, 2, 3, seed=2)
    config = TrainConfig(max_epochs=30, early_stopping_patience=10, batch_size=16, learning_rate=0.01, seed=3)
    for model in (MlpModel.create(3, 2, 3, seed=0), CnnModel.create(3, 2, 3, widths=(8, 8, 8), seed=0)):
        fitted, curve = nn_fit(model, train, val, config)
        probs, ids = nn_predict(fitted, val.windows)
        assert (ids == val.labels).mean() >= 0.95
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)
        assert fitted.normalization is not None
        assert curve.epochs[0] == 1


def test_training_is_seeded():
    train = _chips(40, 3, 2, 2, seed=4)
    config = TrainConfig(max_epochs=5, early_stopping_patience=2, batch_size=8, seed=9)
    a, _ = nn_fit(CnnModel.create(3, 2, 2, widths=(4, 4, 4), seed=1), train, None, config)
    b, _ = nn_fit(CnnModel.create(3, 2, 2, widths=(4, 4, 4), seed=1), train, None, config)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])


def test_early_stopping_restores_best_epoch():
    train = _chips(60, 3, 2, 3, seed=5, separable=False)
    val = _chips(30, 3, 2, 3, seed=6, separable=False)
    config = TrainConfig(max_epochs=40, early_stopping_patience=3, batch_size=10, learning_rate=0.05, seed=0)
    fitted, curve = nn_fit(MlpModel.create(3, 2, 3, seed=2), train, val, config)
    assert curve.epochs_run <= 40
    if curve.stopped_early:
        assert curve.epochs_run - curve.best_epoch == 3
    _, ids = nn_predict(fitted, val.windows)
    assert (ids == val.labels).mean() == curve.val_accuracy[curve.best_epoch - 1]
    assert max(curve.val_accuracy) == curve.val_accuracy[curve.best_epoch - 1]


def test_divergence_is_reported():
    train = _chips(20, 3, 2, 2, seed=7)
    config = TrainConfig(max_epochs=3, early_stopping_patience=1, batch_size=4, learning_rate=1e200)
    with np.errstate(all="ignore"):
        with pytest.raises(DivergenceError) as info:
            nn_fit(MlpModel.create(3, 2, 2, seed=0), train, None, config)
    assert info.value.epoch == 1


def test_input_shape_is_checked():
    model = MlpModel.create(3, 2, 3)
    with pytest.raises(ShapeError):
        nn_predict(model, np.zeros((2, 5, 5, 2)))
    with pytest.raises(ShapeError):
        nn_fit(model, _chips(10, 5, 2, 3, seed=0), None, TrainConfig(max_epochs=2, early_stopping_patience=1))


def test_identity_cnn_matches_mlp_on_one_channel():
    rng = np.random.default_rng(11)
    dense = rng.normal(size=(9, 3))
    bias = rng.normal(size=3)
    ones = {f"K{i}": np.ones((1, 1)) for i in (1, 2, 3)}
    zeros = {f"c{i}": np.zeros(1) for i in (1, 2, 3)}
    cnn = CnnModel(params={**ones, **zeros, "Wd": dense, "bd": bias}, chip_size=3, channels=1, n_classes=3, widths=(1, 1, 1))
    mlp = MlpModel(
        params={"W1": np.eye(9), "b1": np.zeros(9), "W2": dense, "b2": bias},
        chip_size=3, channels=1, n_classes=3, hidden=9,
    )
    # non-negative chips pass every ReLU unchanged
    windows = rng.random((20, 3, 3, 1))
    cnn_probs, cnn_ids = nn_predict(cnn, windows)
    mlp_probs, mlp_ids = nn_predict(mlp, windows)
    np.testing.assert_allclose(cnn_probs, mlp_probs, rtol=1e-12)
    np.testing.assert_array_equal(cnn_ids, mlp_ids)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_pointwise_convolutions_follow_pixel_shuffles(seed):
    rng = np.random.default_rng(seed)
    model = CnnModel.create(5, 3, 4, widths=(4, 6, 5), seed=seed)
    windows = rng.normal(size=(3, 5, 5, 3))
    order = rng.permutation(25)
    shuffled = windows.reshape(3, 25, 3)[:, order].reshape(3, 5, 5, 3)
    maps = cnn_feature_maps(model, windows).reshape(3, 25, -1)
    np.testing.assert_allclose(cnn_feature_maps(model, shuffled).reshape(3, 25, -1), maps[:, order], rtol=1e-12, atol=1e-15)


def test_zero_network_only_moves_the_output_bias():
    labels = np.array([0, 1, 2, 0])
    windows = np.zeros((4, 3, 3, 2))
    for model in (MlpModel.create(3, 2, 3, hidden=4), CnnModel.create(3, 2, 3, widths=(2, 3))):
        model = replace(model, params={k: np.zeros_like(v) for k, v in model.params.items()})
        loss, grads = loss_and_gradients(model, windows, labels)
        assert loss == pytest.approx(np.log(3.0))
        output_bias = "b2" if model.kind == "mlp" else "bd"
        np.testing.assert_allclose(grads[output_bias], 1.0 / 3.0 - np.array([2, 1, 1]) / 4.0, atol=1e-15)
        for name, grad in grads.items():
            if name != output_bias:
                assert not grad.any(), name
        assert gradient_check(model, windows, labels, names=[output_bias]) < 1e-6


def test_loss_halves_within_twenty_epochs():
    train = _chips(80, 3, 2, 2, seed=12)
    model = CnnModel.create(3, 2, 2, widths=(8, 8, 8), seed=4)
    initial, _ = loss_and_gradients(model, normalize(train)[0].windows, train.labels)
    config = TrainConfig(max_epochs=20, early_stopping_patience=19, batch_size=16, learning_rate=0.01, seed=1)
    _, curve = nn_fit(model, train, None, config)
    assert curve.epochs_run <= 20
    assert min(curve.train_loss) <= 0.5 * initial


def test_zero_epochs_is_a_config_error():
    with pytest.raises(ConfigError) as info:
        TrainConfig(max_epochs=0)
    assert info.value.field == "train.nn.max_epochs"


def test_reordered_channels_with_reordered_kernels_give_the_same_maps():
    rng = np.random.default_rng(21)
    model = CnnModel.create(3, 4, 3, widths=(5, 6), seed=2)
    windows = rng.normal(size=(6, 3, 3, 4))
    order = rng.permutation(4)
    swapped = replace(model, params={**model.params, "K1": model.params["K1"][order]})
    np.testing.assert_allclose(
        cnn_feature_maps(swapped, windows[..., order]), cnn_feature_maps(model, windows), rtol=1e-12, atol=1e-15
    )
