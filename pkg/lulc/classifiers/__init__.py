"""
Chip classifiers and a common fit/predict surface over them.

kmeans clusters centre-pixel spectra; forest and mlp take flattened chips;
cnn takes the chip tensor.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Protocol, Tuple

import numpy as np

from lulc.classifiers.forest import ForestModel, forest_fit, forest_predict, forest_proba
from lulc.classifiers.kmeans import KMeansModel, kmeans_classes, kmeans_fit, map_clusters
from lulc.classifiers.networks import CnnModel, LearningCurve, MlpModel, NetworkModel, nn_fit, nn_predict
from lulc.classifiers.persistence import AnyModel, load_model, model_kind, save_model
from lulc.dataset import ChipDataset, stratified_holdout
from lulc.errors import ConfigError, ShapeError
from lulc.schemas import ForestParams, KMeansParams, TrainConfig

logger = logging.getLogger(__name__)

MODEL_NAMES = ("kmeans", "forest", "mlp", "cnn")
SUPERVISED = ("forest", "mlp", "cnn")


class Learner(Protocol):
    name: str

    def fit(self, dataset: ChipDataset, seed: int) -> Tuple[AnyModel, Optional[LearningCurve]]:
        ...

    def predict(self, model: AnyModel, windows: np.ndarray) -> np.ndarray:
        ...

    def scores(self, model: AnyModel, windows: np.ndarray) -> np.ndarray:
        ...


class _Predicts:
    def predict(self, model: AnyModel, windows: np.ndarray) -> np.ndarray:
        return predict_windows(model, windows)

    def scores(self, model: AnyModel, windows: np.ndarray) -> np.ndarray:
        return predict_scores(model, windows)


def _center(windows: np.ndarray) -> np.ndarray:
    half = windows.shape[1] // 2
    return windows[:, half, half, :]


@dataclass
class KMeansLearner(_Predicts):
    params: KMeansParams = field(default_factory=KMeansParams)
    n_classes: int = 7
    name: str = "kmeans"

    def fit(self, dataset: ChipDataset, seed: int):
        vectors = dataset.center_pixels()
        model = kmeans_fit(vectors, self.params.k, seed, self.params.max_iters, self.params.tol)
        if dataset.labels is not None:
            model = map_clusters(model, vectors, dataset.labels, self.n_classes)
        return model, None


@dataclass
class ForestLearner(_Predicts):
    params: ForestParams = field(default_factory=ForestParams)
    n_classes: int = 7
    threads: int = 1
    name: str = "forest"

    def fit(self, dataset: ChipDataset, seed: int):
        model = forest_fit(dataset.flattened(), dataset.labels, self.params, seed, self.n_classes, self.threads)
        return model, None


@dataclass
class NetworkLearner(_Predicts):
    """MLP or CNN; holds out a stratified validation share for early stopping."""

    name: str = "cnn"
    config: TrainConfig = field(default_factory=TrainConfig)
    n_classes: int = 7

    def fit(self, dataset: ChipDataset, seed: int):
        keep, hold = stratified_holdout(dataset.labels, self.config.validation_fraction, seed)
        train, val = dataset.subset(keep), dataset.subset(hold)
        factory = CnnModel if self.name == "cnn" else MlpModel
        model = factory.create(dataset.chip_size, dataset.channels, self.n_classes, seed=seed)
        return nn_fit(model, train, val, self.config.model_copy(update={"seed": seed}))


def make_learner(
    name: str,
    n_classes: int = 7,
    train_config: Optional[TrainConfig] = None,
    forest_params: Optional[ForestParams] = None,
    kmeans_params: Optional[KMeansParams] = None,
    threads: int = 1,
) -> Learner:
    if name == "kmeans":
        return KMeansLearner(kmeans_params or KMeansParams(k=n_classes), n_classes)
    if name == "forest":
        return ForestLearner(forest_params or ForestParams(), n_classes, threads)
    if name in ("mlp", "cnn"):
        return NetworkLearner(name, train_config or TrainConfig(), n_classes)
    raise ConfigError(f"unknown model {name!r}, expected one of {MODEL_NAMES}", field="train.models")


def predict_scores(model: AnyModel, windows: np.ndarray) -> np.ndarray:
    """(n, classes) scores: softmax for networks, vote fractions for forests, one-hot for k-means."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 4:
        raise ShapeError(f"expected (n, size, size, channels) chips, got {windows.shape}")
    if isinstance(model, (MlpModel, CnnModel)):
        return nn_predict(model, windows)[0]
    if isinstance(model, ForestModel):
        return forest_proba(model, windows.reshape(windows.shape[0], -1))
    ids = kmeans_classes(model, _center(windows))
    width = int(max(model.k, (model.cluster_classes.max() + 1) if model.cluster_classes is not None else 0))
    return np.eye(width)[ids]


def predict_windows(model: AnyModel, windows: np.ndarray) -> np.ndarray:
    """Class ids (cluster ids for an unmapped k-means model) for a chip batch."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 4:
        raise ShapeError(f"expected (n, size, size, channels) chips, got {windows.shape}")
    if isinstance(model, (MlpModel, CnnModel)):
        return nn_predict(model, windows)[1]
    if isinstance(model, ForestModel):
        return forest_predict(model, windows.reshape(windows.shape[0], -1))[0]
    return kmeans_classes(model, _center(windows))


def input_channels(model: AnyModel) -> Optional[int]:
    """Channel count the model was trained on (None for forests, checked on the flattened width)."""
    if isinstance(model, KMeansModel):
        return model.dim
    if isinstance(model, (MlpModel, CnnModel)):
        return model.channels
    return None


__all__ = [
    "MODEL_NAMES",
    "SUPERVISED",
    "CnnModel",
    "ForestLearner",
    "ForestModel",
    "KMeansLearner",
    "KMeansModel",
    "Learner",
    "LearningCurve",
    "MlpModel",
    "NetworkLearner",
    "NetworkModel",
    "input_channels",
    "load_model",
    "make_learner",
    "model_kind",
    "predict_scores",
    "predict_windows",
    "save_model",
]
