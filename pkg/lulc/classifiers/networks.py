"""
MLP and 1x1-convolution CNN chip classifiers trained with mini-batch Adam.

Both networks take (batch, size, size, channels) chips. The CNN mixes
channels per pixel (1x1 kernels keep the 9x9 grid), then flattens into a
dense softmax layer; with the default widths it has 41,367 parameters.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from lulc.classifiers.autodiff import Tensor, add, matmul, relu, reshape, scale, softmax, softmax_cross_entropy
from lulc.dataset import ChipDataset, NormalizationStats, normalize
from lulc.errors import DivergenceError, ShapeError
from lulc.schemas import TrainConfig
from lulc.seeding import derive_rng

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]

CNN_WIDTHS = (32, 48, 64)
CNN_DROPOUT = {2: 0.25, 3: 0.5}
MLP_HIDDEN = 32
_PREDICT_BATCH = 2048


def _he(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


@dataclass(eq=False)
class _Network:
    params: Params
    chip_size: int
    channels: int
    n_classes: int
    normalization: Optional[NormalizationStats] = None

    kind = "network"

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.chip_size, self.chip_size, self.channels)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def check_input(self, windows: np.ndarray) -> None:
        if windows.ndim != 4 or windows.shape[1:] != self.input_shape:
            raise ShapeError(f"{self.kind} expects chips of shape {self.input_shape}, got {windows.shape[1:]}")

    def forward(
        self,
        windows: np.ndarray,
        params: Dict[str, Tensor],
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        raise NotImplementedError


@dataclass(eq=False)
class MlpModel(_Network):
    """Flattened chip -> 32 ReLU units -> softmax."""

    hidden: int = MLP_HIDDEN

    kind = "mlp"

    @classmethod
    def create(cls, chip_size: int = 9, channels: int = 10, n_classes: int = 7, hidden: int = MLP_HIDDEN, seed: int = 0) -> "MlpModel":
        rng = derive_rng(seed, "mlp/init")
        n_inputs = chip_size * chip_size * channels
        params = {
            "W1": _he(rng, n_inputs, hidden),
            "b1": np.zeros(hidden),
            "W2": _he(rng, hidden, n_classes),
            "b2": np.zeros(n_classes),
        }
        return cls(params=params, chip_size=chip_size, channels=channels, n_classes=n_classes, hidden=hidden)

    def forward(self, windows, params, rng=None):
        x = Tensor(windows.reshape(windows.shape[0], -1))
        h = relu(add(matmul(x, params["W1"]), params["b1"]))
        return add(matmul(h, params["W2"]), params["b2"])


@dataclass(eq=False)
class CnnModel(_Network):
    """Three 1x1 convolutions (ReLU, dropout after the 2nd and 3rd) -> flatten -> dense softmax."""

    widths: Tuple[int, ...] = CNN_WIDTHS

    kind = "cnn"

    @classmethod
    def create(
        cls,
        chip_size: int = 9,
        channels: int = 10,
        n_classes: int = 7,
        widths: Sequence[int] = CNN_WIDTHS,
        seed: int = 0,
    ) -> "CnnModel":
        rng = derive_rng(seed, "cnn/init")
        params: Params = {}
        fan_in = channels
        for i, width in enumerate(widths, start=1):
            params[f"K{i}"] = _he(rng, fan_in, width)
            params[f"c{i}"] = np.zeros(width)
            fan_in = width
        flat = chip_size * chip_size * fan_in
        params["Wd"] = _he(rng, flat, n_classes)
        params["bd"] = np.zeros(n_classes)
        return cls(params=params, chip_size=chip_size, channels=channels, n_classes=n_classes, widths=tuple(widths))

    def feature_tensor(self, windows, params, rng=None) -> Tensor:
        batch = windows.shape[0]
        pixels = Tensor(windows.reshape(-1, self.channels))
        for i in range(1, len(self.widths) + 1):
            pixels = relu(add(matmul(pixels, params[f"K{i}"]), params[f"c{i}"]))
            rate = CNN_DROPOUT.get(i)
            if rng is not None and rate:
                keep = (rng.random(pixels.shape) >= rate) / (1.0 - rate)
                pixels = scale(pixels, keep)
        return reshape(pixels, (batch, self.chip_size, self.chip_size, self.widths[-1]))

    def forward(self, windows, params, rng=None):
        maps = self.feature_tensor(windows, params, rng)
        flat = reshape(maps, (windows.shape[0], -1))
        return add(matmul(flat, params["Wd"]), params["bd"])


NetworkModel = Union[MlpModel, CnnModel]


def _leaves(params: Params) -> Dict[str, Tensor]:
    return {name: Tensor(value, name=name) for name, value in params.items()}


def loss_and_gradients(
    model: NetworkModel,
    windows: np.ndarray,
    labels: np.ndarray,
    params: Optional[Params] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, Params]:
    """Mean cross-entropy and its gradient for every parameter."""
    leaves = _leaves(model.params if params is None else params)
    loss = softmax_cross_entropy(model.forward(windows, leaves, rng), labels)
    loss.backward()
    grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in leaves.items()}
    return float(loss.data), grads


class Adam:
    """Adam optimizer over a parameter dict (updates a copy in place)."""

    def __init__(self, params: Params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        for name, grad in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * grad * grad
            m_hat = self.m[name] / (1 - self.beta1 ** self.t)
            v_hat = self.v[name] / (1 - self.beta2 ** self.t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(eq=False)
class LearningCurve:
    epochs: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    train_accuracy: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.epochs)

    def rows(self) -> List[dict]:
        return [
            {"epoch": e, "train_loss": tl, "val_loss": vl, "train_accuracy": ta, "val_accuracy": va}
            for e, tl, vl, ta, va in zip(self.epochs, self.train_loss, self.val_loss, self.train_accuracy, self.val_accuracy)
        ]


def _logits(model: NetworkModel, windows: np.ndarray, params: Optional[Params] = None) -> np.ndarray:
    leaves = _leaves(model.params if params is None else params)
    out = [model.forward(windows[i:i + _PREDICT_BATCH], leaves).data for i in range(0, windows.shape[0], _PREDICT_BATCH)]
    return np.concatenate(out) if out else np.zeros((0, model.n_classes))


def _evaluate(model: NetworkModel, windows: np.ndarray, labels: np.ndarray, params: Params) -> Tuple[float, float]:
    logits = _logits(model, windows, params)
    loss = float(softmax_cross_entropy(Tensor(logits), labels).data)
    accuracy = float((logits.argmax(axis=1) == labels).mean())
    return loss, accuracy


def nn_fit(
    model: NetworkModel,
    train: ChipDataset,
    val: Optional[ChipDataset],
    config: TrainConfig = TrainConfig(),
) -> Tuple[NetworkModel, LearningCurve]:
    """
    Mini-batch Adam on cross-entropy with early stopping on validation accuracy.

    Normalization statistics are fitted on `train` and stored on the returned
    model. Training stops once `early_stopping_patience` epochs pass without
    a strictly better validation accuracy, and the best epoch's parameters
    are restored. Epochs are counted from 1.

    Raises:
        ShapeError: chips do not match the model input
        DivergenceError: a non-finite training loss
    """
    if train.labels is None:
        raise ShapeError("nn_fit needs a labeled training set")
    model.check_input(train.windows)
    train_n, stats = normalize(train)
    x_train, y_train = train_n.windows, train_n.labels
    if val is not None and len(val):
        model.check_input(val.windows)
        val_n, _ = normalize(val, stats)
        x_val, y_val = val_n.windows, val_n.labels
    else:
        x_val, y_val = x_train, y_train

    params = {k: v.copy() for k, v in model.params.items()}
    optimizer = Adam(params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    shuffle_rng = derive_rng(config.seed, f"{model.kind}/shuffle")
    dropout_rng = derive_rng(config.seed, f"{model.kind}/dropout")
    curve = LearningCurve()
    best_accuracy = -1.0
    best_params = {k: v.copy() for k, v in params.items()}

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(x_train.shape[0])
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = loss_and_gradients(model, x_train[batch], y_train[batch], params, dropout_rng)
            if not np.isfinite(loss):
                raise DivergenceError(f"{model.kind} training loss became {loss}", epoch=epoch)
            optimizer.step(params, grads)

        train_loss, train_accuracy = _evaluate(model, x_train, y_train, params)
        val_loss, val_accuracy = _evaluate(model, x_val, y_val, params)
        if not np.isfinite(train_loss):
            raise DivergenceError(f"{model.kind} training loss became {train_loss}", epoch=epoch)
        curve.epochs.append(epoch)
        curve.train_loss.append(train_loss)
        curve.val_loss.append(val_loss)
        curve.train_accuracy.append(train_accuracy)
        curve.val_accuracy.append(val_accuracy)
        logger.debug(f"{model.kind} epoch {epoch}: loss={train_loss:.4f} val_acc={val_accuracy:.4f}")

        if val_accuracy > best_accuracy:
            best_accuracy = val_accuracy
            curve.best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
        elif epoch - curve.best_epoch >= config.early_stopping_patience:
            curve.stopped_early = epoch < config.max_epochs
            break

    logger.info(
        f"{model.kind} trained {curve.epochs_run} epochs, best epoch {curve.best_epoch} "
        f"val accuracy {best_accuracy:.4f}"
    )
    return replace(model, params=best_params, normalization=stats), curve


def nn_predict(model: NetworkModel, windows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Class probabilities and argmax ids (ties to the lowest id), dropout off.

    Raw chips are normalized with the model's stored statistics.
    """
    windows = np.asarray(windows, dtype=np.float64)
    model.check_input(windows)
    if model.normalization is not None:
        windows = model.normalization.apply(windows)
    probabilities = softmax(_logits(model, windows)) if windows.shape[0] else np.zeros((0, model.n_classes))
    return probabilities, probabilities.argmax(axis=1)


def cnn_feature_maps(model: CnnModel, windows: np.ndarray) -> np.ndarray:
    """(batch, size, size, widths[-1]) activations before flattening, no normalization."""
    windows = np.asarray(windows, dtype=np.float64)
    model.check_input(windows)
    return model.feature_tensor(windows, _leaves(model.params)).data


def gradient_check(
    model: NetworkModel,
    windows: np.ndarray,
    labels: np.ndarray,
    epsilon: float = 1e-5,
    names: Optional[Sequence[str]] = None,
) -> float:
    """
    Largest relative error between backpropagated gradients and central
    finite differences, |a - n| / max(|a| + |n|, 1e-6), over every entry of
    the named parameters (all by default). Dropout is off.
    """
    windows = np.asarray(windows, dtype=np.float64)
    _, analytic = loss_and_gradients(model, windows, labels)
    worst = 0.0
    for name in names or list(model.params):
        shifted = {k: v.copy() for k, v in model.params.items()}
        target = shifted[name]
        for index in np.ndindex(target.shape):
            original = target[index]
            target[index] = original + epsilon
            plus = float(softmax_cross_entropy(model.forward(windows, _leaves(shifted)), labels).data)
            target[index] = original - epsilon
            minus = float(softmax_cross_entropy(model.forward(windows, _leaves(shifted)), labels).data)
            target[index] = original
            numeric = (plus - minus) / (2 * epsilon)
            a = analytic[name][index]
            worst = max(worst, abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6))
    return worst
