"""Matplotlib figures written next to the training reports."""
import logging
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from lulc.classifiers import LearningCurve  # noqa: E402
from lulc.errors import IoError  # noqa: E402
from lulc.evaluate import ConfusionMatrix  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
_PNG_METADATA = {"Software": None}


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def plot_confusion(cm: ConfusionMatrix, names: Sequence[str], path: PathLike, title: str = "") -> Path:
    """Heatmap of counts, rows true and columns predicted."""
    fig, ax = plt.subplots(figsize=(7, 6))
    image = ax.imshow(cm.counts, cmap="Blues")
    fig.colorbar(image, ax=ax)
    ticks = np.arange(len(names))
    ax.set_xticks(ticks, labels=names, rotation=45, ha="right")
    ax.set_yticks(ticks, labels=names)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    threshold = cm.counts.max() / 2 if cm.counts.size else 0
    for (i, j), value in np.ndenumerate(cm.counts):
        ax.text(j, i, str(value), ha="center", va="center", color="white" if value > threshold else "black")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_learning_curve(curve: LearningCurve, path: PathLike, title: str = "") -> Path:
    """Loss and accuracy per epoch, train vs validation; best epoch marked."""
    fig, (loss_ax, acc_ax) = plt.subplots(1, 2, figsize=(10, 4))
    loss_ax.plot(curve.epochs, curve.train_loss, label="train")
    loss_ax.plot(curve.epochs, curve.val_loss, label="validation")
    loss_ax.set_xlabel("Epoch")
    loss_ax.set_ylabel("Loss")
    acc_ax.plot(curve.epochs, curve.train_accuracy, label="train")
    acc_ax.plot(curve.epochs, curve.val_accuracy, label="validation")
    acc_ax.set_xlabel("Epoch")
    acc_ax.set_ylabel("Accuracy")
    for ax in (loss_ax, acc_ax):
        if curve.best_epoch:
            ax.axvline(curve.best_epoch, color="grey", linestyle="--", linewidth=0.8)
        ax.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)
