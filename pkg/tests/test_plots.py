import numpy as np
from PIL import Image

from lulc.classifiers import LearningCurve
from lulc.evaluate import ConfusionMatrix
from lulc.plots import plot_confusion, plot_learning_curve


def test_confusion_png(tmp_path):
    cm = ConfusionMatrix(counts=np.array([[5, 1], [0, 4]]))
    path = plot_confusion(cm, ["Urban Areas", "Forest"], tmp_path / "nested" / "confusion.png", title="CNN")
    with Image.open(path) as image:
        assert image.format == "PNG"
        assert image.size == (700, 600)


def test_learning_curve_png_is_reproducible(tmp_path):
    curve = LearningCurve(
        epochs=[1, 2, 3], train_loss=[1.0, 0.6, 0.4], val_loss=[1.1, 0.7, 0.8],
        train_accuracy=[0.5, 0.7, 0.8], val_accuracy=[0.4, 0.6, 0.55], best_epoch=2,
    )
    first = plot_learning_curve(curve, tmp_path / "a.png")
    second = plot_learning_curve(curve, tmp_path / "b.png")
    assert first.read_bytes() == second.read_bytes()
