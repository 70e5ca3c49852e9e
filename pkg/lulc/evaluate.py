"""Confusion matrices, one-vs-rest metrics, ROC-AUC, k-fold CV and the sample-size sweep."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from lulc.change import classify_map, render_map
from lulc.classifiers import AnyModel, Learner, LearningCurve
from lulc.dataset import DEFAULT_CHIP_SIZE, SWEEP_SIZES, ChipDataset, build_labeled_set, resolve_points, stratified_folds, unique_pixels
from lulc.errors import EmptyInputError, InsufficientDataError, ShapeError
from lulc.raster_core import Raster
from lulc.schemas import DEFAULT_SCHEME, ClassScheme, LabeledPoint
from lulc.seeding import derive_seed

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("Accuracy", "Precision", "Recall", "F1-score")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """counts[t, p]: samples of true class t predicted as p."""

    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self, names: Optional[Sequence[str]] = None) -> pd.DataFrame:
        labels = list(names) if names is not None else [str(i) for i in range(self.n_classes)]
        return pd.DataFrame(self.counts, index=pd.Index(labels, name="true"), columns=labels)


@dataclass(frozen=True, eq=False)
class MetricReport:
    """
    Per-class one-vs-rest metrics and their unweighted macro means.

    `flags` lists (class id, metric) pairs whose denominator was zero; those
    metrics are reported as 0.
    """

    accuracy: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    overall_accuracy: float
    flags: Tuple[Tuple[int, str], ...] = ()

    @property
    def macro_accuracy(self) -> float:
        return float(self.accuracy.mean())

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())

    def summary(self) -> Dict[str, float]:
        """Overall accuracy with macro precision, recall and F1."""
        return dict(zip(METRIC_COLUMNS, (self.overall_accuracy, self.macro_precision, self.macro_recall, self.macro_f1)))

    def to_frame(self, names: Optional[Sequence[str]] = None) -> pd.DataFrame:
        index = list(names) if names is not None else [str(i) for i in range(self.accuracy.size)]
        frame = pd.DataFrame(
            {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1},
            index=pd.Index(index, name="class"),
        )
        frame.loc["macro"] = [self.macro_accuracy, self.macro_precision, self.macro_recall, self.macro_f1]
        return frame


def confusion(true_labels: Sequence[int], predicted_labels: Sequence[int], n_classes: int) -> ConfusionMatrix:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape:
        raise ShapeError(f"{true_labels.size} true labels vs {predicted_labels.size} predictions")
    for labels in (true_labels, predicted_labels):
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise ShapeError(f"labels outside [0, {n_classes})")
    flat = np.bincount(true_labels * n_classes + predicted_labels, minlength=n_classes * n_classes)
    return ConfusionMatrix(counts=flat.reshape(n_classes, n_classes))


def _ratio(numerator: np.ndarray, denominator: np.ndarray, metric: str, flags: List[Tuple[int, str]]) -> np.ndarray:
    out = np.zeros(numerator.shape, dtype=np.float64)
    nonzero = denominator > 0
    out[nonzero] = numerator[nonzero] / denominator[nonzero]
    flags.extend((int(c), metric) for c in np.flatnonzero(~nonzero))
    return out


def metrics(cm: ConfusionMatrix) -> MetricReport:
    """
    Accuracy = (TP+TN)/(TP+TN+FP+FN), Precision = TP/(TP+FP),
    Recall = TP/(TP+FN), F1 = 2TP/(2TP+FP+FN) per class, one-vs-rest.
    """
    total = cm.total
    if total == 0:
        raise EmptyInputError("confusion matrix is empty")
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    tn = total - tp - fp - fn
    flags: List[Tuple[int, str]] = []
    report = MetricReport(
        accuracy=(tp + tn) / (tp + tn + fp + fn),
        precision=_ratio(tp, tp + fp, "precision", flags),
        recall=_ratio(tp, tp + fn, "recall", flags),
        f1=_ratio(2 * tp, 2 * tp + fp + fn, "f1", flags),
        overall_accuracy=float(np.trace(counts) / total),
        flags=tuple(flags),
    )
    return report


@dataclass(frozen=True, eq=False)
class RocReport:
    per_class: np.ndarray
    macro: float
    excluded: Tuple[int, ...] = ()


def _binary_auc(positive: np.ndarray, scores: np.ndarray) -> float:
    ranks = rankdata(scores, method="average")
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_auc(true_labels: Sequence[int], probabilities: np.ndarray, n_classes: int) -> RocReport:
    """
    One-vs-rest AUC by the Mann-Whitney rank statistic, ties by midrank.

    A class with no positive or no negative samples gets NaN and is left out
    of the macro mean (listed in `excluded`).
    """
    true_labels = np.asarray(true_labels, dtype=np.int64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.shape != (true_labels.size, n_classes):
        raise ShapeError(f"expected ({true_labels.size}, {n_classes}) probabilities, got {probabilities.shape}")
    per_class = np.full(n_classes, np.nan)
    excluded = []
    for c in range(n_classes):
        positive = true_labels == c
        if positive.all() or not positive.any():
            excluded.append(c)
            continue
        per_class[c] = _binary_auc(positive, probabilities[:, c])
    if excluded:
        logger.warning(f"ROC-AUC excludes classes absent from truth: {excluded}")
    present = per_class[~np.isnan(per_class)]
    macro = float(present.mean()) if present.size else float("nan")
    return RocReport(per_class=per_class, macro=macro, excluded=tuple(excluded))


def roc_curve(true_binary: Sequence[bool], scores: Sequence[float]) -> pd.DataFrame:
    """(threshold, fpr, tpr) rows for decreasing thresholds, starting at (inf, 0, 0)."""
    positive = np.asarray(true_binary, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = max(int(positive.sum()), 1)
    n_neg = max(int((~positive).sum()), 1)
    thresholds = np.unique(scores)[::-1]
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    tp_cum = np.cumsum(positive[order])
    fp_cum = np.cumsum(~positive[order])
    last = np.searchsorted(-sorted_scores, -thresholds, side="right") - 1
    return pd.DataFrame({
        "threshold": np.concatenate([[np.inf], thresholds]),
        "fpr": np.concatenate([[0.0], fp_cum[last] / n_neg]),
        "tpr": np.concatenate([[0.0], tp_cum[last] / n_pos]),
    })


def roc_table(true_labels: Sequence[int], probabilities: np.ndarray, names: Sequence[str]) -> pd.DataFrame:
    """Long-format ROC curves for every class present, with that class's AUC."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    report = roc_auc(true_labels, probabilities, len(names))
    frames = []
    for c, name in enumerate(names):
        if c in report.excluded:
            continue
        curve = roc_curve(true_labels == c, probabilities[:, c])
        curve.insert(0, "class", name)
        curve["auc"] = report.per_class[c]
        frames.append(curve)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["class", "threshold", "fpr", "tpr", "auc"])


@dataclass(eq=False)
class CvResult:
    fold_accuracies: List[float]
    best_fold: int
    model: Any = None
    curve: Optional[LearningCurve] = None
    stratified: bool = True
    fold_sizes: List[int] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracies))


def kfold_cv(dataset: ChipDataset, learner: Learner, k: int = 10, seed: int = 0, threads: int = 1) -> CvResult:
    """
    Stratified k-fold cross-validation.

    Each fold trains on the other k-1 folds and reports accuracy on its own.
    The model of the most accurate fold (first on ties) is returned with the
    result.

    Raises:
        InsufficientDataError: fewer samples than folds
    """
    if dataset.labels is None or len(dataset) < k:
        raise InsufficientDataError(f"{k}-fold CV needs at least {k} labeled chips, got {len(dataset)}")
    folds = stratified_folds(dataset.labels, k, seed)
    everything = np.arange(len(dataset))

    def run_fold(index: int) -> Tuple[float, Any, Optional[LearningCurve]]:
        test = folds[index]
        train = np.setdiff1d(everything, test)
        model, curve = learner.fit(dataset.subset(train), derive_seed(seed, f"cv/{index}"))
        predicted = learner.predict(model, dataset.windows[test])
        accuracy = float((predicted == dataset.labels[test]).mean()) if test.size else 0.0
        logger.debug(f"{learner.name} fold {index + 1}/{k} accuracy {accuracy:.4f}")
        return accuracy, model, curve

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(run_fold, range(k)))
    accuracies = [a for a, _, _ in outcomes]
    best = int(np.argmax(accuracies))
    result = CvResult(
        fold_accuracies=accuracies,
        best_fold=best,
        model=outcomes[best][1],
        curve=outcomes[best][2],
        fold_sizes=[int(f.size) for f in folds],
    )
    logger.info(f"{learner.name} {k}-fold CV mean {result.mean:.4f} std {result.std:.4f} best fold {best + 1}")
    return result


def cv_table(results: Dict[str, CvResult]) -> pd.DataFrame:
    """Fold 1..k accuracies then Mean and Std rows, one column per model."""
    columns = {}
    for name, result in results.items():
        columns[name] = list(result.fold_accuracies) + [result.mean, result.std]
    k = len(next(iter(results.values())).fold_accuracies) if results else 0
    index = [f"Fold {i}" for i in range(1, k + 1)] + ["Mean", "Std"]
    return pd.DataFrame(columns, index=pd.Index(index, name="fold"))


def comparison_table(reports: Dict[str, MetricReport]) -> pd.DataFrame:
    """One row per model: overall accuracy and macro precision, recall and F1."""
    rows = [{"Model": name, **report.summary()} for name, report in reports.items()]
    return pd.DataFrame(rows, columns=["Model", *METRIC_COLUMNS])


def evaluate_model(learner: Learner, model: AnyModel, test: ChipDataset, n_classes: int) -> Tuple[ConfusionMatrix, MetricReport, np.ndarray]:
    """Confusion matrix, metric report and class scores on a labeled test set."""
    if test.labels is None or len(test) == 0:
        raise EmptyInputError("evaluation needs a non-empty labeled test set")
    predicted = learner.predict(model, test.windows)
    cm = confusion(test.labels, predicted, n_classes)
    return cm, metrics(cm), learner.scores(model, test.windows)


def sample_size_sweep(
    raster: Raster,
    points: Sequence[LabeledPoint],
    learner: Learner,
    sizes: Sequence[int] = SWEEP_SIZES,
    seed: int = 0,
    scheme: ClassScheme = DEFAULT_SCHEME,
    chip_size: int = DEFAULT_CHIP_SIZE,
    test_fraction: float = 0.3,
    map_dir: Optional[Union[str, Path]] = None,
    threads: int = 1,
    year: Optional[int] = None,
) -> pd.DataFrame:
    """
    Train and score one model per total sample size.

    Each size is spread evenly over the classes and split per class into
    train and test by `test_fraction`. Only labels of `year` are used when it
    is given, and each pixel counts once. With `map_dir` a land cover map of
    the whole raster is rendered per size.

    Raises:
        InsufficientDataError: some class has fewer points than the largest size needs
    """
    n_classes = len(scheme)
    if year is not None:
        points = [p for p in points if p.year == year]
    points = unique_pixels(resolve_points(points, raster, scheme))
    available = np.bincount([p.class_id for p in points if raster.mask[p.pixel[1], p.pixel[0]]], minlength=n_classes)
    needed = max(sizes) // n_classes
    short = [c for c in range(n_classes) if available[c] < needed]
    if short:
        raise InsufficientDataError(
            f"sample size {max(sizes)} needs {needed} points per class; classes {short} have {available[short].tolist()}"
        )

    def run_size(size: int) -> Dict[str, Any]:
        per_class = size // n_classes
        n_test = int(round(per_class * test_fraction))
        train, test = build_labeled_set(
            raster, points, per_class - n_test, n_test,
            seed=derive_seed(seed, f"sweep/{size}"), scheme=scheme, chip_size=chip_size, year=year,
        )
        model, _ = learner.fit(train, derive_seed(seed, f"sweep/{size}/fit"))
        _, report, _ = evaluate_model(learner, model, test, n_classes)
        row: Dict[str, Any] = {"Sample size": size, "Train": len(train), "Test": len(test), **report.summary()}
        if map_dir is not None:
            path = Path(map_dir) / f"map_{size}.png"
            render_map(classify_map(raster, model, chip_size=chip_size, scheme=scheme), path)
            row["Map"] = str(path)
        logger.info(f"Sweep size {size}: accuracy {report.overall_accuracy:.4f}")
        return row

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(run_size, sizes))
    return pd.DataFrame(rows)
