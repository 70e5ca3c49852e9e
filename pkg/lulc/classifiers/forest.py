"""
Random forest of CART trees (Gini impurity) grown on bootstrap samples.

Trees are stored as flat node arrays; a node with feature -1 is a leaf.
Samples with value <= threshold go left.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from lulc.dataset import stratified_folds
from lulc.errors import ConfigError, DegenerateLabelsError, ShapeError
from lulc.schemas import ForestGrid, ForestParams
from lulc.seeding import derive_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray

    @property
    def node_count(self) -> int:
        return self.feature.shape[0]

    def predict(self, vectors: np.ndarray) -> np.ndarray:
        node = np.zeros(vectors.shape[0], dtype=np.int64)
        rows = np.arange(vectors.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            idx = rows[active]
            current = node[idx]
            go_left = vectors[idx, self.feature[current]] <= self.threshold[current]
            node[idx] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[node] >= 0
        return self.leaf_class[node]


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: Tuple[DecisionTree, ...]
    params: ForestParams
    n_features: int
    n_classes: int
    seed: int = 0


def _best_split(
    x: np.ndarray,
    y_onehot: np.ndarray,
    min_leaf: int,
) -> Optional[Tuple[float, float]]:
    """(weighted gini score, threshold) of the best split on one feature, lower is better."""
    n = x.shape[0]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cumulative = np.cumsum(y_onehot[order], axis=0)
    left_counts = cumulative[:-1]
    total = cumulative[-1]
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    right_counts = total[None, :] - left_counts
    # n_l*gini_l + n_r*gini_r = n - sum(c_l^2)/n_l - sum(c_r^2)/n_r
    score = n - (left_counts ** 2).sum(axis=1) / n_left - (right_counts ** 2).sum(axis=1) / n_right
    score = np.where(valid, score, np.inf)
    i = int(score.argmin())
    threshold = (xs[i] + xs[i + 1]) / 2.0
    if threshold >= xs[i + 1]:
        threshold = xs[i]
    return float(score[i]), float(threshold)


def grow_tree(
    vectors: np.ndarray,
    labels: np.ndarray,
    params: ForestParams,
    n_classes: int,
    rng: np.random.Generator,
) -> DecisionTree:
    """Grow one CART tree; candidate features are redrawn at every node."""
    n_features = vectors.shape[1]
    m = params.features_per_split(n_features)
    onehot = np.eye(n_classes, dtype=np.float64)[labels]
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    leaf_class: List[int] = []

    def new_node(members: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf_class.append(int(np.bincount(labels[members], minlength=n_classes).argmax()))
        return len(feature) - 1

    stack = [(new_node(np.arange(labels.shape[0])), np.arange(labels.shape[0]), 0)]
    while stack:
        node, members, depth = stack.pop()
        node_labels = labels[members]
        if (
            members.size < params.min_samples_split
            or (params.max_depth is not None and depth >= params.max_depth)
            or (node_labels == node_labels[0]).all()
        ):
            continue
        best = None
        candidates = rng.permutation(n_features)
        for position, f in enumerate(candidates):
            if position >= m and best is not None:
                break
            found = _best_split(vectors[members, f], onehot[members], params.min_samples_leaf)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], int(f), found[1])
        if best is None:
            continue
        _, f, t = best
        goes_left = vectors[members, f] <= t
        feature[node] = f
        threshold[node] = t
        left_members, right_members = members[goes_left], members[~goes_left]
        left[node] = new_node(left_members)
        right[node] = new_node(right_members)
        stack.append((right[node], right_members, depth + 1))
        stack.append((left[node], left_members, depth + 1))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        leaf_class=np.array(leaf_class, dtype=np.int64),
    )


def forest_fit(
    vectors: np.ndarray,
    labels: np.ndarray,
    params: ForestParams = ForestParams(),
    seed: int = 0,
    n_classes: Optional[int] = None,
    threads: int = 1,
) -> ForestModel:
    """
    Grow params.n_estimators trees, tree i on its own bootstrap drawn from
    the stream derived from (seed, "tree/i"). The result does not depend on
    the thread count.

    Raises:
        DegenerateLabelsError: fewer than two classes in labels
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if vectors.ndim != 2 or vectors.shape[0] != labels.shape[0]:
        raise ShapeError(f"forest expects (n, d) vectors and n labels, got {vectors.shape} / {labels.shape}")
    if np.unique(labels).size < 2:
        raise DegenerateLabelsError("random forest needs at least two classes")
    n_classes = n_classes or int(labels.max()) + 1

    def fit_one(index: int) -> DecisionTree:
        rng = derive_rng(seed, f"tree/{index}")
        if params.bootstrap:
            sample = rng.integers(0, labels.shape[0], size=labels.shape[0])
        else:
            sample = np.arange(labels.shape[0])
        return grow_tree(vectors[sample], labels[sample], params, n_classes, rng)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        trees = tuple(pool.map(fit_one, range(params.n_estimators)))
    logger.debug(f"Grew {len(trees)} trees, {sum(t.node_count for t in trees)} nodes")
    return ForestModel(trees=trees, params=params, n_features=vectors.shape[1], n_classes=n_classes, seed=seed)


def forest_predict(model: ForestModel, vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Majority vote over trees.

    Returns (class ids, votes) where votes[t, i] is tree t's class for
    sample i. Ties go to the lowest class id.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != model.n_features:
        raise ShapeError(f"expected (n, {model.n_features}) vectors, got {vectors.shape}")
    votes = np.stack([tree.predict(vectors) for tree in model.trees])
    return vote_counts(votes, model.n_classes).argmax(axis=1), votes


def vote_counts(votes: np.ndarray, n_classes: int) -> np.ndarray:
    """(n, C) number of trees voting for each class."""
    return np.stack([(votes == c).sum(axis=0) for c in range(n_classes)], axis=1)


def forest_proba(model: ForestModel, vectors: np.ndarray) -> np.ndarray:
    """Per-class vote fractions."""
    _, votes = forest_predict(model, vectors)
    return vote_counts(votes, model.n_classes) / votes.shape[0]


def forest_grid_search(
    vectors: np.ndarray,
    labels: np.ndarray,
    grid: ForestGrid = ForestGrid(),
    folds: int = 10,
    seed: int = 0,
    threads: int = 1,
) -> Tuple[ForestParams, pd.DataFrame]:
    """
    Exhaustive grid search by mean stratified k-fold accuracy.

    Points are visited in lexicographic parameter order and only a strictly
    better mean replaces the incumbent, so ties keep the first point.

    Raises:
        ConfigError: empty grid
    """
    if len(grid) == 0:
        raise ConfigError("forest grid search needs at least one value per parameter", field="train.forest")
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1
    fold_index = stratified_folds(labels, folds, seed)

    rows = []
    best: Optional[Tuple[float, ForestParams]] = None
    for params in grid.points():
        accuracies = []
        for k, test in enumerate(fold_index):
            train = np.setdiff1d(np.arange(labels.shape[0]), test)
            model = forest_fit(vectors[train], labels[train], params, seed=seed, n_classes=n_classes, threads=threads)
            predicted, _ = forest_predict(model, vectors[test])
            accuracies.append(float((predicted == labels[test]).mean()) if test.size else 0.0)
        mean = float(np.mean(accuracies))
        rows.append({**params.model_dump(), "mean_accuracy": mean, "std_accuracy": float(np.std(accuracies))})
        if best is None or mean > best[0]:
            best = (mean, params)
        logger.debug(f"Grid point {params.model_dump()} mean accuracy {mean:.4f}")

    table = pd.DataFrame(rows)
    logger.info(f"Forest grid search over {len(rows)} points, best mean accuracy {best[0]:.4f}")
    return best[1], table
