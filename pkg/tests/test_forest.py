import numpy as np
import pytest

from lulc.classifiers.forest import (
    forest_fit,
    forest_grid_search,
    forest_predict,
    forest_proba,
    grow_tree,
    vote_counts,
)
from lulc.errors import ConfigError, DegenerateLabelsError, ShapeError
from lulc.schemas import ForestGrid, ForestParams


def _separable(seed: int = 0, n: int = 90):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(3), n // 3)
    vectors = rng.normal(0.0, 0.3, (n, 4))
    vectors[:, 0] += labels * 3.0
    return vectors, labels


def test_votes_recount_to_predictions():
    vectors, labels = _separable()
    model = forest_fit(vectors, labels, ForestParams(n_estimators=15, max_depth=4), seed=3)
    inputs = np.random.default_rng(1).normal(0.0, 3.0, (1000, 4))
    predicted, votes = forest_predict(model, inputs)
    assert votes.shape == (15, 1000)
    for i in range(1000):
        counts = np.bincount(votes[:, i], minlength=3)
        assert predicted[i] == int(np.flatnonzero(counts == counts.max())[0])


def test_separable_data_is_learned():
    vectors, labels = _separable()
    model = forest_fit(vectors, labels, ForestParams(n_estimators=10), seed=0)
    test, truth = _separable(seed=9)
    assert (forest_predict(model, test)[0] == truth).mean() >= 0.95


def test_fully_grown_tree_fits_training_data():
    vectors, labels = _separable(seed=2)
    tree = grow_tree(vectors, labels, ForestParams(max_features="all"), 3, np.random.default_rng(0))
    np.testing.assert_array_equal(tree.predict(vectors), labels)


def test_stump_has_three_nodes():
    vectors, labels = _separable()
    tree = grow_tree(vectors, labels, ForestParams(max_depth=1, max_features="all"), 3, np.random.default_rng(0))
    assert tree.node_count == 3


def test_thread_count_does_not_change_the_forest():
    vectors, labels = _separable(seed=4)
    params = ForestParams(n_estimators=8, max_depth=5)
    one = forest_fit(vectors, labels, params, seed=11, threads=1)
    four = forest_fit(vectors, labels, params, seed=11, threads=4)
    for a, b in zip(one.trees, four.trees):
        np.testing.assert_array_equal(a.feature, b.feature)
        np.testing.assert_array_equal(a.threshold, b.threshold)
        np.testing.assert_array_equal(a.leaf_class, b.leaf_class)


def test_proba_rows_sum_to_one():
    vectors, labels = _separable()
    model = forest_fit(vectors, labels, ForestParams(n_estimators=7), seed=0)
    proba = forest_proba(model, vectors[:20])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    np.testing.assert_array_equal(vote_counts(np.array([[0, 1], [2, 1], [0, 1]]), 3), [[2, 0, 1], [0, 3, 0]])


def test_fit_errors():
    vectors, labels = _separable()
    with pytest.raises(DegenerateLabelsError):
        forest_fit(vectors, np.zeros(len(labels), dtype=int))
    model = forest_fit(vectors, labels, ForestParams(n_estimators=2), seed=0)
    with pytest.raises(ShapeError):
        forest_predict(model, np.zeros((3, 5)))


def test_grid_search_reports_every_point():
    vectors, labels = _separable(n=60)
    grid = ForestGrid(n_estimators=[5], max_depth=[1, 4], max_features=["all"], min_samples_leaf=[1], min_samples_split=[2])
    best, table = forest_grid_search(vectors, labels, grid, folds=3, seed=0)
    assert len(table) == 2
    assert {"mean_accuracy", "std_accuracy", "max_depth"} <= set(table.columns)
    assert table["mean_accuracy"].max() == table.loc[table["max_depth"] == best.max_depth, "mean_accuracy"].iloc[0]


def test_grid_search_ties_keep_first_point():
    vectors, labels = _separable(n=60)
    grid = ForestGrid(n_estimators=[3], max_depth=[8, 16], max_features=["all"], min_samples_leaf=[1], min_samples_split=[2])
    best, table = forest_grid_search(vectors, labels, grid, folds=3, seed=0)
    assert table["mean_accuracy"].nunique() == 1
    assert best.max_depth == 8


def test_empty_grid():
    vectors, labels = _separable()
    with pytest.raises(ConfigError):
        forest_grid_search(vectors, labels, ForestGrid(n_estimators=[]), folds=3)


def test_stump_threshold_falls_between_the_classes():
    rng = np.random.default_rng(6)
    values = np.concatenate([rng.uniform(0.0, 1.0, 30), rng.uniform(2.0, 3.0, 30)])
    labels = np.repeat([0, 1], 30)
    vectors = values[:, None]
    params = ForestParams(n_estimators=1, max_depth=1, max_features="all")
    tree = grow_tree(vectors, labels, params, 2, np.random.default_rng(0))
    assert tree.feature[0] == 0
    assert tree.threshold[0] == (values[:30].max() + values[30:].min()) / 2.0
    (fitted,) = forest_fit(vectors, labels, params, seed=5).trees
    assert values[:30].max() <= fitted.threshold[0] < values[30:].min()
    np.testing.assert_array_equal(fitted.predict(np.array([[0.5], [2.5]])), [0, 1])
