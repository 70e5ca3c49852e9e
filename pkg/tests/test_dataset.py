import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from lulc.dataset import (
    ChipDataset,
    build_labeled_set,
    chip_census,
    cochran_sample_size,
    coverage_fraction,
    extract_chip,
    extract_chips,
    iter_chip_batches,
    minimum_sample_size,
    normalize,
    read_chip_dataset,
    read_labels,
    resolve_points,
    stratified_folds,
    stratified_holdout,
    unique_pixels,
    unlabeled_set,
    upsample_class,
    write_chip_dataset,
    write_labels,
)
from lulc.errors import (
    BoundsError,
    ConflictError,
    EmptyInputError,
    FormatError,
    IoError,
    MissingClassError,
    ShapeError,
    UnderfullWarning,
)
from lulc.raster_core import Raster
from lulc.schemas import DEFAULT_SCHEME, LabeledPoint


def test_chip_census_matches_scene_size():
    raster = Raster.from_array(np.zeros((818, 780, 1)), ["b"])
    assert chip_census(raster, 9) == 638_040


def test_corner_chip_replicates_edges():
    values = np.arange(5 * 6, dtype=float).reshape(5, 6, 1)
    raster = Raster.from_array(values, ["b"])
    chip = extract_chip(raster, (0, 0), 3).window[:, :, 0]
    np.testing.assert_array_equal(chip, [[0, 0, 1], [0, 0, 1], [6, 6, 7]])
    chip = extract_chip(raster, (5, 4), 3).window[:, :, 0]
    np.testing.assert_array_equal(chip, [[22, 23, 23], [28, 29, 29], [28, 29, 29]])


def test_chip_center_is_the_pixel(make_raster):
    raster = make_raster()
    centers = np.array([[0, 0], [4, 7], [9, 11]])
    windows = extract_chips(raster, centers, 9)
    stack = raster.stack()
    for window, (col, row) in zip(windows, centers):
        np.testing.assert_array_equal(window[4, 4], stack[row, col])


def test_chip_size_one_is_the_spectrum(make_raster):
    raster = make_raster()
    np.testing.assert_array_equal(extract_chips(raster, np.array([[3, 2]]), 1)[0, 0, 0], raster.stack()[2, 3])


def test_chip_errors(make_raster):
    raster = make_raster()
    with pytest.raises(BoundsError):
        extract_chips(raster, np.array([[10, 0]]))
    with pytest.raises(ShapeError):
        extract_chips(raster, np.array([[1, 1]]), 4)


def test_batches_agree_with_direct_extraction(make_raster):
    raster = make_raster(height=7, width=5)
    for start, batch in iter_chip_batches(raster, 5, batch_pixels=10):
        for r in range(batch.shape[0]):
            direct = extract_chips(raster, np.array([[c, start + r] for c in range(5)]), 5)
            np.testing.assert_array_equal(batch[r], direct)


def test_unlabeled_set_skips_masked(make_raster):
    mask = np.ones((12, 10), dtype=bool)
    mask[0, :] = False
    dataset = unlabeled_set(make_raster(mask=mask), 3)
    assert len(dataset) == 110
    assert dataset.labels is None


def test_resolve_points_checks(make_raster):
    raster = make_raster()
    good = LabeledPoint(pixel=(1, 1), class_id=2, year=2023)
    assert len(resolve_points([good, good], raster, DEFAULT_SCHEME)) == 1
    with pytest.raises(BoundsError):
        resolve_points([LabeledPoint(pixel=(10, 0), class_id=0, year=2023)], raster, DEFAULT_SCHEME)
    with pytest.raises(MissingClassError):
        resolve_points([LabeledPoint(pixel=(0, 0), class_id=7, year=2023)], raster, DEFAULT_SCHEME)
    with pytest.raises(ConflictError):
        resolve_points([good, LabeledPoint(pixel=(1, 1), class_id=3, year=2023)], raster, DEFAULT_SCHEME)
    other_year = LabeledPoint(pixel=(1, 1), class_id=3, year=2022)
    assert len(resolve_points([good, other_year], raster, DEFAULT_SCHEME)) == 2


def test_labeled_split_counts(striped_raster, stripe_points, three_class_scheme):
    train, test = build_labeled_set(
        striped_raster, stripe_points(40), per_class_train=25, per_class_test=10,
        seed=1, scheme=three_class_scheme, chip_size=5,
    )
    np.testing.assert_array_equal(train.class_counts(3), [25, 25, 25])
    np.testing.assert_array_equal(test.class_counts(3), [10, 10, 10])
    assert train.split_tag == "train" and test.split_tag == "test"
    train_centers = {tuple(c) for c in train.centers}
    assert not train_centers & {tuple(c) for c in test.centers}


def test_labeled_split_is_seeded(striped_raster, stripe_points, three_class_scheme):
    points = stripe_points(40)
    a = build_labeled_set(striped_raster, points, 25, 10, seed=4, scheme=three_class_scheme, chip_size=3)
    b = build_labeled_set(striped_raster, list(reversed(points)), 25, 10, seed=4, scheme=three_class_scheme, chip_size=3)
    np.testing.assert_array_equal(a[0].centers, b[0].centers)
    np.testing.assert_array_equal(a[1].windows, b[1].windows)


def test_underfull_class_is_upsampled(striped_raster, stripe_points, three_class_scheme):
    points = [p for p in stripe_points(40) if p.class_id != 2] + stripe_points(13, seed=9)[-13:]
    train, test = build_labeled_set(striped_raster, points, 25, 10, seed=2, scheme=three_class_scheme, chip_size=3)
    assert train.class_counts(3)[2] == 25
    # 13 points split 25:10 -> 9 train, 4 test; test chips are never duplicated
    assert test.class_counts(3)[2] == 4
    short = train.subset(np.flatnonzero(train.labels == 2))
    assert len({tuple(c) for c in short.centers}) == 9


def test_underfull_warn_keeps_counts(striped_raster, stripe_points, three_class_scheme):
    points = [p for p in stripe_points(40) if p.class_id != 2] + stripe_points(13, seed=9)[-13:]
    with pytest.warns(UnderfullWarning):
        train, _ = build_labeled_set(
            striped_raster, points, 25, 10, seed=2, scheme=three_class_scheme, chip_size=3, underfull="warn",
        )
    assert train.class_counts(3)[2] == 9


def test_missing_class_raises(striped_raster, stripe_points, three_class_scheme):
    points = [p for p in stripe_points(20) if p.class_id != 1]
    with pytest.raises(MissingClassError):
        build_labeled_set(striped_raster, points, 10, 5, scheme=three_class_scheme, chip_size=3)


def test_masked_labels_are_dropped(striped_raster, stripe_points, three_class_scheme):
    points = stripe_points(40)
    mask = np.ones(striped_raster.mask.shape, dtype=bool)
    col, row = points[0].pixel
    mask[row, col] = False
    with warnings.catch_warnings():
        warnings.simplefilter("error", UnderfullWarning)
        train, test = build_labeled_set(
            striped_raster.with_mask(mask), points, 25, 10, scheme=three_class_scheme, chip_size=3,
        )
    centers = {tuple(c) for c in np.concatenate([train.centers, test.centers])}
    assert (col, row) not in centers


def test_upsample_only_touches_one_class():
    windows = np.zeros((5, 1, 1, 1))
    dataset = ChipDataset(windows=windows, centers=np.arange(10).reshape(5, 2), labels=[0, 0, 0, 1, 1])
    grown = upsample_class(dataset, 1, 6, seed=3)
    np.testing.assert_array_equal(grown.class_counts(2), [3, 6])
    assert upsample_class(dataset, 0, 2, seed=3) is dataset
    with pytest.raises(MissingClassError):
        upsample_class(dataset, 4, 6, seed=3)


@settings(max_examples=60, deadline=None)
@given(
    counts=st.lists(st.integers(0, 40), min_size=1, max_size=6),
    k=st.integers(2, 10),
    seed=st.integers(0, 1000),
)
def test_stratified_folds_partition(counts, k, seed):
    labels = np.repeat(np.arange(len(counts)), counts)
    folds = stratified_folds(labels, k, seed)
    assert len(folds) == k
    joined = np.sort(np.concatenate(folds))
    np.testing.assert_array_equal(joined, np.arange(labels.size))
    sizes = [f.size for f in folds]
    assert max(sizes) - min(sizes) <= 1
    for cid in range(len(counts)):
        per_fold = [int((labels[f] == cid).sum()) for f in folds]
        assert max(per_fold) - min(per_fold) <= 1


def test_stratified_holdout_fraction():
    labels = np.repeat([0, 1, 2], [20, 30, 1])
    keep, hold = stratified_holdout(labels, 0.1, seed=0)
    assert np.bincount(labels[hold], minlength=3).tolist() == [2, 3, 0]
    assert keep.size + hold.size == labels.size
    assert not set(keep) & set(hold)


def test_normalize_with_train_stats():
    rng = np.random.default_rng(5)
    train = ChipDataset(windows=rng.normal(3.0, 2.0, (50, 3, 3, 2)), centers=np.zeros((50, 2)))
    test = ChipDataset(windows=rng.normal(3.0, 2.0, (10, 3, 3, 2)), centers=np.zeros((10, 2)))
    normed, stats = normalize(train)
    np.testing.assert_allclose(normed.windows.mean(axis=(0, 1, 2)), 0.0, atol=1e-12)
    np.testing.assert_allclose(normed.windows.std(axis=(0, 1, 2)), 1.0, atol=1e-12)
    test_normed, same = normalize(test, stats)
    assert same == stats
    assert test_normed.normalization == stats
    with pytest.raises(ShapeError):
        normalize(ChipDataset(windows=np.zeros((2, 3, 3, 4)), centers=np.zeros((2, 2))), stats)
    with pytest.raises(EmptyInputError):
        normalize(ChipDataset(windows=np.zeros((0, 3, 3, 2)), centers=np.zeros((0, 2))))


def test_constant_channel_gets_unit_std():
    windows = np.ones((4, 3, 3, 1))
    normed, stats = normalize(ChipDataset(windows=windows, centers=np.zeros((4, 2))))
    assert stats.std.tolist() == [1.0]
    assert (normed.windows == 0.0).all()


def test_sample_size_rules():
    assert minimum_sample_size(7, 7) == 490
    assert abs(cochran_sample_size(638_040) - 384) <= 1
    assert coverage_fraction(490, 638_040) == pytest.approx(490 / 638_040)


def test_label_csv_round_trip(tmp_path, geo):
    points = [
        LabeledPoint(pixel=(3, 4), class_id=0, year=2023, source="manual"),
        LabeledPoint(pixel=(10, 2), class_id=5, year=2022, source="manual"),
    ]
    write_labels(points, geo, DEFAULT_SCHEME, tmp_path / "labels.csv")
    assert read_labels(tmp_path / "labels.csv", geo) == points


def test_label_geojson(tmp_path, geo):
    lon, lat = geo.center_of(6, 1)
    (tmp_path / "labels.geojson").write_text(
        '{"type": "FeatureCollection", "features": [{"type": "Feature", '
        f'"geometry": {{"type": "Point", "coordinates": [{lon!r}, {lat!r}]}}, '
        '"properties": {"class_name": "water bodies", "year": 2021}}]}'
    )
    (point,) = read_labels(tmp_path / "labels.geojson", geo)
    assert point.pixel == (6, 1) and point.class_id == 4 and point.year == 2021


def test_bad_label_files(tmp_path, geo):
    with pytest.raises(IoError):
        read_labels(tmp_path / "absent.csv", geo)
    (tmp_path / "bad.csv").write_text("lon,lat,class_name,year\n1.0,2.0,Volcano,2023\n")
    with pytest.raises(FormatError):
        read_labels(tmp_path / "bad.csv", geo)
    (tmp_path / "short.csv").write_text("lon,lat\n1.0,2.0\n")
    with pytest.raises(FormatError):
        read_labels(tmp_path / "short.csv", geo)


def test_chip_dataset_file_round_trip(tmp_path, striped_raster, stripe_points, three_class_scheme):
    train, _ = build_labeled_set(striped_raster, stripe_points(20), 10, 5, scheme=three_class_scheme, chip_size=3)
    normed, _ = normalize(train)
    write_chip_dataset(normed, tmp_path / "train.lkc")
    back = read_chip_dataset(tmp_path / "train.lkc")
    np.testing.assert_array_equal(back.windows, normed.windows)
    np.testing.assert_array_equal(back.labels, normed.labels)
    np.testing.assert_array_equal(back.centers, normed.centers)
    assert back.normalization == normed.normalization
    assert back.split_tag == "train"
    (tmp_path / "bad.lkc").write_bytes(b"LKC2" + b"\0" * 20)
    with pytest.raises(FormatError):
        read_chip_dataset(tmp_path / "bad.lkc")


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(seed=st.integers(0, 500))
def test_pixels_labeled_in_two_years_stay_on_one_side(striped_raster, stripe_points, three_class_scheme, seed):
    earlier = stripe_points(40)
    later = [LabeledPoint(pixel=p.pixel, class_id=p.class_id, year=2024) for p in earlier]
    train, test = build_labeled_set(
        striped_raster, earlier + later, 25, 10, seed=seed, scheme=three_class_scheme, chip_size=3,
    )
    train_centers = {tuple(c) for c in train.centers}
    assert not train_centers & {tuple(c) for c in test.centers}
    assert len(train_centers) == len(train)


def test_unique_pixels_keeps_the_latest_year():
    points = [
        LabeledPoint(pixel=(2, 3), class_id=1, year=2024),
        LabeledPoint(pixel=(2, 3), class_id=0, year=2022),
        LabeledPoint(pixel=(0, 1), class_id=2, year=2022),
    ]
    kept = unique_pixels(points)
    assert [(p.pixel, p.class_id) for p in kept] == [((0, 1), 2), ((2, 3), 1)]


def test_upsampled_chips_copy_their_source_exactly(striped_raster, stripe_points, three_class_scheme):
    points = [p for p in stripe_points(40) if p.class_id != 2] + stripe_points(13, seed=9)[-13:]
    train, _ = build_labeled_set(striped_raster, points, 25, 10, seed=2, scheme=three_class_scheme, chip_size=3)
    sources = {tuple(c): w for c, w in zip(train.centers[:-16], train.windows[:-16])}
    duplicates = zip(train.centers[-16:], train.windows[-16:], train.labels[-16:])
    for center, window, label in duplicates:
        assert label == 2
        original = sources[tuple(center)]
        assert window.tobytes() == original.tobytes()
