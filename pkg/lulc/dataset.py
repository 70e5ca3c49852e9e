"""
Chip datasets: per-pixel windows, labeled splits, up-sampling and normalization.

A chip is the chip_size x chip_size x channels window centred on a pixel,
edge-replicated where it runs off the raster.
"""
import json
import logging
import math
import struct
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from lulc.errors import (
    BoundsError,
    ConfigError,
    ConflictError,
    EmptyInputError,
    FormatError,
    IoError,
    MissingClassError,
    ShapeError,
    UnderfullWarning,
)
from lulc.raster_core import GeoRef, Raster
from lulc.schemas import DEFAULT_SCHEME, ClassScheme, LabeledPoint
from lulc.seeding import derive_rng, derive_seed

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SplitTag = Literal["train", "test", "unlabeled"]

DEFAULT_CHIP_SIZE = 9
# Table-1 sample-size sweep (70/100/150/200/250 samples per class x 7 classes).
SWEEP_SIZES = (490, 700, 1050, 1400, 1750)
CHIP_MAGIC = b"LKC1"


@dataclass(frozen=True)
class Chip:
    window: np.ndarray
    center: Tuple[int, int]
    label: Optional[int] = None


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel z-score statistics fitted on a training split."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, windows: np.ndarray) -> np.ndarray:
        return (windows - self.mean) / self.std

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NormalizationStats):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)

    __hash__ = None


@dataclass(frozen=True)
class ChipDataset:
    """
    Chips stored as one (N, size, size, channels) tensor.

    `labels` holds class ids, or is None for unlabeled inference sets.
    """

    windows: np.ndarray
    centers: np.ndarray
    labels: Optional[np.ndarray] = None
    normalization: Optional[NormalizationStats] = None
    split_tag: SplitTag = "unlabeled"

    def __post_init__(self) -> None:
        windows = np.asarray(self.windows, dtype=np.float64)
        if windows.ndim != 4 or windows.shape[1] != windows.shape[2]:
            raise ShapeError(f"chip windows must be (N, S, S, C), got {windows.shape}")
        if windows.shape[1] % 2 == 0:
            raise ShapeError(f"chip size must be odd, got {windows.shape[1]}")
        centers = np.asarray(self.centers, dtype=np.int64).reshape(-1, 2)
        if centers.shape[0] != windows.shape[0]:
            raise ShapeError(f"{centers.shape[0]} centers for {windows.shape[0]} chips")
        object.__setattr__(self, "windows", windows)
        object.__setattr__(self, "centers", centers)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (windows.shape[0],):
                raise ShapeError(f"{labels.shape} labels for {windows.shape[0]} chips")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def chip_size(self) -> int:
        return self.windows.shape[1]

    @property
    def channels(self) -> int:
        return self.windows.shape[3]

    @property
    def chips(self) -> List[Chip]:
        labels = self.labels if self.labels is not None else [None] * len(self)
        return [
            Chip(window=w, center=(int(c[0]), int(c[1])), label=None if y is None else int(y))
            for w, c, y in zip(self.windows, self.centers, labels)
        ]

    def flattened(self) -> np.ndarray:
        """(N, size*size*channels) vectors, the MLP/forest input."""
        return self.windows.reshape(len(self), -1)

    def center_pixels(self) -> np.ndarray:
        """(N, channels) spectra of the centre pixels, the k-means input."""
        half = self.chip_size // 2
        return self.windows[:, half, half, :]

    def subset(self, indices: np.ndarray) -> "ChipDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            windows=self.windows[indices],
            centers=self.centers[indices],
            labels=None if self.labels is None else self.labels[indices],
        )

    def concat(self, other: "ChipDataset") -> "ChipDataset":
        if (self.labels is None) != (other.labels is None):
            raise ShapeError("cannot concatenate labeled and unlabeled chips")
        return replace(
            self,
            windows=np.concatenate([self.windows, other.windows]),
            centers=np.concatenate([self.centers, other.centers]),
            labels=None if self.labels is None else np.concatenate([self.labels, other.labels]),
        )

    def class_counts(self, n_classes: int) -> np.ndarray:
        if self.labels is None:
            return np.zeros(n_classes, dtype=np.int64)
        return np.bincount(self.labels, minlength=n_classes)


# ---------------------------------------------------------------------------
# Chip extraction
# ---------------------------------------------------------------------------


def _check_chip_size(chip_size: int) -> int:
    if chip_size < 1 or chip_size % 2 == 0:
        raise ShapeError(f"chip size must be odd and positive, got {chip_size}")
    return chip_size // 2


def extract_chips(raster: Raster, centers: np.ndarray, chip_size: int = DEFAULT_CHIP_SIZE) -> np.ndarray:
    """(N, size, size, channels) windows around (col, row) centers, edge-replicated."""
    half = _check_chip_size(chip_size)
    centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
    cols, rows = centers[:, 0], centers[:, 1]
    if ((cols < 0) | (cols >= raster.width) | (rows < 0) | (rows >= raster.height)).any():
        raise BoundsError(f"chip center outside raster of {raster.width}x{raster.height}")
    offsets = np.arange(-half, half + 1)
    row_index = np.clip(rows[:, None] + offsets[None, :], 0, raster.height - 1)
    col_index = np.clip(cols[:, None] + offsets[None, :], 0, raster.width - 1)
    stack = raster.stack()
    return stack[row_index[:, :, None], col_index[:, None, :]]


def extract_chip(raster: Raster, center: Tuple[int, int], chip_size: int = DEFAULT_CHIP_SIZE) -> Chip:
    """Single chip centred on (col, row)."""
    window = extract_chips(raster, np.array([center]), chip_size)[0]
    return Chip(window=window, center=(int(center[0]), int(center[1])))


def iter_chip_batches(
    raster: Raster,
    chip_size: int = DEFAULT_CHIP_SIZE,
    batch_pixels: int = 8192,
) -> Iterator[Tuple[int, np.ndarray]]:
    """
    Chips for every pixel, a block of rows at a time.

    Yields (first_row, windows) where windows is a read-only
    (rows, width, size, size, channels) view into an edge-padded copy of the
    raster; nothing is materialized per chip.
    """
    half = _check_chip_size(chip_size)
    padded = np.pad(raster.stack(), ((half, half), (half, half), (0, 0)), mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(padded, (chip_size, chip_size), axis=(0, 1))
    view = view.transpose(0, 1, 3, 4, 2)  # (H, W, S, S, C)
    rows_per_batch = max(1, batch_pixels // raster.width)
    for start in range(0, raster.height, rows_per_batch):
        yield start, view[start:start + rows_per_batch]


def chip_census(raster: Raster, chip_size: int = DEFAULT_CHIP_SIZE) -> int:
    """Number of chips generated over the whole raster (one per pixel)."""
    return sum(batch.shape[0] * batch.shape[1] for _, batch in iter_chip_batches(raster, chip_size))


def unlabeled_set(raster: Raster, chip_size: int = DEFAULT_CHIP_SIZE) -> ChipDataset:
    """Every valid pixel as an unlabeled chip (small rasters only)."""
    rows, cols = np.nonzero(raster.mask)
    centers = np.stack([cols, rows], axis=1)
    return ChipDataset(windows=extract_chips(raster, centers, chip_size), centers=centers)


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------


def resolve_points(points: Sequence[LabeledPoint], raster: Raster, scheme: ClassScheme) -> List[LabeledPoint]:
    """
    Validate points against the raster and scheme, dropping exact duplicates.

    Raises:
        BoundsError: point outside the raster
        MissingClassError: class id not in the scheme
        ConflictError: two classes claimed for the same pixel and year
    """
    seen: Dict[Tuple[int, int, int], LabeledPoint] = {}
    for point in points:
        col, row = point.pixel
        if not (0 <= col < raster.width and 0 <= row < raster.height):
            raise BoundsError(f"label at {point.pixel} outside raster of {raster.width}x{raster.height}")
        if not scheme.contains(point.class_id):
            raise MissingClassError(f"label class {point.class_id} not in scheme")
        key = (col, row, point.year)
        previous = seen.get(key)
        if previous is not None and previous.class_id != point.class_id:
            raise ConflictError(
                f"pixel {point.pixel} in {point.year} labeled both {previous.class_id} and {point.class_id}"
            )
        seen.setdefault(key, point)
    resolved = sorted(seen.values(), key=lambda p: (p.year, p.pixel[1], p.pixel[0]))
    if len(resolved) < len(points):
        logger.info(f"Dropped {len(points) - len(resolved)} duplicate labels")
    return resolved


def unique_pixels(points: Sequence[LabeledPoint]) -> List[LabeledPoint]:
    """
    One point per pixel, the latest year winning, so a split by point is
    also a split by chip centre.
    """
    latest: Dict[Tuple[int, int], LabeledPoint] = {}
    for point in points:
        held = latest.get(point.pixel)
        if held is None or point.year >= held.year:
            latest[point.pixel] = point
    kept = sorted(latest.values(), key=lambda p: (p.year, p.pixel[1], p.pixel[0]))
    if len(kept) < len(points):
        logger.info(f"Kept the latest label for {len(points) - len(kept)} pixels labeled in several years")
    return kept


def _class_id(scheme: ClassScheme, name: str, where: str) -> int:
    try:
        return scheme.id_of(str(name))
    except KeyError as exc:
        raise FormatError(f"{where}: unknown class name {name!r}") from exc


def read_labels(path: PathLike, geo: GeoRef, scheme: ClassScheme = DEFAULT_SCHEME) -> List[LabeledPoint]:
    """
    Read labeled points from CSV (lon, lat, class_name, year[, source]) or
    GeoJSON points (properties class_name, year[, source]).
    """
    path = Path(path)
    points: List[LabeledPoint] = []
    try:
        if path.suffix.lower() in (".geojson", ".json"):
            collection = json.loads(path.read_text(encoding="utf-8"))
            for i, feature in enumerate(collection.get("features", [])):
                lon, lat = feature["geometry"]["coordinates"][:2]
                props = feature.get("properties") or {}
                points.append(LabeledPoint(
                    pixel=geo.pixel_of(float(lon), float(lat)),
                    class_id=_class_id(scheme, props["class_name"], f"{path} feature {i}"),
                    year=int(props["year"]),
                    source=str(props.get("source", path.name)),
                ))
        else:
            frame = pd.read_csv(path)
            missing = {"lon", "lat", "class_name", "year"} - set(frame.columns)
            if missing:
                raise FormatError(f"{path}: missing label columns {sorted(missing)}")
            for i, row in enumerate(frame.itertuples(index=False)):
                points.append(LabeledPoint(
                    pixel=geo.pixel_of(float(row.lon), float(row.lat)),
                    class_id=_class_id(scheme, row.class_name, f"{path} row {i}"),
                    year=int(row.year),
                    source=str(getattr(row, "source", path.name)),
                ))
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed label record ({exc})") from exc
    logger.info(f"Read {len(points)} labels from {path}")
    return points


def write_labels(points: Sequence[LabeledPoint], geo: GeoRef, scheme: ClassScheme, path: PathLike) -> None:
    """Write points as a label CSV at their pixel-centre coordinates."""
    rows = []
    for p in points:
        lon, lat = geo.center_of(*p.pixel)
        rows.append({"lon": lon, "lat": lat, "class_name": scheme.names[p.class_id], "year": p.year, "source": p.source})
    pd.DataFrame(rows, columns=["lon", "lat", "class_name", "year", "source"]).to_csv(path, index=False)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def _labeled_chips(raster: Raster, points: Sequence[LabeledPoint], chip_size: int, tag: SplitTag) -> ChipDataset:
    centers = np.array([p.pixel for p in points], dtype=np.int64).reshape(-1, 2)
    labels = np.array([p.class_id for p in points], dtype=np.int64)
    windows = extract_chips(raster, centers, chip_size) if len(points) else np.zeros((0, chip_size, chip_size, len(raster.bands)))
    return ChipDataset(windows=windows, centers=centers, labels=labels, split_tag=tag)


def build_labeled_set(
    raster: Raster,
    points: Sequence[LabeledPoint],
    per_class_train: int = 175,
    per_class_test: int = 75,
    seed: int = 0,
    scheme: ClassScheme = DEFAULT_SCHEME,
    chip_size: int = DEFAULT_CHIP_SIZE,
    underfull: Literal["upsample", "warn"] = "upsample",
    year: Optional[int] = None,
) -> Tuple[ChipDataset, ChipDataset]:
    """
    Stratified train/test chip sets with fixed per-class counts.

    A class with fewer than per_class_train + per_class_test points is split
    in the same ratio; with underfull="upsample" its training part is then
    up-sampled to per_class_train, with "warn" an UnderfullWarning is issued
    and the smaller counts are kept. Test chips are never duplicated.

    Raises:
        MissingClassError: a scheme class has no points
    """
    if per_class_train < 1 or per_class_test < 0:
        raise ConfigError(f"invalid split sizes {per_class_train}/{per_class_test}", field="labels")
    if year is not None:
        points = [p for p in points if p.year == year]
    points = unique_pixels(resolve_points(points, raster, scheme))
    masked = [p for p in points if not raster.mask[p.pixel[1], p.pixel[0]]]
    if masked:
        logger.warning(f"Ignoring {len(masked)} labels on masked pixels")
        points = [p for p in points if raster.mask[p.pixel[1], p.pixel[0]]]

    requested = per_class_train + per_class_test
    train_points: List[LabeledPoint] = []
    test_points: List[LabeledPoint] = []
    short_classes: List[int] = []
    for class_id in range(len(scheme)):
        members = [p for p in points if p.class_id == class_id]
        if not members:
            raise MissingClassError(f"class {class_id} ({scheme.names[class_id]}) has no labeled points")
        order = derive_rng(seed, f"split/{class_id}").permutation(len(members))
        if len(members) >= requested:
            n_train = per_class_train
            n_test = per_class_test
        else:
            n_train = min(len(members), max(1, round(len(members) * per_class_train / requested)))
            n_test = len(members) - n_train
            short_classes.append(class_id)
            message = f"class {class_id} has {len(members)} points, {requested} requested ({n_train}/{n_test} split)"
            if underfull == "warn":
                warnings.warn(message, UnderfullWarning, stacklevel=2)
            else:
                logger.info(f"{message}; up-sampling training chips to {per_class_train}")
        train_points.extend(members[i] for i in order[:n_train])
        test_points.extend(members[i] for i in order[n_train:n_train + n_test])

    train = _labeled_chips(raster, train_points, chip_size, "train")
    test = _labeled_chips(raster, test_points, chip_size, "test")
    if underfull == "upsample":
        for class_id in short_classes:
            train = upsample_class(train, class_id, per_class_train, derive_seed(seed, f"upsample/{class_id}"))
    logger.info(f"Built labeled set: {len(train)} train / {len(test)} test chips")
    return train, test


def upsample_class(dataset: ChipDataset, class_id: int, target_count: int, seed: int) -> ChipDataset:
    """
    Bring one class up to target_count chips by sampling its chips with
    replacement. Other classes are untouched; duplicates are appended.
    """
    if dataset.labels is None:
        raise MissingClassError("cannot up-sample an unlabeled dataset")
    members = np.flatnonzero(dataset.labels == class_id)
    if members.size == 0:
        raise MissingClassError(f"class {class_id} absent from dataset")
    if members.size >= target_count:
        return dataset
    rng = np.random.default_rng(seed)
    extra = rng.choice(members, size=target_count - members.size, replace=True)
    return dataset.concat(dataset.subset(extra))


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> List[np.ndarray]:
    """
    k disjoint, exhaustive folds; per-class counts differ by at most one
    across folds, as do fold sizes.
    """
    labels = np.asarray(labels)
    sequence = []
    for class_id in np.unique(labels):
        members = np.flatnonzero(labels == class_id)
        sequence.append(members[derive_rng(seed, f"fold/{int(class_id)}").permutation(members.size)])
    ordered = np.concatenate(sequence) if sequence else np.zeros(0, dtype=np.int64)
    positions = np.arange(ordered.size) % k
    return [np.sort(ordered[positions == fold]) for fold in range(k)]


def stratified_holdout(labels: np.ndarray, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """(keep, holdout) index arrays with `fraction` of each class held out."""
    labels = np.asarray(labels)
    keep, hold = [], []
    for class_id in np.unique(labels):
        members = np.flatnonzero(labels == class_id)
        members = members[derive_rng(seed, f"holdout/{int(class_id)}").permutation(members.size)]
        n_hold = int(round(members.size * fraction)) if members.size > 1 else 0
        hold.append(members[:n_hold])
        keep.append(members[n_hold:])
    return np.sort(np.concatenate(keep)), np.sort(np.concatenate(hold))


# ---------------------------------------------------------------------------
# Normalization and sample sizes
# ---------------------------------------------------------------------------


def normalize(dataset: ChipDataset, stats: Optional[NormalizationStats] = None) -> Tuple[ChipDataset, NormalizationStats]:
    """
    Per-channel z-score.

    Without `stats` the statistics are fitted on this dataset (the train
    split); pass the returned stats to normalize test or inference chips.
    Zero-variance channels get std 1.
    """
    if len(dataset) == 0:
        raise EmptyInputError("cannot normalize an empty dataset")
    if stats is None:
        mean = dataset.windows.mean(axis=(0, 1, 2))
        std = dataset.windows.std(axis=(0, 1, 2))
        std = np.where(std > 0, std, 1.0)
        stats = NormalizationStats(mean=mean, std=std)
    elif stats.mean.shape != (dataset.channels,):
        raise ShapeError(f"stats for {stats.mean.shape[0]} channels, dataset has {dataset.channels}")
    return replace(dataset, windows=stats.apply(dataset.windows), normalization=stats), stats


def minimum_sample_size(n_inputs: int, n_classes: int) -> int:
    """Rule-of-thumb minimum reference sample, m >= 10 * n * C."""
    if n_inputs < 1 or n_classes < 1:
        raise ConfigError(f"n_inputs and n_classes must be >= 1, got {n_inputs}, {n_classes}")
    return 10 * n_inputs * n_classes


def cochran_sample_size(population: int, confidence: float = 0.95, margin: float = 0.05, proportion: float = 0.5) -> int:
    """Cochran's sample size with finite-population correction, rounded up."""
    if population < 1 or not 0 < confidence < 1 or not 0 < margin < 1:
        raise ConfigError("population must be >= 1, confidence and margin in (0, 1)")
    z = norm.ppf(1 - (1 - confidence) / 2)
    n0 = z * z * proportion * (1 - proportion) / (margin * margin)
    return int(math.ceil(n0 / (1 + (n0 - 1) / population)))


def coverage_fraction(n_samples: int, population: int) -> float:
    """Samples as a share of all pixels."""
    return n_samples / population


# ---------------------------------------------------------------------------
# Chip dataset files
# ---------------------------------------------------------------------------


def write_chip_dataset(dataset: ChipDataset, path: PathLike) -> None:
    """
    LKC1 layout (little-endian): magic, u32 N, u32 size, u32 channels,
    u8 split tag length + ASCII tag, u8 has-normalization flag (+ 2*C f64),
    N*size*size*C f64 windows, N i32 labels (-1 unlabeled), 2N i32 centers.
    """
    tag = dataset.split_tag.encode("ascii")
    parts = [
        CHIP_MAGIC,
        struct.pack("<III", len(dataset), dataset.chip_size, dataset.channels),
        struct.pack("<B", len(tag)) + tag,
    ]
    if dataset.normalization is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(dataset.normalization.mean.astype("<f8").tobytes())
        parts.append(dataset.normalization.std.astype("<f8").tobytes())
    parts.append(np.ascontiguousarray(dataset.windows, dtype="<f8").tobytes())
    labels = dataset.labels if dataset.labels is not None else np.full(len(dataset), -1)
    parts.append(labels.astype("<i4").tobytes())
    parts.append(dataset.centers.astype("<i4").tobytes())
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def read_chip_dataset(path: PathLike) -> ChipDataset:
    """Read an LKC1 file written by write_chip_dataset."""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    if payload[:4] != CHIP_MAGIC:
        raise FormatError(f"{path}: not an LKC1 chip dataset (bad magic)")
    try:
        n, size, channels = struct.unpack_from("<III", payload, 4)
        offset = 16
        (tag_len,) = struct.unpack_from("<B", payload, offset)
        tag = payload[offset + 1:offset + 1 + tag_len].decode("ascii")
        offset += 1 + tag_len
        (has_norm,) = struct.unpack_from("<B", payload, offset)
        offset += 1
        stats = None
        if has_norm:
            mean = np.frombuffer(payload, "<f8", channels, offset).astype(np.float64)
            std = np.frombuffer(payload, "<f8", channels, offset + 8 * channels).astype(np.float64)
            stats = NormalizationStats(mean=mean, std=std)
            offset += 16 * channels
        count = n * size * size * channels
        windows = np.frombuffer(payload, "<f8", count, offset).astype(np.float64).reshape(n, size, size, channels)
        offset += 8 * count
        labels = np.frombuffer(payload, "<i4", n, offset).astype(np.int64)
        offset += 4 * n
        centers = np.frombuffer(payload, "<i4", 2 * n, offset).astype(np.int64).reshape(n, 2)
        offset += 8 * n
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: truncated or corrupt chip dataset") from exc
    if offset != len(payload):
        raise FormatError(f"{path}: trailing bytes after chip dataset")
    return ChipDataset(
        windows=windows,
        centers=centers,
        labels=None if (labels < 0).all() and n else labels,
        normalization=stats,
        split_tag=tag,
    )
