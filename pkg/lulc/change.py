"""
Yearly class maps and the change products derived from them.

The urban expansion grid gives, for every pixel urban in the final year,
the first year it was classified urban; all other pixels hold NEVER.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from matplotlib import colormaps
from PIL import Image

from lulc.classifiers import AnyModel, ForestModel, input_channels, predict_windows
from lulc.dataset import DEFAULT_CHIP_SIZE, iter_chip_batches
from lulc.errors import ConfigError, EmptyInputError, InsufficientDataError, IoError, ShapeError
from lulc.raster_core import Band, GeoRef, Raster, read_raster, write_geotiff
from lulc.schemas import DEFAULT_SCHEME, ClassScheme

logger = logging.getLogger(__name__)

NEVER = -1
WHITE = (255, 255, 255)
MASK_COLOR = (200, 200, 200)
YEAR_COLORMAP = "plasma"
CLASS_BAND = "class_id"
EXPANSION_BAND = "first_urban_year"

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class ClassMap:
    """Class ids of one year; masked pixels hold -1."""

    year: int
    ids: np.ndarray
    mask: np.ndarray
    scheme: ClassScheme = DEFAULT_SCHEME
    provenance: Dict[str, str] = field(default_factory=dict)
    geo: GeoRef = field(default_factory=GeoRef)

    def __post_init__(self) -> None:
        mask = np.asarray(self.mask, dtype=bool)
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.shape != mask.shape:
            raise ShapeError(f"class ids {ids.shape} vs mask {mask.shape}")
        ids = np.where(mask, ids, -1)
        valid = ids[mask]
        if valid.size and (valid.min() < 0 or valid.max() >= len(self.scheme)):
            raise ShapeError(f"class ids outside [0, {len(self.scheme)}) at unmasked pixels")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.ids.shape

    def counts(self) -> np.ndarray:
        return np.bincount(self.ids[self.mask], minlength=len(self.scheme))


@dataclass(frozen=True, eq=False)
class UrbanExpansion:
    """
    first_year: first urban year for pixels urban in the final year, NEVER elsewhere.
    flicker: urban -> non-urban reversions per pixel after its first urban year.
    """

    first_year: np.ndarray
    flicker: np.ndarray
    years: Tuple[int, ...]
    urban_class_id: int
    geo: GeoRef = field(default_factory=GeoRef)

    @property
    def final_urban(self) -> np.ndarray:
        return self.first_year != NEVER

    def area_by_year(self) -> pd.DataFrame:
        """Pixels first urban in each year (the first year includes pre-existing urban area)."""
        counts = [int((self.first_year == y).sum()) for y in self.years]
        return pd.DataFrame({"year": list(self.years), "new_urban_pixels": counts})


@dataclass(frozen=True, eq=False)
class ChangeProduct:
    expansion: UrbanExpansion
    proportions: pd.DataFrame
    transitions: Dict[Tuple[int, int], np.ndarray]


def classify_map(
    raster: Raster,
    model: AnyModel,
    chip_size: int = DEFAULT_CHIP_SIZE,
    year: int = 0,
    scheme: ClassScheme = DEFAULT_SCHEME,
    provenance: Optional[Dict[str, str]] = None,
    threads: int = 1,
) -> ClassMap:
    """
    Classify the chip around every valid pixel; masked pixels stay masked.

    Raises:
        ShapeError: the raster's channels do not match the model input
    """
    channels = input_channels(model)
    n_bands = len(raster.bands)
    if channels is not None and channels != n_bands:
        raise ShapeError(f"model expects {channels} channels, raster has {n_bands}")
    if isinstance(model, ForestModel) and model.n_features != chip_size * chip_size * n_bands:
        raise ShapeError(f"forest expects {model.n_features} features, chips give {chip_size * chip_size * n_bands}")

    def classify_rows(item: Tuple[int, np.ndarray]) -> np.ndarray:
        start, batch = item
        rows = batch.shape[0]
        out = np.full((rows, raster.width), -1, dtype=np.int64)
        valid = raster.mask[start:start + rows]
        if valid.any():
            out[valid] = predict_windows(model, batch[valid])
        return out

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        blocks = list(pool.map(classify_rows, iter_chip_batches(raster, chip_size)))
    ids = np.concatenate(blocks, axis=0)
    logger.info(f"Classified {int(raster.mask.sum())} pixels for year {year}")
    return ClassMap(year=year, ids=ids, mask=raster.mask, scheme=scheme, provenance=dict(provenance or {}), geo=raster.geo)


def _check_series(maps: Sequence[ClassMap]) -> List[ClassMap]:
    if not maps:
        raise EmptyInputError("no class maps given")
    ordered = sorted(maps, key=lambda m: m.year)
    years = [m.year for m in ordered]
    if len(set(years)) != len(years):
        raise ShapeError(f"duplicate years in class map series: {years}")
    shape = ordered[0].shape
    for m in ordered:
        if m.shape != shape:
            raise ShapeError(f"class map {m.year} has shape {m.shape}, expected {shape}")
    return ordered


def urban_expansion(maps: Sequence[ClassMap], urban_class_id: int = 0) -> UrbanExpansion:
    """
    First urban year per pixel, for pixels urban in the final year.

    Raises:
        InsufficientDataError: fewer than two years
        ShapeError: maps of different shapes
    """
    ordered = _check_series(maps)
    if len(ordered) < 2:
        raise InsufficientDataError(f"urban expansion needs at least two years, got {len(ordered)}")
    shape = ordered[0].shape
    first_year = np.full(shape, NEVER, dtype=np.int64)
    flicker = np.zeros(shape, dtype=np.int64)
    previous_urban = np.zeros(shape, dtype=bool)
    for m in ordered:
        urban = m.mask & (m.ids == urban_class_id)
        first_year[urban & (first_year == NEVER)] = m.year
        flicker += previous_urban & m.mask & ~urban
        previous_urban = np.where(m.mask, urban, previous_urban)
    final = ordered[-1]
    final_urban = final.mask & (final.ids == urban_class_id)
    first_year[~final_urban] = NEVER
    flickering = int((flicker > 0).sum())
    if flickering:
        logger.info(f"{flickering} pixels reverted from urban at least once")
    return UrbanExpansion(
        first_year=first_year,
        flicker=flicker,
        years=tuple(m.year for m in ordered),
        urban_class_id=urban_class_id,
        geo=final.geo,
    )


def class_proportions(maps: Sequence[ClassMap]) -> pd.DataFrame:
    """Per-year class shares over unmasked pixels (rows: years, columns: class names)."""
    ordered = _check_series(maps)
    names = ordered[0].scheme.names
    rows = []
    for m in ordered:
        counts = m.counts()
        total = counts.sum()
        shares = counts / total if total else np.zeros(len(names))
        rows.append([m.year, *shares])
    return pd.DataFrame(rows, columns=["year", *names])


def transition_matrix(map_a: ClassMap, map_b: ClassMap) -> np.ndarray:
    """counts[i, j]: pixels of class i in map_a and class j in map_b, over jointly unmasked pixels."""
    if map_a.shape != map_b.shape:
        raise ShapeError(f"class maps {map_a.shape} and {map_b.shape} differ in shape")
    n = len(map_a.scheme)
    both = map_a.mask & map_b.mask
    flat = np.bincount(map_a.ids[both] * n + map_b.ids[both], minlength=n * n)
    return flat.reshape(n, n)


def replacement_map(map_a: ClassMap, map_b: ClassMap) -> np.ndarray:
    """from * C + to for pixels whose class changed, -1 where unchanged or masked in either map."""
    if map_a.shape != map_b.shape:
        raise ShapeError(f"class maps {map_a.shape} and {map_b.shape} differ in shape")
    n = len(map_a.scheme)
    changed = map_a.mask & map_b.mask & (map_a.ids != map_b.ids)
    return np.where(changed, map_a.ids * n + map_b.ids, -1)


def transition_frame(transitions: Dict[Tuple[int, int], np.ndarray], names: Sequence[str]) -> pd.DataFrame:
    """Long format: from_year, to_year, from_class, to_class, pixels."""
    rows = []
    for (year_a, year_b), counts in transitions.items():
        for i, j in np.ndindex(counts.shape):
            rows.append({
                "from_year": year_a, "to_year": year_b,
                "from_class": names[i], "to_class": names[j], "pixels": int(counts[i, j]),
            })
    return pd.DataFrame(rows, columns=["from_year", "to_year", "from_class", "to_class", "pixels"])


def change_product(maps: Sequence[ClassMap], urban_class_id: int = 0) -> ChangeProduct:
    """Expansion grid, proportions and consecutive-year transitions."""
    ordered = _check_series(maps)
    expansion = urban_expansion(ordered, urban_class_id)
    transitions = {
        (a.year, b.year): transition_matrix(a, b)
        for a, b in zip(ordered[:-1], ordered[1:])
    }
    return ChangeProduct(expansion=expansion, proportions=class_proportions(ordered), transitions=transitions)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def year_palette(years: Sequence[int]) -> List[Tuple[int, int, int]]:
    """One colour per year sampled evenly from the year colormap."""
    cmap = colormaps[YEAR_COLORMAP]
    positions = np.linspace(0.0, 0.9, num=max(len(years), 1))
    return [tuple(int(round(255 * channel)) for channel in cmap(p)[:3]) for p in positions[:len(years)]]


def _save_indexed(indices: np.ndarray, palette: Sequence[Tuple[int, int, int]], legend: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    image = Image.fromarray(indices.astype(np.uint8))
    flat = [channel for color in palette for channel in color]
    image.putpalette(flat + [0] * (768 - len(flat)))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        image.save(path, format="PNG", optimize=False)
        legend.to_csv(path.with_suffix(".legend.csv"), index=False)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    return path


def render_map(
    item: Union[ClassMap, UrbanExpansion],
    path: PathLike,
    palette: Optional[Sequence[Tuple[int, int, int]]] = None,
) -> Path:
    """
    Indexed-colour PNG plus a `<name>.legend.csv` sidecar (index, label, r, g, b).

    Class maps use the scheme palette (or `palette`) with one extra entry for
    masked pixels. Expansion grids use white for NEVER and one colour per year.

    Raises:
        ConfigError: the palette does not cover every class id
    """
    if isinstance(item, ClassMap):
        colors = list(palette if palette is not None else item.scheme.palette)
        used = item.ids[item.mask]
        needed = max(len(item.scheme), int(used.max()) + 1 if used.size else 0)
        if len(colors) < needed:
            raise ConfigError(f"palette has {len(colors)} colours, class map needs {needed}", field="classes")
        colors = colors[:needed]
        indices = np.where(item.mask, item.ids, needed)
        labels = [*item.scheme.names[:needed], "masked"]
        colors.append(MASK_COLOR)
    else:
        years = list(item.years)
        year_colors = list(palette) if palette is not None else year_palette(years)
        if len(year_colors) < len(years):
            raise ConfigError(f"palette has {len(year_colors)} colours for {len(years)} years")
        lookup = {y: i + 1 for i, y in enumerate(years)}
        indices = np.zeros(item.first_year.shape, dtype=np.int64)
        for y, i in lookup.items():
            indices[item.first_year == y] = i
        labels = ["non-urban", *[str(y) for y in years]]
        colors = [WHITE, *year_colors[:len(years)]]
    legend = pd.DataFrame({
        "index": range(len(colors)),
        "label": labels,
        "r": [c[0] for c in colors],
        "g": [c[1] for c in colors],
        "b": [c[2] for c in colors],
    })
    written = _save_indexed(indices, colors, legend, path)
    logger.debug(f"Rendered {written}")
    return written


def write_class_map(class_map: ClassMap, path: PathLike) -> None:
    """Single-band GeoTIFF of class ids, masked pixels as nodata."""
    band = Band(name=CLASS_BAND, values=np.where(class_map.mask, class_map.ids, 0).astype(np.float64))
    write_geotiff(Raster(bands=(band,), mask=class_map.mask, geo=class_map.geo), path)


def read_class_map(path: PathLike, year: int, scheme: ClassScheme = DEFAULT_SCHEME) -> ClassMap:
    raster = read_raster(path)
    values = raster.bands[0].values
    return ClassMap(year=year, ids=values.astype(np.int64), mask=raster.mask, scheme=scheme, geo=raster.geo)


def write_expansion(expansion: UrbanExpansion, path: PathLike) -> None:
    """Single-band GeoTIFF of first urban years, NEVER stored as -1."""
    band = Band(name=EXPANSION_BAND, values=expansion.first_year.astype(np.float64))
    write_geotiff(Raster(bands=(band,), mask=np.ones(expansion.first_year.shape, dtype=bool), geo=expansion.geo), path)


def write_replacement(codes: np.ndarray, geo: GeoRef, path: PathLike) -> None:
    band = Band(name="replacement", values=codes.astype(np.float64))
    write_geotiff(Raster(bands=(band,), mask=np.ones(codes.shape, dtype=bool), geo=geo), path)
