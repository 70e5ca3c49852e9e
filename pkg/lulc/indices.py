"""Normalized-difference spectral indices appended as feature bands."""
import logging
from typing import Iterable, Optional, Sequence

import numpy as np

from lulc.errors import ConfigError, NameCollision
from lulc.raster_core import Band, Raster
from lulc.schemas import BandMapping, IndexRecipe

logger = logging.getLogger(__name__)

NDVI = IndexRecipe(name="NDVI", numerator_bands=("nir", "red"))
NDWI = IndexRecipe(name="NDWI", numerator_bands=("green", "nir"))
MNDWI = IndexRecipe(name="MNDWI", numerator_bands=("green", "swir1"))
NDBI = IndexRecipe(name="NDBI", numerator_bands=("swir1", "nir"))

RECIPES = {recipe.name.lower(): recipe for recipe in (NDVI, NDWI, MNDWI, NDBI)}

# Seven OLI bands + these three make the 10-channel chip stack.
DEFAULT_FEATURE_RECIPES = (NDVI, MNDWI, NDBI)

_IDENTITY = BandMapping()


def recipes_from_names(names: Iterable[str]) -> list:
    """Resolve "ndvi,mndwi"-style names to recipes."""
    resolved = []
    for name in names:
        key = name.strip().lower()
        if key not in RECIPES:
            raise ConfigError(f"unknown index {name!r}; choose from {sorted(RECIPES)}", field="features.indices")
        resolved.append(RECIPES[key])
    return resolved


def normalized_difference(raster: Raster, recipe: IndexRecipe, bands: Optional[BandMapping] = None) -> Band:
    """
    (A - B) / (A + B) per valid pixel.

    Pixels that are masked in the raster or have a zero denominator are
    flagged invalid on the returned band and carry 0.0.
    """
    bands = bands or _IDENTITY
    a = raster.band(bands.resolve(recipe.numerator_bands[0])).values
    b = raster.band(bands.resolve(recipe.numerator_bands[1])).values
    denominator = a + b
    valid = raster.mask & (denominator != 0)
    safe = np.where(valid, denominator, 1.0)
    values = np.where(valid, (a - b) / safe, 0.0)
    return Band(name=recipe.name, values=values, valid=valid)


def ndvi(raster: Raster, bands: Optional[BandMapping] = None) -> Band:
    """(NIR - R) / (NIR + R)."""
    return normalized_difference(raster, NDVI, bands)


def ndwi(raster: Raster, bands: Optional[BandMapping] = None) -> Band:
    """(G - NIR) / (G + NIR), McFeeters' water index."""
    return normalized_difference(raster, NDWI, bands)


def mndwi(raster: Raster, bands: Optional[BandMapping] = None) -> Band:
    """(G - SWIR1) / (G + SWIR1)."""
    return normalized_difference(raster, MNDWI, bands)


def ndbi(raster: Raster, bands: Optional[BandMapping] = None) -> Band:
    """(SWIR1 - NIR) / (SWIR1 + NIR)."""
    return normalized_difference(raster, NDBI, bands)


def append_feature_bands(
    raster: Raster,
    recipes: Sequence[IndexRecipe],
    bands: Optional[BandMapping] = None,
) -> Raster:
    """
    Raster with one extra band per recipe.

    Index validity is folded into the output mask.

    Raises:
        NameCollision: a recipe name matches an existing or earlier band
        BandNotFound: a recipe operand is missing
    """
    if not recipes:
        return raster
    existing = set(raster.band_names)
    mask = raster.mask
    new_bands = []
    for recipe in recipes:
        if recipe.name in existing:
            raise NameCollision(f"band {recipe.name!r} already exists")
        existing.add(recipe.name)
        band = normalized_difference(raster, recipe, bands)
        mask = mask & band.valid
        new_bands.append(Band(name=band.name, values=band.values))
    logger.debug(f"Appended {[r.name for r in recipes]}: {len(raster.bands)} -> {len(raster.bands) + len(new_bands)} bands")
    return Raster(bands=raster.bands + tuple(new_bands), mask=mask, geo=raster.geo)
