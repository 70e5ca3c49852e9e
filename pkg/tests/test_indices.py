import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lulc.errors import BandNotFound, ConfigError, NameCollision
from lulc.indices import (
    MNDWI,
    NDBI,
    NDVI,
    NDWI,
    append_feature_bands,
    mndwi,
    ndbi,
    ndvi,
    normalized_difference,
    recipes_from_names,
)
from lulc.raster_core import Raster
from lulc.schemas import BandMapping

ROLES = ["green", "red", "nir", "swir1"]


def _raster(values: np.ndarray, mask=None) -> Raster:
    return Raster.from_array(values, ROLES, mask=mask)


def test_indices_bounded_on_random_bands():
    rng = np.random.default_rng(0)
    values = rng.uniform(0.0, 1.0, size=(100, 1000, 4))
    values[rng.random((100, 1000)) < 0.01] = 0.0
    raster = _raster(values)
    for recipe in (NDVI, NDWI, MNDWI, NDBI):
        band = normalized_difference(raster, recipe)
        inside = band.values[band.valid]
        assert inside.min() >= -1.0 and inside.max() <= 1.0
        assert (band.values[~band.valid] == 0.0).all()


@settings(max_examples=50, deadline=None)
@given(values=hnp.arrays(np.float64, (6, 6, 4), elements=st.floats(0.0, 1e4, allow_nan=False)))
def test_swapping_operands_negates(values):
    raster = _raster(values)
    for recipe in (NDVI, NDWI, MNDWI, NDBI):
        forward = normalized_difference(raster, recipe)
        backward = normalized_difference(raster, recipe.swapped())
        np.testing.assert_array_equal(forward.values, -backward.values)
        np.testing.assert_array_equal(forward.valid, backward.valid)


def test_ndvi_zero_when_nir_equals_red():
    values = np.random.default_rng(1).uniform(0.1, 0.5, size=(5, 5, 4))
    values[:, :, 2] = values[:, :, 1]
    assert (ndvi(_raster(values)).values == 0.0).all()


def test_zero_denominator_is_invalid():
    values = np.full((2, 2, 4), 0.2)
    values[0, 0, 1:3] = 0.0
    band = ndvi(_raster(values))
    assert not band.valid[0, 0]
    assert band.valid.sum() == 3


def test_masked_pixels_are_invalid():
    mask = np.ones((3, 3), dtype=bool)
    mask[1, 1] = False
    band = mndwi(_raster(np.full((3, 3, 4), 0.3), mask=mask))
    assert not band.valid[1, 1]


def test_band_mapping_resolves_file_names():
    values = np.random.default_rng(2).uniform(0.1, 0.5, size=(4, 4, 2))
    raster = Raster.from_array(values, ["SR_B5", "SR_B6"])
    mapping = BandMapping(nir="SR_B5", swir1="SR_B6")
    expected = (values[:, :, 1] - values[:, :, 0]) / (values[:, :, 1] + values[:, :, 0])
    np.testing.assert_allclose(ndbi(raster, mapping).values, expected, rtol=0, atol=0)


def test_append_feature_bands_folds_validity():
    values = np.full((3, 3, 4), 0.25)
    values[2, 2, 0] = 0.0
    values[2, 2, 3] = 0.0
    raster = _raster(values)
    out = append_feature_bands(raster, recipes_from_names(["ndvi", "mndwi"]))
    assert out.band_names == ROLES + ["NDVI", "MNDWI"]
    assert not out.mask[2, 2]
    assert out.mask.sum() == 8
    assert append_feature_bands(raster, []) is raster


def test_append_rejects_collisions_and_missing_operands():
    raster = _raster(np.full((2, 2, 4), 0.3))
    with pytest.raises(NameCollision):
        append_feature_bands(raster, [NDVI, NDVI])
    with pytest.raises(BandNotFound):
        append_feature_bands(Raster.from_array(np.ones((2, 2, 1)), ["red"]), [NDVI])


def test_unknown_index_name():
    with pytest.raises(ConfigError) as info:
        recipes_from_names(["ndvi", "evi"])
    assert info.value.field == "features.indices"
