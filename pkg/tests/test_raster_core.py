import warnings

import numpy as np
import pytest
import rasterio
from hypothesis import given, settings
from hypothesis import strategies as st
from rasterio.errors import NotGeoreferencedWarning
from rasterio.transform import Affine, from_origin

from lulc.errors import BandNotFound, BoundsError, FormatError, IoError, NameCollision, ShapeError
from lulc.raster_core import (
    Band,
    GeoRef,
    Raster,
    Window,
    clip,
    read_geotiff,
    read_portable,
    read_raster,
    valid_count,
    window_from_bounds,
    write_geotiff,
    write_portable,
)


def test_band_values_are_read_only(make_raster):
    raster = make_raster()
    with pytest.raises(ValueError):
        raster.bands[0].values[0, 0] = 1.0
    with pytest.raises(ValueError):
        raster.mask[0, 0] = False


def test_raster_rejects_mismatched_bands():
    a = Band("a", np.zeros((3, 4)))
    with pytest.raises(ShapeError):
        Raster(bands=(a, Band("b", np.zeros((4, 3)))), mask=np.ones((3, 4)))
    with pytest.raises(NameCollision):
        Raster(bands=(a, Band("a", np.ones((3, 4)))), mask=np.ones((3, 4)))
    with pytest.raises(ShapeError):
        Raster(bands=(), mask=np.ones((3, 4)))


def test_band_lookup(make_raster):
    raster = make_raster(names=("red", "nir"))
    assert raster.band("nir").name == "nir"
    with pytest.raises(BandNotFound):
        raster.band("swir2")


def test_geo_pixel_center_round_trip(geo):
    for col, row in [(0, 0), (5, 7), (63, 63)]:
        assert geo.pixel_of(*geo.center_of(col, row)) == (col, row)


def test_clip_full_extent_is_identity(make_raster):
    raster = make_raster()
    assert clip(raster, Window(0, 0, raster.width, raster.height)).equals(raster)


def test_clip_moves_origin(make_raster, geo):
    raster = make_raster()
    clipped = clip(raster, Window(2, 3, 4, 5))
    assert (clipped.height, clipped.width) == (5, 4)
    assert clipped.geo.center_of(0, 0) == pytest.approx(geo.center_of(2, 3))
    np.testing.assert_array_equal(clipped.band("red").values, raster.band("red").values[3:8, 2:6])


def test_clip_outside_raises(make_raster):
    raster = make_raster(height=6, width=6)
    with pytest.raises(BoundsError):
        clip(raster, Window(4, 4, 3, 3))
    with pytest.raises(BoundsError):
        clip(raster, Window(0, 0, 0, 2))


@settings(max_examples=40, deadline=None)
@given(
    outer=st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(4, 8), st.integers(4, 8)),
    inner=st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(1, 4), st.integers(1, 4)),
)
def test_nested_clips_compose(outer, inner):
    rng = np.random.default_rng(1)
    raster = Raster.from_array(rng.random((14, 14, 2)), ["a", "b"])
    w1 = Window(*outer)
    w2 = Window(inner[0], inner[1], min(inner[2], w1.width - inner[0]), min(inner[3], w1.height - inner[1]))
    if w2.width < 1 or w2.height < 1:
        return
    assert clip(clip(raster, w1), w2).equals(clip(raster, w1.compose(w2)))


def test_window_from_bounds_covers_frame(geo):
    west, north = geo.center_of(3, 4)
    east, south = geo.center_of(9, 11)
    assert window_from_bounds(geo, west, south, east, north) == Window(3, 4, 7, 8)


def test_geotiff_round_trip(tmp_path, make_raster):
    mask = np.ones((12, 10), dtype=bool)
    mask[2, 3] = False
    mask[7, :4] = False
    raster = make_raster(mask=mask)
    path = tmp_path / "scene.tif"
    write_geotiff(raster, path)
    back = read_geotiff(path)
    assert back.equals(raster)
    assert back.geo == raster.geo
    assert valid_count(back) == 12 * 10 - 5


def test_geotiff_keeps_wavelengths(tmp_path):
    band = Band("nir", np.full((4, 4), 0.3), wavelength_range=(0.85, 0.88))
    raster = Raster(bands=(band,), mask=np.ones((4, 4)), geo=GeoRef(origin=(10.0, 20.0), pixel_size=(0.5, -0.5)))
    write_geotiff(raster, tmp_path / "nir.tif")
    assert read_geotiff(tmp_path / "nir.tif").band("nir").wavelength_range == (0.85, 0.88)


def test_missing_geotiff_is_io_error(tmp_path):
    with pytest.raises(IoError):
        read_geotiff(tmp_path / "absent.tif")


def test_truncated_geotiff_is_io_error(tmp_path, make_raster):
    path = tmp_path / "scene.tif"
    write_geotiff(make_raster(), path)
    path.write_bytes(path.read_bytes()[:64])
    with pytest.raises(IoError):
        read_geotiff(path)


def test_write_into_unwritable_location(tmp_path, make_raster):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    with pytest.raises(IoError):
        write_geotiff(make_raster(), blocker / "scene.tif")
    with pytest.raises(IoError):
        write_portable(make_raster(), blocker / "scene.lkr")


def test_portable_round_trip_is_exact(tmp_path, make_raster):
    mask = np.random.default_rng(2).random((12, 10)) > 0.2
    raster = make_raster(mask=mask, seed=5)
    path = tmp_path / "scene.lkr"
    write_portable(raster, path)
    back = read_raster(path)
    assert back.equals(raster)
    for a, b in zip(raster.bands, back.bands):
        np.testing.assert_array_equal(a.values, b.values)


def test_portable_rejects_bad_magic_and_truncation(tmp_path, make_raster):
    path = tmp_path / "scene.lkr"
    write_portable(make_raster(), path)
    payload = path.read_bytes()
    path.write_bytes(b"XXXX" + payload[4:])
    with pytest.raises(FormatError):
        read_portable(path)
    path.write_bytes(payload[:-7])
    with pytest.raises(FormatError):
        read_portable(path)


def _write_tif(path, data, dtype, transform=from_origin(177.44, -17.80, 0.00027, 0.00027), nodata=None):
    profile = dict(
        driver="GTiff", width=data.shape[2], height=data.shape[1], count=data.shape[0],
        dtype=dtype, transform=transform, crs="EPSG:4326", nodata=nodata,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotGeoreferencedWarning)
        with rasterio.open(path, "w", **profile) as dst:
            dst.write(data.astype(dtype))


def test_uint16_nodata_masks_any_band(tmp_path):
    data = np.arange(1, 49, dtype=np.uint16).reshape(3, 4, 4) * 1000
    data[0, 0, 1] = 0
    data[2, 3, 3] = 0
    _write_tif(tmp_path / "dn.tif", data, "uint16", nodata=0)
    raster = read_geotiff(tmp_path / "dn.tif")
    assert raster.band_names == ["band_1", "band_2", "band_3"]
    assert raster.mask.sum() == 14
    assert not raster.mask[0, 1] and not raster.mask[3, 3]
    stack = raster.stack()
    assert stack.dtype == np.float64
    # above the int16 range
    assert stack[3, 2, 2] == 47_000.0
    np.testing.assert_array_equal(stack[raster.mask], np.moveaxis(data, 0, -1)[raster.mask].astype(np.float64))


def test_unsupported_pixel_type_is_format_error(tmp_path):
    _write_tif(tmp_path / "wide.tif", np.ones((1, 4, 4)), "uint32")
    with pytest.raises(FormatError, match="unsupported pixel type"):
        read_geotiff(tmp_path / "wide.tif")


def test_identity_transform_is_format_error(tmp_path):
    _write_tif(tmp_path / "bare.tif", np.ones((1, 4, 4)), "float32", transform=Affine.identity())
    with pytest.raises(FormatError, match="geotransform"):
        read_geotiff(tmp_path / "bare.tif")
