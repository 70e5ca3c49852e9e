"""
Multiband georeferenced rasters with validity masks.

Rasters are immutable: arrays are exposed as read-only views and every
operation builds a new Raster. Values are float64 throughout; file nodata
sentinels never leave the I/O functions in this module.
"""
import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import rasterio
from rasterio.crs import CRS
from rasterio.errors import CRSError, NotGeoreferencedWarning, RasterioError
from rasterio.transform import Affine

from lulc.errors import BandNotFound, BoundsError, FormatError, IoError, NameCollision, ShapeError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_CRS = "EPSG:4326"
SUPPORTED_DTYPES = {"uint8", "uint16", "int16", "float32", "float64"}
PORTABLE_MAGIC = b"LKR1"

# Dataset tags carrying the exact GeoRef through GeoTIFF files.
_TAG_CRS = "LULC_CRS"
_TAG_ORIGIN = "LULC_ORIGIN"
_TAG_PIXEL_SIZE = "LULC_PIXEL_SIZE"
_TAG_WAVELENGTH = "LULC_WAVELENGTH_UM"


def _frozen(array: np.ndarray) -> np.ndarray:
    view = array.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True)
class GeoRef:
    """CRS tag plus the centre of pixel (0, 0) and the pixel step."""

    crs: str = DEFAULT_CRS
    origin: Tuple[float, float] = (0.0, 0.0)
    pixel_size: Tuple[float, float] = (1.0, -1.0)

    def __post_init__(self) -> None:
        if not self.crs:
            raise FormatError("GeoRef crs must be a non-empty identifier")
        if self.pixel_size[0] == 0 or self.pixel_size[1] == 0:
            raise FormatError(f"GeoRef pixel_size components must be non-zero, got {self.pixel_size}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "pixel_size", (float(self.pixel_size[0]), float(self.pixel_size[1])))

    def to_affine(self) -> Affine:
        """Corner-based affine transform as written to GeoTIFF."""
        dx, dy = self.pixel_size
        return Affine(dx, 0.0, self.origin[0] - dx / 2.0, 0.0, dy, self.origin[1] - dy / 2.0)

    @classmethod
    def from_affine(cls, transform: Affine, crs: str = DEFAULT_CRS) -> "GeoRef":
        dx, dy = transform.a, transform.e
        return cls(crs=crs, origin=(transform.c + dx / 2.0, transform.f + dy / 2.0), pixel_size=(dx, dy))

    def translate(self, col: int, row: int) -> "GeoRef":
        """GeoRef of a sub-grid whose pixel (0, 0) is (col, row) here."""
        dx, dy = self.pixel_size
        return GeoRef(crs=self.crs, origin=(self.origin[0] + col * dx, self.origin[1] + row * dy), pixel_size=self.pixel_size)

    def pixel_of(self, lon: float, lat: float) -> Tuple[int, int]:
        """(col, row) of the pixel containing a coordinate."""
        dx, dy = self.pixel_size
        return int(math.floor((lon - self.origin[0]) / dx + 0.5)), int(math.floor((lat - self.origin[1]) / dy + 0.5))

    def center_of(self, col: int, row: int) -> Tuple[float, float]:
        """(lon, lat) of a pixel centre."""
        dx, dy = self.pixel_size
        return self.origin[0] + col * dx, self.origin[1] + row * dy


@dataclass(frozen=True)
class Band:
    """
    One named grid of reals.

    `valid` optionally flags pixels where this band alone carries no
    information (e.g. a zero index denominator); it is folded into the
    raster mask when the band is appended.
    """

    name: str
    values: np.ndarray
    wavelength_range: Optional[Tuple[float, float]] = None
    valid: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"band {self.name!r} must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", _frozen(values))
        if self.valid is not None:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != values.shape:
                raise ShapeError(f"band {self.name!r} validity shape {valid.shape} != {values.shape}")
            object.__setattr__(self, "valid", _frozen(valid))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def renamed(self, name: str) -> "Band":
        return Band(name=name, values=self.values, wavelength_range=self.wavelength_range, valid=self.valid)


@dataclass(frozen=True)
class Window:
    """Pixel rectangle: top-left (col, row) plus width and height."""

    col: int
    row: int
    width: int
    height: int

    def compose(self, inner: "Window") -> "Window":
        """Window in source coordinates of `inner` taken relative to this window."""
        return Window(self.col + inner.col, self.row + inner.row, inner.width, inner.height)


@dataclass(frozen=True)
class Raster:
    """Bands sharing one (height, width) grid, a validity mask and a GeoRef."""

    bands: Tuple[Band, ...]
    mask: np.ndarray
    geo: GeoRef = field(default_factory=GeoRef)

    def __post_init__(self) -> None:
        bands = tuple(self.bands)
        if not bands:
            raise ShapeError("a raster needs at least one band")
        shape = bands[0].shape
        if shape[0] < 1 or shape[1] < 1:
            raise ShapeError(f"raster dimensions must be positive, got {shape}")
        names = set()
        for band in bands:
            if band.shape != shape:
                raise ShapeError(f"band {band.name!r} has shape {band.shape}, expected {shape}")
            if band.name in names:
                raise NameCollision(f"duplicate band name {band.name!r}")
            names.add(band.name)
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != shape:
            raise ShapeError(f"mask shape {mask.shape} != band shape {shape}")
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "mask", _frozen(mask))

    @classmethod
    def from_array(
        cls,
        values: np.ndarray,
        names: Sequence[str],
        mask: Optional[np.ndarray] = None,
        geo: Optional[GeoRef] = None,
    ) -> "Raster":
        """Build from a (height, width, bands) array."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3 or values.shape[2] != len(names):
            raise ShapeError(f"expected (H, W, {len(names)}) values, got {values.shape}")
        if mask is None:
            mask = np.ones(values.shape[:2], dtype=bool)
        bands = tuple(Band(name=n, values=values[:, :, i]) for i, n in enumerate(names))
        return cls(bands=bands, mask=mask, geo=geo or GeoRef())

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def band_names(self) -> List[str]:
        return [b.name for b in self.bands]

    def band(self, name: str) -> Band:
        for b in self.bands:
            if b.name == name:
                return b
        raise BandNotFound(f"band {name!r} not found; available: {self.band_names}")

    def stack(self) -> np.ndarray:
        """Values as a fresh (height, width, bands) array."""
        return np.stack([b.values for b in self.bands], axis=-1)

    def with_mask(self, mask: np.ndarray) -> "Raster":
        return Raster(bands=self.bands, mask=mask, geo=self.geo)

    def with_bands(self, bands: Iterable[Band]) -> "Raster":
        return Raster(bands=tuple(bands), mask=self.mask, geo=self.geo)

    def select(self, names: Sequence[str]) -> "Raster":
        """Sub-raster with the named bands, in the given order."""
        return self.with_bands(self.band(n) for n in names)

    def equals(self, other: "Raster") -> bool:
        """Same grid, names, mask and GeoRef, and equal values at valid pixels."""
        if self.band_names != other.band_names or self.mask.shape != other.mask.shape:
            return False
        if self.geo != other.geo or not np.array_equal(self.mask, other.mask):
            return False
        return all(
            np.array_equal(a.values[self.mask], b.values[self.mask])
            for a, b in zip(self.bands, other.bands)
        )


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


def clip(raster: Raster, window: Window) -> Raster:
    """Sub-raster covered by `window`, with the GeoRef origin moved to match."""
    if (
        window.col < 0 or window.row < 0 or window.width < 1 or window.height < 1
        or window.col + window.width > raster.width
        or window.row + window.height > raster.height
    ):
        raise BoundsError(f"window {window} outside raster of {raster.width}x{raster.height}")
    rows = slice(window.row, window.row + window.height)
    cols = slice(window.col, window.col + window.width)
    bands = tuple(
        Band(
            name=b.name,
            values=b.values[rows, cols],
            wavelength_range=b.wavelength_range,
            valid=None if b.valid is None else b.valid[rows, cols],
        )
        for b in raster.bands
    )
    return Raster(bands=bands, mask=raster.mask[rows, cols], geo=raster.geo.translate(window.col, window.row))


def window_from_bounds(geo: GeoRef, west: float, south: float, east: float, north: float) -> Window:
    """Smallest pixel window whose pixel centres cover a lon/lat frame."""
    col_a, row_a = geo.pixel_of(west, north)
    col_b, row_b = geo.pixel_of(east, south)
    col0, col1 = sorted((col_a, col_b))
    row0, row1 = sorted((row_a, row_b))
    return Window(col0, row0, col1 - col0 + 1, row1 - row0 + 1)


# ---------------------------------------------------------------------------
# GeoTIFF
# ---------------------------------------------------------------------------


def _parse_pair(text: Optional[str]) -> Optional[Tuple[float, float]]:
    if not text:
        return None
    try:
        a, b = text.split(",")
        return float(a), float(b)
    except ValueError:
        return None


def read_geotiff(path: PathLike) -> Raster:
    """
    Read a single- or multi-band GeoTIFF.

    Pixels equal to the file nodata value in any band (or NaN) are masked.
    Band names come from band descriptions, else "band_k".

    Raises:
        IoError: file missing, truncated or unreadable
        FormatError: unsupported pixel type or no geotransform
    """
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotGeoreferencedWarning)
            with rasterio.open(path) as src:
                if src.driver != "GTiff":
                    raise FormatError(f"{path}: expected a GeoTIFF, got driver {src.driver}")
                unsupported = set(src.dtypes) - SUPPORTED_DTYPES
                if unsupported:
                    raise FormatError(f"{path}: unsupported pixel type(s) {sorted(unsupported)}")
                if src.transform == Affine.identity():
                    raise FormatError(f"{path}: missing geotransform")
                data = src.read(out_dtype="float64")
                nodata = src.nodata
                descriptions = list(src.descriptions)
                tags = src.tags()
                band_tags = [src.tags(i + 1) for i in range(src.count)]
                transform = src.transform
                crs = src.crs.to_string() if src.crs else None
    except RasterioError as exc:
        raise IoError(f"{path}: {exc}") from exc

    invalid = ~np.isfinite(data).all(axis=0)
    if nodata is not None and not math.isnan(nodata):
        invalid |= (data == nodata).any(axis=0)
    mask = ~invalid

    origin = _parse_pair(tags.get(_TAG_ORIGIN))
    pixel_size = _parse_pair(tags.get(_TAG_PIXEL_SIZE))
    crs = tags.get(_TAG_CRS) or crs or DEFAULT_CRS
    if origin is not None and pixel_size is not None:
        geo = GeoRef(crs=crs, origin=origin, pixel_size=pixel_size)
    else:
        geo = GeoRef.from_affine(transform, crs=crs)

    bands = []
    for i in range(data.shape[0]):
        values = np.where(mask, data[i], 0.0)
        name = descriptions[i] or f"band_{i + 1}"
        bands.append(Band(name=name, values=values, wavelength_range=_parse_pair(band_tags[i].get(_TAG_WAVELENGTH))))
    logger.debug(f"Read {path}: {len(bands)} bands, {data.shape[2]}x{data.shape[1]}, {int(mask.sum())} valid pixels")
    return Raster(bands=tuple(bands), mask=mask, geo=geo)


def write_geotiff(raster: Raster, path: PathLike) -> None:
    """
    Write a float64 GeoTIFF with NaN nodata at masked pixels.

    Raises:
        IoError: path not writable
    """
    path = Path(path)
    data = np.stack([np.where(raster.mask, b.values, np.nan) for b in raster.bands])
    try:
        crs = CRS.from_user_input(raster.geo.crs)
    except CRSError:
        crs = None
    profile = {
        "driver": "GTiff",
        "compress": "deflate",
        "width": raster.width,
        "height": raster.height,
        "count": len(raster.bands),
        "dtype": "float64",
        "crs": crs,
        "transform": raster.geo.to_affine(),
        "nodata": float("nan"),
    }
    try:
        with rasterio.open(path, "w", **profile) as dst:
            dst.write(data)
            dst.update_tags(**{
                _TAG_CRS: raster.geo.crs,
                _TAG_ORIGIN: f"{raster.geo.origin[0]!r},{raster.geo.origin[1]!r}",
                _TAG_PIXEL_SIZE: f"{raster.geo.pixel_size[0]!r},{raster.geo.pixel_size[1]!r}",
            })
            for i, band in enumerate(raster.bands, start=1):
                dst.set_band_description(i, band.name)
                if band.wavelength_range is not None:
                    lo, hi = band.wavelength_range
                    dst.update_tags(i, **{_TAG_WAVELENGTH: f"{lo!r},{hi!r}"})
    except RasterioError as exc:
        raise IoError(f"{path}: {exc}") from exc
    logger.debug(f"Wrote {path}: {len(raster.bands)} bands")


# ---------------------------------------------------------------------------
# Portable fixture format
# ---------------------------------------------------------------------------


def _pack_text(text: str) -> bytes:
    encoded = text.encode("utf-8")
    return struct.pack("<H", len(encoded)) + encoded


def write_portable(raster: Raster, path: PathLike) -> None:
    """
    Write the dependency-free LKR1 format (little-endian).

    Layout: magic, u32 width, u32 height, u32 band_count, CRS (u16 len +
    UTF-8), f64 origin x/y and pixel size x/y, then per band a name (u16 len +
    UTF-8) and width*height f64 row-major values, then width*height mask
    bytes (1 = valid).
    """
    parts = [
        PORTABLE_MAGIC,
        struct.pack("<III", raster.width, raster.height, len(raster.bands)),
        _pack_text(raster.geo.crs),
        struct.pack("<4d", *raster.geo.origin, *raster.geo.pixel_size),
    ]
    for band in raster.bands:
        parts.append(_pack_text(band.name))
        parts.append(np.ascontiguousarray(band.values, dtype="<f8").tobytes())
    parts.append(raster.mask.astype(np.uint8).tobytes())
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


class _Reader:
    def __init__(self, payload: bytes, path: Path):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise FormatError(f"{self.path}: truncated portable raster")
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (length,) = self.unpack("<H")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.path}: invalid UTF-8 string") from exc


def read_portable(path: PathLike) -> Raster:
    """Read an LKR1 file written by write_portable."""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    reader = _Reader(payload, path)
    if reader.take(4) != PORTABLE_MAGIC:
        raise FormatError(f"{path}: not an LKR1 raster (bad magic)")
    width, height, count = reader.unpack("<III")
    crs = reader.text()
    ox, oy, dx, dy = reader.unpack("<4d")
    bands: List[Band] = []
    for _ in range(count):
        name = reader.text()
        values = np.frombuffer(reader.take(8 * width * height), dtype="<f8").reshape(height, width)
        bands.append(Band(name=name, values=values.astype(np.float64)))
    mask = np.frombuffer(reader.take(width * height), dtype=np.uint8).reshape(height, width) == 1
    if reader.offset != len(payload):
        raise FormatError(f"{path}: trailing bytes after portable raster")
    return Raster(bands=tuple(bands), mask=mask, geo=GeoRef(crs=crs, origin=(ox, oy), pixel_size=(dx, dy)))


def read_raster(path: PathLike) -> Raster:
    """Dispatch on file suffix: .lkr for the portable format, GeoTIFF otherwise."""
    if Path(path).suffix.lower() == ".lkr":
        return read_portable(path)
    return read_geotiff(path)


def valid_count(raster: Raster) -> int:
    return int(raster.mask.sum())
