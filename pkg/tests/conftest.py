"""Shared synthetic rasters and label sets."""
from typing import Callable, Optional, Sequence

import numpy as np
import pytest

from lulc.raster_core import GeoRef, Raster
from lulc.schemas import LabeledPoint

GEO = GeoRef(crs="EPSG:4326", origin=(177.44, -17.80), pixel_size=(0.00027, -0.00027))


@pytest.fixture
def geo() -> GeoRef:
    return GEO


@pytest.fixture
def make_raster() -> Callable[..., Raster]:
    """Factory for seeded random rasters of any size and band list."""

    def build(
        height: int = 12,
        width: int = 10,
        names: Sequence[str] = ("blue", "green", "red", "nir", "swir1"),
        seed: int = 0,
        mask: Optional[np.ndarray] = None,
    ) -> Raster:
        rng = np.random.default_rng(seed)
        values = rng.uniform(0.0, 0.5, size=(height, width, len(names)))
        return Raster.from_array(values, names, mask=mask, geo=GEO)

    return build


@pytest.fixture
def striped_raster() -> Raster:
    """
    40x42 raster of three horizontal class stripes with distinct flat spectra
    plus a little noise; class c covers rows [c*14, (c+1)*14).
    """
    rng = np.random.default_rng(3)
    signatures = np.array([
        [0.10, 0.12, 0.15, 0.20],
        [0.05, 0.08, 0.06, 0.40],
        [0.20, 0.22, 0.25, 0.10],
    ])
    ids = np.repeat(np.arange(3), 14)[:40, None] * np.ones((1, 42), dtype=int)
    values = signatures[ids] + rng.normal(0.0, 0.003, size=(40, 42, 4))
    return Raster.from_array(values, ["b1", "b2", "b3", "b4"], geo=GEO)


@pytest.fixture
def stripe_points() -> Callable[[int, int], list]:
    """Labeled points drawn from the striped raster, `per_class` per class."""

    def build(per_class: int, seed: int = 0) -> list:
        rng = np.random.default_rng(seed)
        points = []
        for cid in range(3):
            cells = [(c, r) for r in range(cid * 14, min((cid + 1) * 14, 40)) for c in range(42)]
            for i in rng.choice(len(cells), size=per_class, replace=False):
                points.append(LabeledPoint(pixel=cells[i], class_id=cid, year=2023))
        return points

    return build


@pytest.fixture
def three_class_scheme():
    from lulc.schemas import ClassScheme, LandCoverClass

    return ClassScheme(classes=(
        LandCoverClass(id=0, name="Urban Areas", color=(228, 26, 28)),
        LandCoverClass(id=1, name="Forest", color=(26, 110, 42)),
        LandCoverClass(id=2, name="Bare Soil", color=(191, 129, 45)),
    ))
