"""
Seeded synthetic scenes for desk-scale runs of the whole pipeline.

The scene is seven vertical class stripes (urban at the left edge) with an
urban square in the middle that grows every year. Every scene of a year
carries cloud and shadow discs confined to its own third of the rows, so
each pixel is clear in at least two scenes of a three-scene year.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from lulc.change import ClassMap, urban_expansion, write_class_map, write_expansion
from lulc.config import SynthSection
from lulc.dataset import write_labels
from lulc.raster_core import Band, GeoRef, Raster, write_geotiff
from lulc.schemas import BAND_ROLES, DEFAULT_SCHEME, OLI_WAVELENGTHS, LabeledPoint
from lulc.seeding import derive_rng

logger = logging.getLogger(__name__)

SPECTRAL_NAMES = tuple(f"SR_B{i}" for i in range(1, 8))
QA_NAME = "QA_PIXEL"
SYNTH_GEO = GeoRef(crs="EPSG:4326", origin=(177.44, -17.80), pixel_size=(0.00027, -0.00027))
SPARSE_CLASS = 5
URBAN = 0

# Surface reflectance per class over coastal, blue, green, red, nir, swir1, swir2.
SIGNATURES = np.array([
    [0.12, 0.13, 0.15, 0.18, 0.25, 0.30, 0.28],  # urban
    [0.04, 0.05, 0.09, 0.07, 0.35, 0.22, 0.12],  # grass / agriculture
    [0.02, 0.03, 0.06, 0.03, 0.45, 0.18, 0.08],  # forest
    [0.10, 0.12, 0.16, 0.22, 0.28, 0.36, 0.32],  # bare soil
    [0.06, 0.07, 0.06, 0.04, 0.02, 0.01, 0.01],  # water
    [0.20, 0.24, 0.28, 0.30, 0.33, 0.28, 0.20],  # coastal
    [0.03, 0.04, 0.07, 0.05, 0.20, 0.10, 0.05],  # wetland
])

CLEAR_BIT = 6
DILATED_BIT = 1
CLOUD_BIT = 3
SHADOW_BIT = 4


def stripe_layout(width: int, height: int, n_classes: int = len(SIGNATURES)) -> np.ndarray:
    stripes = np.arange(width) * n_classes // width
    return np.broadcast_to(stripes, (height, width)).copy()


def urban_square(width: int, height: int, side: int) -> np.ndarray:
    side = min(side, width, height)
    square = np.zeros((height, width), dtype=bool)
    r0, c0 = (height - side) // 2, (width - side) // 2
    square[r0:r0 + side, c0:c0 + side] = True
    return square


def truth_maps(cfg: SynthSection) -> List[np.ndarray]:
    """Class ids per year: the stripe layout overlaid with that year's urban square."""
    base = stripe_layout(cfg.width, cfg.height)
    maps = []
    for i, _ in enumerate(cfg.years):
        ids = base.copy()
        ids[urban_square(cfg.width, cfg.height, cfg.urban_start + i * cfg.urban_growth)] = URBAN
        maps.append(ids)
    return maps


def _disc(shape: Tuple[int, int], center: Tuple[int, int], radius: float) -> np.ndarray:
    rows, cols = np.ogrid[:shape[0], :shape[1]]
    return (rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius ** 2


def synth_scene(ids: np.ndarray, rng: np.random.Generator, noise: float, third: int) -> Raster:
    """Seven reflectance bands plus QA_PIXEL with a cloud and a shadow inside row third `third`."""
    height, width = ids.shape
    values = SIGNATURES[ids] + rng.normal(0.0, noise, size=ids.shape + (SIGNATURES.shape[1],))
    qa = np.full(ids.shape, 1 << CLEAR_BIT, dtype=np.int64)

    lo, hi = third * height // 3, (third + 1) * height // 3
    inside = np.zeros(ids.shape, dtype=bool)
    inside[lo:hi] = True
    radius = max(2, (hi - lo) // 4)
    center = (int(rng.integers(lo + radius, max(lo + radius + 1, hi - radius))), int(rng.integers(radius, width - radius)))
    cloud = _disc(ids.shape, center, radius) & inside
    dilated = _disc(ids.shape, center, radius + 1.5) & inside & ~cloud
    shadow_center = (center[0], min(width - 1, center[1] + 2 * radius))
    shadow = _disc(ids.shape, shadow_center, radius * 0.75) & inside & ~cloud & ~dilated

    values[cloud] = 0.85 + rng.normal(0.0, noise, size=(int(cloud.sum()), values.shape[2]))
    values[dilated] = (values[dilated] + 0.85) / 2
    values[shadow] *= 0.2
    qa[cloud] = (1 << CLOUD_BIT) | (1 << DILATED_BIT)
    qa[dilated] = 1 << DILATED_BIT
    qa[shadow] = 1 << SHADOW_BIT

    bands = [
        Band(name=name, values=values[:, :, i], wavelength_range=OLI_WAVELENGTHS[role])
        for i, (name, role) in enumerate(zip(SPECTRAL_NAMES, BAND_ROLES))
    ]
    bands.append(Band(name=QA_NAME, values=qa.astype(np.float64)))
    return Raster(bands=tuple(bands), mask=np.ones(ids.shape, dtype=bool), geo=SYNTH_GEO)


def sample_labels(ids: np.ndarray, year: int, cfg: SynthSection, rng: np.random.Generator) -> List[LabeledPoint]:
    """Distinct labeled pixels per class; the coastal class gets the sparse count."""
    points = []
    for class_id in range(len(SIGNATURES)):
        rows, cols = np.nonzero(ids == class_id)
        wanted = cfg.sparse_class_points if class_id == SPARSE_CLASS else cfg.points_per_class
        picks = np.sort(rng.choice(rows.size, size=min(wanted, rows.size), replace=False))
        points.extend(
            LabeledPoint(pixel=(int(cols[i]), int(rows[i])), class_id=class_id, year=year, source="synth")
            for i in picks
        )
    return points


def _scene_month(index: int, count: int) -> int:
    return 1 + (12 * index) // count


def _pipeline_toml(seed: int, scenes: Sequence[Tuple[str, str]], train_year: int, cfg: SynthSection) -> str:
    mapping = "\n".join(f'{role} = "{name}"' for role, name in zip(BAND_ROLES, SPECTRAL_NAMES))
    scene_tables = "\n".join(f'[[composite.scenes]]\npath = "{path}"\ndate = {when}\n' for path, when in scenes)
    per_class = min(cfg.points_per_class, cfg.sparse_class_points)
    sizes = ", ".join(str(len(SIGNATURES) * per_class * k // 6) for k in (2, 3, 4, 5, 6))
    return f"""# Generated by `lulc synth`; paths are relative to this file.
schema_version = 1
seed = {seed}
output_dir = "out"

[bands]
{mapping}
qa = "{QA_NAME}"

[composite]
qa_bits = [{DILATED_BIT}, {CLOUD_BIT}, {SHADOW_BIT}]

{scene_tables}
[features]
indices = ["NDVI", "MNDWI", "NDBI"]

[classes]
urban_class_id = {URBAN}

[labels]
path = "labels.csv"
train_year = {train_year}
per_class_train = 175
per_class_test = 75
underfull = "upsample"

[train]
models = ["cnn"]
folds = 10
chip_size = 9

[train.nn]
max_epochs = 60
early_stopping_patience = 10

[train.forest]
n_estimators = [50]
max_depth = [16]
max_features = ["sqrt"]
min_samples_leaf = [1]
min_samples_split = [2]

[sweep]
sizes = [{sizes}]
model = "cnn"
"""


def generate(cfg: SynthSection, seed: int, out_dir: Path) -> Dict[str, Any]:
    """
    Write scenes, labels, ground truth and a ready pipeline.toml under out_dir.

    Returns the manifest of written files.
    """
    out_dir = Path(out_dir)
    (out_dir / "scenes").mkdir(parents=True, exist_ok=True)
    (out_dir / "truth").mkdir(parents=True, exist_ok=True)
    truths = truth_maps(cfg)
    scenes: List[Tuple[str, str]] = []
    class_maps = []
    for year, ids in zip(cfg.years, truths):
        for s in range(cfg.scenes_per_year):
            rng = derive_rng(seed, f"synth/scene/{year}/{s}")
            relative = f"scenes/{year}_{s}.tif"
            write_geotiff(synth_scene(ids, rng, cfg.noise, s % 3), out_dir / relative)
            scenes.append((relative, f"{year}-{_scene_month(s, cfg.scenes_per_year):02d}-15"))
        class_map = ClassMap(year=year, ids=ids, mask=np.ones(ids.shape, dtype=bool), scheme=DEFAULT_SCHEME, geo=SYNTH_GEO)
        write_class_map(class_map, out_dir / "truth" / f"classes_{year}.tif")
        class_maps.append(class_map)

    train_year = cfg.years[-1]
    points = sample_labels(truths[-1], train_year, cfg, derive_rng(seed, "synth/labels"))
    write_labels(points, SYNTH_GEO, DEFAULT_SCHEME, out_dir / "labels.csv")
    expansion_path = out_dir / "truth" / "expansion.tif"
    if len(class_maps) >= 2:
        write_expansion(urban_expansion(class_maps, URBAN), expansion_path)
    config_path = out_dir / "pipeline.toml"
    config_path.write_text(_pipeline_toml(seed, scenes, train_year, cfg), encoding="utf-8")
    logger.info(f"Synthesized {len(scenes)} scenes over {len(cfg.years)} years, {len(points)} labels in {out_dir}")
    return {
        "scenes": [str(out_dir / p) for p, _ in scenes],
        "labels": str(out_dir / "labels.csv"),
        "truth": [str(out_dir / "truth" / f"classes_{y}.tif") for y in cfg.years],
        "expansion": str(expansion_path) if len(class_maps) >= 2 else None,
        "config": str(config_path),
    }
