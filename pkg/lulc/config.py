"""Configuration: process settings from the environment and the TOML pipeline config."""
import logging
import datetime as dt
import tomllib
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from lulc.dataset import DEFAULT_CHIP_SIZE, SWEEP_SIZES
from lulc.errors import ConfigError
from lulc.schemas import (
    DEFAULT_SCHEME,
    BandMapping,
    ClassScheme,
    ForestGrid,
    KMeansParams,
    LandCoverClass,
    QaBitSpec,
    TrainConfig,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODEL_CHOICES = ("kmeans", "forest", "mlp", "cnn")


class Settings(BaseSettings):
    """Process settings loaded from LULC_* environment variables and .env."""

    log_level: str = "INFO"
    threads: int = Field(default=1, ge=1, description="Worker cap, overridden by --threads")
    raster_cache_size: int = Field(default=16, ge=1)

    model_config = SettingsConfigDict(
        env_prefix="LULC_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


# Global settings instance
settings = Settings()


class SceneSpec(BaseModel):
    """One exported scene: a GeoTIFF with the spectral bands and QA_PIXEL."""

    path: Path
    date: dt.date

    @property
    def year(self) -> int:
        return self.date.year


class CompositeSection(BaseModel):
    scenes: List[SceneSpec] = Field(default_factory=list)
    qa_bits: Tuple[int, ...] = Field(default=(1, 3, 4), description="QA_PIXEL bits that mask a pixel")
    window_months: Optional[int] = Field(default=None, ge=1, description="Composite only the first N months of each year")

    @field_validator("qa_bits")
    @classmethod
    def _check_bits(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        return QaBitSpec(bit_positions=value).bit_positions

    @property
    def qa_spec(self) -> QaBitSpec:
        return QaBitSpec(bit_positions=self.qa_bits)

    def years(self) -> List[int]:
        return sorted({scene.year for scene in self.scenes})


class FeaturesSection(BaseModel):
    indices: List[str] = Field(default_factory=lambda: ["NDVI", "MNDWI", "NDBI"])


class ClassesSection(BaseModel):
    scheme: Optional[List[LandCoverClass]] = None
    urban_class_id: int = Field(default=0, ge=0)

    def resolved(self) -> ClassScheme:
        return DEFAULT_SCHEME if self.scheme is None else ClassScheme(classes=tuple(self.scheme))


class LabelsSection(BaseModel):
    path: Optional[Path] = None
    train_year: Optional[int] = Field(default=None, description="Year whose composite and labels are trained on; latest year when unset")
    per_class_train: int = Field(default=175, ge=1)
    per_class_test: int = Field(default=75, ge=0)
    underfull: Literal["upsample", "warn"] = "upsample"


class TrainSection(BaseModel):
    models: List[str] = Field(default_factory=lambda: ["cnn"])
    folds: int = Field(default=10, ge=2)
    chip_size: int = DEFAULT_CHIP_SIZE
    nn: TrainConfig = Field(default_factory=TrainConfig)
    forest: ForestGrid = Field(default_factory=ForestGrid)
    kmeans: KMeansParams = Field(default_factory=KMeansParams)
    kmeans_clip: Optional[Tuple[float, float, float, float]] = Field(
        default=None, description="west, south, east, north frame k-means is fitted on"
    )

    @field_validator("models")
    @classmethod
    def _expand_models(cls, value: List[str]) -> List[str]:
        names = [v.lower() for v in value]
        if "all" in names:
            return list(MODEL_CHOICES)
        unknown = sorted(set(names) - set(MODEL_CHOICES))
        if unknown:
            raise ValueError(f"unknown models {unknown}; choose from {MODEL_CHOICES} or 'all'")
        return names

    @field_validator("chip_size")
    @classmethod
    def _odd(cls, value: int) -> int:
        if value < 1 or value % 2 == 0:
            raise ValueError(f"chip_size must be odd and positive, got {value}")
        return value


class ClassifySection(BaseModel):
    composites: Dict[int, Path] = Field(default_factory=dict, description="year -> composite raster; defaults to cmd_composite output")
    model_path: Optional[Path] = None


class SweepSection(BaseModel):
    sizes: List[int] = Field(default_factory=lambda: list(SWEEP_SIZES))
    test_fraction: float = Field(default=0.3, gt=0.0, lt=1.0)
    model: Literal["kmeans", "forest", "mlp", "cnn"] = "cnn"
    render_maps: bool = True

    @field_validator("sizes")
    @classmethod
    def _non_empty(cls, value: List[int]) -> List[int]:
        if not value or min(value) < 1:
            raise ValueError("sizes must be a non-empty list of positive counts")
        return value


class SynthSection(BaseModel):
    width: int = Field(default=64, ge=16)
    height: int = Field(default=64, ge=16)
    years: List[int] = Field(default_factory=lambda: [2021, 2022, 2023])
    scenes_per_year: int = Field(default=3, ge=1)
    urban_start: int = Field(default=8, ge=1, description="Side of the urban square in the first year")
    urban_growth: int = Field(default=4, ge=0, description="Square side growth per year")
    points_per_class: int = Field(default=250, ge=1)
    sparse_class_points: int = Field(default=91, ge=1, description="Labels drawn for the coastal class")
    noise: float = Field(default=0.004, ge=0.0)


class PipelineConfig(BaseModel):
    """Declarative pipeline config; relative paths are taken from the config file's directory."""

    schema_version: Literal[1] = SCHEMA_VERSION
    seed: int
    output_dir: Path = Path("out")
    bands: BandMapping = Field(default_factory=BandMapping)
    composite: CompositeSection = Field(default_factory=CompositeSection)
    features: FeaturesSection = Field(default_factory=FeaturesSection)
    classes: ClassesSection = Field(default_factory=ClassesSection)
    labels: LabelsSection = Field(default_factory=LabelsSection)
    train: TrainSection = Field(default_factory=TrainSection)
    classify: ClassifySection = Field(default_factory=ClassifySection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    synth: SynthSection = Field(default_factory=SynthSection)

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def _check_classes(self) -> "PipelineConfig":
        scheme = self.classes.resolved()
        if not scheme.contains(self.classes.urban_class_id):
            raise ValueError(f"urban_class_id {self.classes.urban_class_id} not in the class scheme")
        return self

    @property
    def scheme(self) -> ClassScheme:
        return self.classes.resolved()

    def anchored(self, base: Path) -> "PipelineConfig":
        """Copy with every relative path made relative to `base`."""

        def fix(path: Optional[Path]) -> Optional[Path]:
            if path is None or path.is_absolute():
                return path
            return base / path

        return self.model_copy(update={
            "output_dir": fix(self.output_dir),
            "composite": self.composite.model_copy(update={
                "scenes": [s.model_copy(update={"path": fix(s.path)}) for s in self.composite.scenes],
            }),
            "labels": self.labels.model_copy(update={"path": fix(self.labels.path)}),
            "classify": self.classify.model_copy(update={
                "composites": {y: fix(p) for y, p in self.classify.composites.items()},
                "model_path": fix(self.classify.model_path),
            }),
        })

    def composite_path(self, year: int) -> Path:
        explicit = self.classify.composites.get(year)
        return explicit if explicit is not None else self.output_dir / "composites" / f"{year}.tif"

    def require_files(self, entries: Sequence[Tuple[str, Optional[Path]]]) -> None:
        """
        Raises:
            ConfigError: a referenced file is unset or missing, naming its field
        """
        for field_name, path in entries:
            if path is None:
                raise ConfigError("required path is not set", field=field_name)
            if not Path(path).is_file():
                raise ConfigError(f"file not found: {path}", field=field_name)


def _field_path(error: dict) -> str:
    return ".".join(str(part) for part in error.get("loc", ()))


def parse_config(data: dict, source: str = "<memory>") -> PipelineConfig:
    """Validate a config mapping, translating validation failures to ConfigError."""
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first.get("msg", str(exc)), path=source, field=_field_path(first)) from exc


def load_config(path: Path) -> PipelineConfig:
    """
    Read and validate a TOML pipeline config.

    Raises:
        ConfigError: file missing, not TOML, or failing validation (path and field in the message)
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=str(path)) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", path=str(path)) from exc
    try:
        config = parse_config(data, str(path))
    except ConfigError as exc:
        if exc.path is not None:
            raise
        tagged = ConfigError(str(exc), path=str(path))
        tagged.field = exc.field
        raise tagged from exc
    logger.debug(f"Loaded config {path} (schema {config.schema_version}, seed {config.seed})")
    return config.anchored(path.parent)
