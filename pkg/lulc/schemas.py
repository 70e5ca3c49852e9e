"""Pydantic models for the pipeline's declarative types."""
from itertools import product
from typing import Iterator, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from lulc.errors import ConfigError

BAND_ROLES = ("coastal", "blue", "green", "red", "nir", "swir1", "swir2")

# Landsat-8 OLI wavelength ranges in micrometers, keyed by band role.
OLI_WAVELENGTHS = {
    "coastal": (0.43, 0.45),
    "blue": (0.45, 0.51),
    "green": (0.53, 0.59),
    "red": (0.64, 0.67),
    "nir": (0.85, 0.88),
    "swir1": (1.57, 1.65),
    "swir2": (2.11, 2.29),
}


class BandMapping(BaseModel):
    """Band role to file band name, e.g. nir = "SR_B5"."""

    coastal: str = Field(default="coastal", description="Ultra blue / coastal aerosol band")
    blue: str = Field(default="blue", description="Blue band")
    green: str = Field(default="green", description="Green band")
    red: str = Field(default="red", description="Red band")
    nir: str = Field(default="nir", description="Near-infrared band")
    swir1: str = Field(default="swir1", description="Short-wave infrared 1 (1.57-1.65 um)")
    swir2: str = Field(default="swir2", description="Short-wave infrared 2 (2.11-2.29 um)")
    qa: str = Field(default="QA_PIXEL", description="Bit-packed quality band")

    model_config = {"frozen": True, "extra": "forbid"}

    def resolve(self, role: str) -> str:
        """File band name for a role; unknown roles are taken as literal band names."""
        return getattr(self, role) if role in type(self).model_fields else role

    def spectral(self) -> List[Tuple[str, str]]:
        """(role, file name) pairs for the seven OLI bands in wavelength order."""
        return [(role, getattr(self, role)) for role in BAND_ROLES]


class QaBitSpec(BaseModel):
    """QA_PIXEL bits whose set state marks a pixel invalid."""

    # 1: dilated cloud, 3: cloud, 4: cloud shadow (Collection-2 QA_PIXEL layout)
    bit_positions: Tuple[int, ...] = Field(default=(1, 3, 4), description="Bit indices in [0, 15]")

    model_config = {"frozen": True}

    @field_validator("bit_positions")
    @classmethod
    def _check_bits(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value:
            raise ValueError("at least one QA bit is required")
        for bit in value:
            if not 0 <= bit <= 15:
                raise ValueError(f"QA bit {bit} outside [0, 15]")
        return tuple(sorted(set(value)))

    @property
    def flag_mask(self) -> int:
        """Integer with every configured bit set."""
        mask = 0
        for bit in self.bit_positions:
            mask |= 1 << bit
        return mask


class IndexRecipe(BaseModel):
    """Normalized difference (A - B) / (A + B) over two band roles."""

    name: str = Field(..., min_length=1, description="Output band name, e.g. NDVI")
    numerator_bands: Tuple[str, str] = Field(..., description="(A, B) band roles or names")

    model_config = {"frozen": True}

    def swapped(self) -> "IndexRecipe":
        """Same recipe with operands exchanged (negates the index)."""
        a, b = self.numerator_bands
        return IndexRecipe(name=f"{self.name}_swapped", numerator_bands=(b, a))


class LandCoverClass(BaseModel):
    """One entry of a classification scheme."""

    id: int = Field(..., ge=0)
    name: str
    color: Tuple[int, int, int] = Field(..., description="Palette RGB")

    model_config = {"frozen": True}

    @field_validator("color")
    @classmethod
    def _check_color(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(not 0 <= channel <= 255 for channel in value):
            raise ValueError(f"palette color {value} outside 0..255")
        return value


class ClassScheme(BaseModel):
    """Ordered land cover classes with contiguous ids from 0."""

    classes: Tuple[LandCoverClass, ...]

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check_ids(self) -> "ClassScheme":
        ids = [c.id for c in self.classes]
        if ids != list(range(len(ids))) or not ids:
            raise ValueError(f"class ids must be contiguous from 0, got {ids}")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        return self

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.classes]

    @property
    def palette(self) -> List[Tuple[int, int, int]]:
        return [c.color for c in self.classes]

    def id_of(self, name: str) -> int:
        """Class id for a name, matched case-insensitively."""
        wanted = name.strip().lower()
        for c in self.classes:
            if c.name.lower() == wanted:
                return c.id
        raise KeyError(name)

    def contains(self, class_id: int) -> bool:
        return 0 <= class_id < len(self.classes)


DEFAULT_SCHEME = ClassScheme(
    classes=(
        LandCoverClass(id=0, name="Urban Areas", color=(228, 26, 28)),
        LandCoverClass(id=1, name="Grass/Agricultural Land", color=(166, 216, 84)),
        LandCoverClass(id=2, name="Forest", color=(26, 110, 42)),
        LandCoverClass(id=3, name="Bare Soil", color=(191, 129, 45)),
        LandCoverClass(id=4, name="Water Bodies", color=(31, 120, 180)),
        LandCoverClass(id=5, name="Coastal Areas", color=(253, 219, 119)),
        LandCoverClass(id=6, name="Wetland", color=(106, 61, 154)),
    )
)


class LabeledPoint(BaseModel):
    """A ground-truth label attached to one pixel of one year."""

    pixel: Tuple[int, int] = Field(..., description="(col, row)")
    class_id: int = Field(..., ge=0)
    year: int
    source: str = Field(default="manual", description="Annotation provenance")

    model_config = {"frozen": True}


class TrainConfig(BaseModel):
    """Mini-batch Adam training of the neural classifiers."""

    optimizer: Literal["adam"] = "adam"
    learning_rate: float = Field(default=1e-3, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    loss: Literal["cross_entropy"] = "cross_entropy"
    max_epochs: int = 150
    batch_size: int = 32
    early_stopping_patience: int = 15
    validation_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    seed: int = 0

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}", field="train.nn.max_epochs")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}", field="train.nn.batch_size")
        if not 0 <= self.early_stopping_patience < self.max_epochs:
            raise ConfigError(
                f"early_stopping_patience must be in [0, max_epochs), got {self.early_stopping_patience}",
                field="train.nn.early_stopping_patience",
            )
        return self


MaxFeatures = Union[Literal["sqrt", "all"], int]


class ForestParams(BaseModel):
    """Hyperparameters of one random forest."""

    n_estimators: int = Field(default=100, ge=1)
    max_depth: Optional[int] = Field(default=None, ge=1, description="None grows until pure")
    max_features: MaxFeatures = "sqrt"
    min_samples_leaf: int = Field(default=1, ge=1)
    min_samples_split: int = Field(default=2, ge=2)
    bootstrap: bool = True

    model_config = {"frozen": True}

    def features_per_split(self, n_features: int) -> int:
        """Candidate feature count evaluated at each split."""
        if self.max_features == "all":
            return n_features
        if self.max_features == "sqrt":
            return max(1, int(n_features ** 0.5))
        return max(1, min(int(self.max_features), n_features))

    def sort_key(self) -> tuple:
        """Lexicographic order used to break grid-search ties."""
        depth = float("inf") if self.max_depth is None else self.max_depth
        if isinstance(self.max_features, str):
            features = -2 if self.max_features == "sqrt" else -1
        else:
            features = self.max_features
        return (depth, features, self.min_samples_leaf, self.min_samples_split, self.n_estimators)


class ForestGrid(BaseModel):
    """Value lists searched by the five-way forest grid search."""

    n_estimators: List[int] = Field(default_factory=lambda: [100, 200, 500])
    max_depth: List[Optional[int]] = Field(default_factory=lambda: [8, 16, None])
    max_features: List[MaxFeatures] = Field(default_factory=lambda: ["sqrt", "all"])
    min_samples_leaf: List[int] = Field(default_factory=lambda: [1, 3])
    min_samples_split: List[int] = Field(default_factory=lambda: [2, 5])

    model_config = {"frozen": True}

    def __len__(self) -> int:
        return (
            len(self.n_estimators) * len(self.max_depth) * len(self.max_features)
            * len(self.min_samples_leaf) * len(self.min_samples_split)
        )

    def points(self) -> Iterator[ForestParams]:
        """Every grid point, in lexicographic parameter order."""
        combos = [
            ForestParams(
                n_estimators=n, max_depth=depth, max_features=feat,
                min_samples_leaf=leaf, min_samples_split=split,
            )
            for depth, feat, leaf, split, n in product(
                self.max_depth, self.max_features, self.min_samples_leaf,
                self.min_samples_split, self.n_estimators,
            )
        ]
        return iter(sorted(combos, key=ForestParams.sort_key))


class KMeansParams(BaseModel):
    """Lloyd k-means settings."""

    k: int = Field(default=7, ge=1)
    max_iters: int = Field(default=300, ge=1)
    tol: float = Field(default=1e-6, ge=0.0, description="Centroid-movement threshold")

    model_config = {"frozen": True}
