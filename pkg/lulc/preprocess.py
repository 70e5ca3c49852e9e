"""QA-bit cloud/shadow masking and temporal median compositing."""
import calendar
import logging
from dataclasses import dataclass
from datetime import date
from typing import List, Sequence, Tuple

import numpy as np

from lulc.errors import EmptyInputError, FormatError, ShapeError
from lulc.raster_core import Band, Raster
from lulc.schemas import QaBitSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeStack:
    """Rasters of one area ordered by acquisition date."""

    epochs: Tuple[Tuple[date, Raster], ...]

    def __post_init__(self) -> None:
        epochs = tuple(self.epochs)
        object.__setattr__(self, "epochs", epochs)
        if not epochs:
            return
        first = epochs[0][1]
        for (prev, _), (when, raster) in zip(epochs, epochs[1:]):
            if when <= prev:
                raise FormatError(f"epoch timestamps must be strictly increasing: {prev} then {when}")
        for when, raster in epochs:
            if raster.mask.shape != first.mask.shape or raster.band_names != first.band_names:
                raise ShapeError(f"epoch {when} does not match the stack's shape/bands")
            if raster.geo != first.geo:
                raise ShapeError(f"epoch {when} has a different GeoRef")

    def __len__(self) -> int:
        return len(self.epochs)

    @classmethod
    def from_unordered(cls, epochs: Sequence[Tuple[date, Raster]]) -> "TimeStack":
        return cls(tuple(sorted(epochs, key=lambda item: item[0])))


def apply_qa_mask(raster: Raster, qa_band: Band, spec: QaBitSpec = QaBitSpec()) -> Raster:
    """
    Mask pixels whose QA value has any of the flagged bits set.

    Band values are untouched; only the mask shrinks.
    """
    if qa_band.shape != raster.mask.shape:
        raise ShapeError(f"QA band shape {qa_band.shape} != raster shape {raster.mask.shape}")
    qa = qa_band.values.astype(np.int64)
    flagged = (qa & spec.flag_mask) != 0
    return raster.with_mask(raster.mask & ~flagged)


def median_composite(stack: TimeStack) -> Raster:
    """
    Per-pixel, per-band median over the epochs where the pixel is valid.

    Even counts take the lower of the two middle values, so every output
    value was observed. Pixels with no valid epoch come out masked.
    """
    if len(stack) == 0:
        raise EmptyInputError("cannot composite an empty stack")
    template = stack.epochs[0][1]
    valid = np.stack([r.mask for _, r in stack.epochs])  # (T, H, W)
    counts = valid.sum(axis=0)
    pick = np.maximum(counts - 1, 0) // 2
    bands = []
    for index, name in enumerate(template.band_names):
        values = np.stack([r.bands[index].values for _, r in stack.epochs])
        ordered = np.sort(np.where(valid, values, np.inf), axis=0)
        median = np.take_along_axis(ordered, pick[None, :, :], axis=0)[0]
        median = np.where(counts > 0, median, 0.0)
        bands.append(Band(name=name, values=median, wavelength_range=template.bands[index].wavelength_range))
    logger.debug(f"Composited {len(stack)} epochs: {int((counts > 0).sum())} of {counts.size} pixels valid")
    return Raster(bands=tuple(bands), mask=counts > 0, geo=template.geo)


def composite_series(stacks: Sequence[Tuple[int, TimeStack]]) -> List[Tuple[int, Raster]]:
    """One median composite per year, all on the same grid."""
    composites = [(year, median_composite(stack)) for year, stack in stacks]
    if composites:
        first = composites[0][1]
        for year, raster in composites[1:]:
            if raster.mask.shape != first.mask.shape or raster.band_names != first.band_names:
                raise ShapeError(f"composite for {year} does not match the first year's shape/bands")
    return composites


def _add_months(start: date, months: int) -> date:
    month_index = start.month - 1 + months
    year = start.year + month_index // 12
    month = month_index % 12 + 1
    return date(year, month, min(start.day, calendar.monthrange(year, month)[1]))


def select_window(stack: TimeStack, start: date, months: int) -> TimeStack:
    """Epochs acquired in [start, start + months)."""
    if months < 1:
        raise ShapeError(f"composite window must be at least one month, got {months}")
    end = _add_months(start, months)
    return TimeStack(tuple((when, r) for when, r in stack.epochs if start <= when < end))


def valid_fraction(raster: Raster) -> float:
    """Share of pixels that are valid."""
    return float(raster.mask.mean())
