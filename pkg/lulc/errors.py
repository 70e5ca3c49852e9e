"""Exception hierarchy shared by every pipeline stage."""
from typing import Optional


class LulcError(Exception):
    """Base class for expected pipeline failures."""

    exit_code = 3

    def __init__(self, message: str, *, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage

    def with_stage(self, stage: str) -> "LulcError":
        """Tag the error with the pipeline stage it surfaced in (first tag wins)."""
        if self.stage is None:
            self.stage = stage
        return self

    def __str__(self) -> str:
        message = super().__str__()
        if self.stage:
            return f"[{self.stage}] {message}"
        return message


class ConfigError(LulcError):
    """Invalid configuration: bad file, bad field or an unresolvable reference."""

    exit_code = 2

    def __init__(self, message: str, *, path: Optional[str] = None, field: Optional[str] = None, stage: Optional[str] = None):
        details = [part for part in (path, field) if part]
        if details:
            message = f"{message} ({': '.join(details)})"
        super().__init__(message, stage=stage)
        self.path = path
        self.field = field


class DataError(LulcError):
    """Input data violates a contract."""


class IoError(DataError):
    """A file could not be read or written."""


class FormatError(DataError):
    """A file was readable but its content is not in a supported format."""


class BoundsError(DataError):
    """A pixel position or window falls outside the raster."""


class ShapeError(DataError):
    """Array shapes, band sets or dimensions do not line up."""


class EmptyInputError(DataError):
    """An operation received nothing to work on."""


class BandNotFound(DataError):
    """A named band is missing from a raster."""


class NameCollision(DataError):
    """A new band would reuse an existing band name."""


class MissingClassError(DataError):
    """A class required by the scheme has no samples."""


class ConflictError(DataError):
    """Two labels disagree about the same pixel."""


class InsufficientDataError(DataError):
    """Fewer samples than the operation needs."""


class DegenerateLabelsError(DataError):
    """Supervised training received a single class."""


class DivergenceError(DataError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, *, epoch: int, stage: Optional[str] = None):
        super().__init__(f"{message} at epoch {epoch}", stage=stage)
        self.epoch = epoch


class UnderfullWarning(UserWarning):
    """A class has fewer labeled points than the requested split sizes."""
