"""Exception types shared across the package."""


class ShapekitError(Exception):
    """Base class for all library errors."""


class ModelFormatError(ShapekitError):
    """Raised when a model asset is missing, malformed, or violates an invariant.

    ``field`` names the offending manifest entry or array.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class EmptySliceError(ShapekitError):
    """A (part, slice) cell has no vertices; the slicing number is too large."""

    def __init__(self, part: int, slice_index: int):
        self.part = part
        self.slice_index = slice_index
        super().__init__(
            f"slice {slice_index} of part {part} has no vertices; reduce the slicing number"
        )


class DegenerateBone2DError(ShapekitError):
    """A transformed 2D bone collapsed below tolerance (bone viewed end-on)."""

    def __init__(self, part: int, length_px: float):
        self.part = part
        self.length_px = length_px
        super().__init__(f"2D bone of part {part} degenerate after transform ({length_px:g} px)")


class UnsolvableStretchError(ShapekitError):
    """No bone stretch can reproduce the requested 2D projection."""


class RankDeficientError(ShapekitError):
    """The Gram matrix of a least-squares fit is numerically rank deficient."""

    def __init__(self, condition: float):
        self.condition = condition
        super().__init__(f"Gram matrix condition {condition:.3e} exceeds 1e12; degenerate sample set")


class TrainingDivergedError(ShapekitError):
    """Refiner training produced a non-finite loss."""
