"""Exception types shared across the package."""


class TvamError(Exception):
    """Base class for all package errors."""


class ShapeError(TvamError, ValueError):
    """Array or file shape does not match what the operation expects."""


class DegenerateGeometryError(TvamError, ValueError):
    """A slice has no in-part or no out-of-part voxels."""

    def __init__(self, message: str, slices=()):
        super().__init__(message)
        self.slices = list(slices)


class DivergenceError(TvamError, ArithmeticError):
    """The objective became non-finite during iteration."""

    def __init__(self, iteration: int):
        super().__init__(f"objective became non-finite at iteration {iteration}")
        self.iteration = iteration


class CollapseError(TvamError, ArithmeticError):
    """OSMO produced an all-zero sinogram, so the dose cannot be normalised."""

    def __init__(self, iteration: int):
        super().__init__(
            f"sinogram collapsed to all zeros at iteration {iteration}; "
            "dose normalisation is undefined"
        )
        self.iteration = iteration


class SelectionError(TvamError, ValueError):
    """No admissible threshold pair in a sweep grid."""


class ArtifactError(TvamError):
    """Base class for persistence errors."""


class CorruptSidecarError(ArtifactError, ValueError):
    pass


class ArtifactShapeError(ArtifactError, ShapeError):
    pass


class DtypeMismatchError(ArtifactError, ValueError):
    pass


class VersionMismatchError(ArtifactError, ValueError):
    pass
