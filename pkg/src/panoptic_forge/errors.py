class PanopticError(ValueError):
    """Base class for input and validation failures (CLI exit code 1)."""


class LabelSpaceError(PanopticError):
    pass


class RasterError(PanopticError):
    pass


class StructuralError(RasterError):
    """Segment table and pixel raster disagree."""

    def __init__(self, message, ids=()):
        super().__init__(message)
        self.ids = tuple(ids)


class TensorFormatError(RasterError):
    pass


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class UnsupportedDtypeError(TensorFormatError):
    pass


class PayloadLengthError(TensorFormatError):
    pass


class FusionError(PanopticError):
    pass


class MetricsError(PanopticError):
    pass


class PlanError(PanopticError):
    pass


class TtaError(PanopticError):
    pass
