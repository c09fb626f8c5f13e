"""Exception hierarchy.

Data problems (bad files, misaligned grids, drifted specs) and numerical
problems (unstable bootstrap) are kept apart so the command line can map
them onto distinct exit codes.
"""


class PhenoctError(Exception):
    """Base class for all package errors."""


class DataError(PhenoctError):
    """Input data is malformed or inconsistent."""


class NumericalError(PhenoctError):
    """A numerical procedure could not produce a usable result."""


class NiftiError(DataError):
    """Raised while parsing a NIfTI-1 file."""


class BadMagicError(NiftiError):
    pass


class UnsupportedDatatypeError(NiftiError):
    pass


class DimensionError(NiftiError):
    pass


class SpacingError(NiftiError):
    pass


class TruncatedPayloadError(NiftiError):
    pass


class LabelTypeError(NiftiError):
    pass


class CatalogError(DataError):
    """Anatomy catalog is invalid or does not cover a label map."""


class AlignmentError(DataError):
    pass


class DimMismatchError(AlignmentError):
    pass


class SpacingMismatchError(AlignmentError):
    pass


class UnknownClassError(AlignmentError, CatalogError):
    def __init__(self, class_ids):
        self.class_ids = sorted(int(c) for c in class_ids)
        super().__init__("unknown class ids: " + ", ".join(str(c) for c in self.class_ids))


class TableError(DataError):
    """Feature table construction or catalog mismatch."""


class SpecError(DataError):
    """Frozen spec file is invalid."""


class SpecHashError(SpecError):
    pass


class DriftError(SpecError):
    def __init__(self, expected, found):
        self.expected = expected
        self.found = found
        super().__init__(f"spec/catalog drift: spec {expected[:12]} vs catalog {found[:12]}")


class DegenerateLabelsError(DataError):
    def __init__(self, msg="degenerate label vector"):
        super().__init__(msg)


class UnstableBootstrapError(NumericalError):
    def __init__(self, n_valid, n_required=50):
        self.n_valid = n_valid
        super().__init__(f"unstable bootstrap: {n_valid} valid replicates (< {n_required})")
