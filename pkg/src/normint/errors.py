"""Exception types shared across the package.

All data-level failures derive from :class:`NormintError` so the CLI can map
them to a nonzero exit status with a readable message.
"""


class NormintError(Exception):
    """Base class for all package-specific errors."""


class EmptyMask(NormintError):
    """The validity mask contains no valid pixel."""


class DegenerateEdge(NormintError):
    """A continuity coefficient is undefined for this edge (near-grazing
    normal or vanishing log argument)."""


class NoInterEdges(NormintError):
    """The quotient graph has no inter-component edges to constrain."""


class DegenerateSpec(NormintError):
    """A synthetic scene specification cannot be rendered (e.g. surface
    behind the camera)."""


class MalformedHeader(NormintError):
    """A file header does not match the expected format."""


class TruncatedPayload(NormintError):
    """A file ended before the expected number of payload bytes."""


class UnsupportedBitDepth(NormintError):
    """An input image does not have the required bit depth / channel count."""


class NoOverlap(NormintError):
    """Prediction and ground truth share no jointly valid pixel."""
