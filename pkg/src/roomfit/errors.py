"""Exception hierarchy for the roomfit engine."""


class RoomfitError(Exception):
    """Base class for all engine errors."""


# -- scene / parameter packing ------------------------------------------------

class StageNotReady(RoomfitError):
    """A pipeline stage was requested before its prerequisites exist."""


class SlotMismatch(RoomfitError):
    """Parameter vector slots do not match the scene topology."""


# -- imaging ------------------------------------------------------------------

class DimensionMismatch(RoomfitError):
    """Two images that must share dimensions do not."""


class EmptyRegion(RoomfitError):
    """A masked reduction found no qualifying pixels."""


class DegenerateRange(RoomfitError):
    """Normalization requested on data with zero value range."""


class CropTooSmall(RoomfitError):
    """Crop below the minimum size accepted by the texture descriptor."""


# -- rendering ----------------------------------------------------------------

class EmptyScene(RoomfitError):
    """Render requested on a scene with no geometry."""


class MissingForward(RoomfitError):
    """Adjoint pass requested without a matching retained forward pass."""


# -- initialization -----------------------------------------------------------

class DegenerateInput(RoomfitError):
    """Input points are collinear/degenerate for plane fitting."""


class NoFloorSegment(RoomfitError):
    """Room initialization requires a nonempty floor segment."""


class TooFewPoints(RoomfitError):
    """Object segment has too few points for pose initialization."""


class DegenerateRadius(RoomfitError):
    """Point-cloud radius is zero; scale initialization undefined."""


# -- retrieval ----------------------------------------------------------------

class BadMagic(RoomfitError):
    """Embedding index file does not start with the expected magic."""


class DimMismatch(RoomfitError):
    """Vector dimensionality differs from the index dimensionality."""


class DuplicateId(RoomfitError):
    """Embedding index contains a repeated entry id."""


class EmptyIndex(RoomfitError):
    """Search requested against an index with no entries of that kind."""


# -- material graphs ----------------------------------------------------------

class ParamOutOfBounds(RoomfitError):
    """Procedural parameter outside its declared range."""


class GraphSchemaError(RoomfitError):
    """Material graph description failed validation."""


# -- optimization -------------------------------------------------------------

class ShapeMismatch(RoomfitError):
    """Optimizer state, parameters or gradients have inconsistent shapes."""


# -- pipeline -----------------------------------------------------------------

class MissingInput(RoomfitError):
    """A required bundle file is absent."""


class BundleError(RoomfitError):
    """Bundle contents are inconsistent (sizes, ids, references)."""


class UnknownPath(RoomfitError):
    """An override path does not resolve to a scene parameter."""


class SceneFileError(RoomfitError):
    """scene.json failed to parse or validate."""
