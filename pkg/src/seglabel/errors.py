"""Exception types shared across the library."""


class SegLabelError(Exception):
    """Base class for library errors."""


class PaletteMismatch(SegLabelError):
    """A mask references a class id with no palette entry."""


class ShapeMismatch(SegLabelError):
    """Paired rasters or tensors disagree in shape."""


class EmptySet(SegLabelError):
    """A point-set operation received an empty set where one is not allowed."""


class DefectTooSmall(SegLabelError):
    """A composite cell's instance fell below the minimum pixel threshold."""


class EmptyOcclusion(SegLabelError):
    """A loss was requested over an empty occlusion plan."""


class Diverged(SegLabelError):
    """Training produced a non-finite loss. Carries the step stats."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats or {}


class CorruptCheckpoint(SegLabelError):
    """Checkpoint bytes failed header or payload validation."""


class InvalidSpec(SegLabelError):
    """A synthetic dataset spec is infeasible."""


class InvalidManifest(SegLabelError):
    """A dataset manifest failed validation."""


class EmptyDataset(SegLabelError):
    """A session was requested over a manifest with no entries."""


class InvalidTransition(SegLabelError):
    """A work item was driven through an illegal state transition."""


class PromptExhaustedForItem(SegLabelError):
    """A prompt was re-attempted on an item that already saw it."""
