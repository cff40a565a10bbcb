"""Exception hierarchy shared across the package.

Every error the library raises deliberately derives from CascadeRankError so
callers can catch one base class at pipeline boundaries.
"""


class CascadeRankError(Exception):
    """Base class for all cascaderank errors."""


class DimensionMismatch(CascadeRankError):
    """Vectors or matrices with incompatible dimensions."""


class ZeroNormVector(CascadeRankError):
    """Cosine similarity requested against a zero-norm (degenerate) vector."""


class EmptyInput(CascadeRankError):
    """An operation received an empty collection it cannot handle."""


class ShapeMismatchForResidual(CascadeRankError):
    """Residual addition requires equal token counts; no silent broadcasting."""


class ParseError(CascadeRankError):
    """A manifest or fixture line failed to parse; message carries the line number."""


class DuplicateId(CascadeRankError):
    """An id occurred more than once within a collection that requires uniqueness."""


class MissingInput(CascadeRankError):
    """A role-required argument was absent (e.g. Analyst without a checklist)."""


class BackendTimeout(CascadeRankError):
    """Backend did not answer within the configured timeout."""


class BackendUnavailable(CascadeRankError):
    """Backend unreachable after exhausting retries."""


class FixtureMiss(CascadeRankError):
    """Scripted backend has no entry for the requested (role, image_ref)."""


class UnparseableVerdict(CascadeRankError):
    """Response contained neither a yes nor a no token."""


class EmbedderFailure(CascadeRankError):
    """Text embedder could not produce an embedding."""


class CoverageMismatch(CascadeRankError):
    """Fused scores do not cover exactly the candidate pool's items."""


class EmptyRelevant(CascadeRankError):
    """Metric requested for a query with an empty relevant set."""


class MissingQrels(CascadeRankError):
    """A query has no ground-truth relevance entry."""


class UnknownTag(CascadeRankError):
    """Grouping requested on a tag key some query does not carry."""


class InsufficientPairs(CascadeRankError):
    """Mining quota unreachable with the available supply."""

    def __init__(self, message: str, shortfall: dict | None = None):
        super().__init__(message)
        self.shortfall = shortfall or {}
