"""Exception hierarchy shared across the package.

Every error that callers are expected to branch on gets its own class; the
module-level bases exist so a CLI can catch "anything operational" in one
clause.
"""

from __future__ import annotations


class MultishotError(Exception):
    """Base class for all package errors."""


# --- domain ---------------------------------------------------------------


class ParseError(MultishotError):
    """A structured document could not be decoded at all."""


class ValidationError(MultishotError):
    """A decoded document violates a schema invariant.

    ``field_path`` points at the offending field, ``shot_index`` at the shot
    when the violation is shot-scoped.
    """

    def __init__(self, message: str, field_path: str = "", shot_index: int | None = None):
        super().__init__(message)
        self.field_path = field_path
        self.shot_index = shot_index


# --- memory ---------------------------------------------------------------


class MatcherError(MultishotError):
    """The semantic matcher backend failed."""


class DuplicateKey(MultishotError):
    """An entry with the same canonical key already exists in the store."""


class MissingAsset(MultishotError):
    """A referenced asset file does not exist on disk."""


class GenerationError(MultishotError):
    """Reference generation failed after all retry attempts."""


class CorruptIndex(MultishotError):
    """A persisted store index references a missing or altered image."""


# --- agents ---------------------------------------------------------------


class PlanningError(MultishotError):
    """The storyboard planner exhausted its retries."""

    def __init__(self, message: str, last_response: str = ""):
        super().__init__(message)
        self.last_response = last_response


class AnalysisError(MultishotError):
    """A shot analysis response stayed unparseable after all retries."""


class ConsistencyError(MultishotError):
    """A shot analysis omitted or invented an entity."""


class MissingReference(MultishotError):
    """A keyframe request lacks the reference asset for an entity."""


class PromptError(MultishotError):
    """A prompt template was rendered with unbound placeholders."""


# --- backends -------------------------------------------------------------


class BackendError(MultishotError):
    """Base class for model-backend failures."""


class QueueExhausted(BackendError):
    """A scripted mock backend ran out of responses."""


class IoError(BackendError):
    """A backend could not read or write an asset file."""


class Timeout(BackendError):
    """A remote request timed out after all retries."""


class HttpStatus(BackendError):
    """A remote service answered with a non-success status code."""

    def __init__(self, code: int, message: str = ""):
        super().__init__(message or f"HTTP status {code}")
        self.code = code


class DecodeError(BackendError):
    """A remote response payload could not be decoded."""


# --- pipeline -------------------------------------------------------------


class SnapshotMismatch(MultishotError):
    """The memory bank on disk differs from the manifest's recorded digests."""


# --- evaluation -----------------------------------------------------------


class EmptyShot(MultishotError):
    """A shot has no frames to select from."""


class DimensionMismatch(MultishotError):
    """Two feature vectors have different lengths."""


class ZeroVector(MultishotError):
    """Cosine similarity is undefined for an all-zero vector."""


class EmbedderError(MultishotError):
    """The feature embedder (in-process or sidecar) failed."""


class MissingOutput(MultishotError):
    """A benchmark case has no associated run output."""


class LayoutError(MultishotError):
    """A benchmark suite directory violates the expected layout.

    Collects every violation found, not just the first.
    """

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)
