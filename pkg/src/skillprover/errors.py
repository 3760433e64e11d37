"""Exception hierarchy shared across the package."""


class SkillProverError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(SkillProverError):
    """Embedding dimension differs from the store's dimension."""


class UnknownRecordError(SkillProverError):
    """Referenced record id does not exist."""


class EmptyStoreError(SkillProverError):
    """Selection requested from a store with no eligible records."""


class CorruptStoreError(SkillProverError):
    """Snapshot, journal, or genealogy data is internally inconsistent."""


class ParseError(SkillProverError):
    """Structured text (decomposer output, config) could not be parsed."""


class FormatError(SkillProverError):
    """A model response did not contain the expected artifact."""


class TransportError(SkillProverError):
    """A backend (verifier or LLM endpoint) is unreachable or timed out."""


class RateLimitError(TransportError):
    """Backend kept rate-limiting after all retries."""


class ProtocolError(SkillProverError):
    """Backend replied with a payload that violates the wire contract."""


class TemplateError(SkillProverError):
    """Prompt template missing, or placeholders left unbound."""

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = missing or []


class ReplayMissError(SkillProverError):
    """Replay mode got a request that is not in the cassette."""


class CheckpointError(SkillProverError):
    """Checkpoint directory is missing, corrupt, or version-incompatible."""
