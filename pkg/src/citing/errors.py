"""Exception hierarchy shared across the pipeline."""


class CitingError(Exception):
    """Base class for all pipeline errors."""


class DatasetError(CitingError):
    """Bad dataset file, record, or split request."""


class ProviderError(CitingError):
    """A chat/embedding backend failed in a non-retryable way or ran out of retries."""


class TransientProviderError(ProviderError):
    """A backend failure worth retrying (timeouts, 429s, 5xx)."""


class RubricParseError(CitingError):
    """Teacher rubric output did not match the expected block format.

    Carries the offending span of raw text so reprompts can point at it.
    """

    def __init__(self, message: str, span: str | None = None):
        self.span = span
        if span is not None:
            message = f"{message} (near: {span!r})"
        super().__init__(message)


class VerdictParseError(CitingError):
    """Judge output contained no recognizable verdict token."""


class TrainerError(CitingError):
    """A training backend violated the job contract or failed outright."""


class PipelineError(CitingError):
    """Run-level failure: stage errors, thresholds exceeded, resume mismatches."""
