"""Exception types shared across the optimization loop."""


class KernoptError(Exception):
    """Base class for all framework errors."""


class InvalidTimingError(KernoptError):
    """A timing value was zero or negative."""


class CatalogError(KernoptError):
    """The metric catalog is malformed or a metric violates its descriptor."""


class UnknownMetricError(KernoptError):
    """A metric id was requested that does not exist in the catalog."""

    def __init__(self, metric: str, message: str | None = None):
        self.metric = metric
        super().__init__(message or f"unknown metric id: {metric!r}")


class BackendMismatchError(KernoptError):
    """Two profiles (or a profile and a hardware spec) target different backends."""


class ProfileParseError(KernoptError):
    """Profiler output could not be parsed.

    Carries the 1-based line number and the offending text when available.
    """

    def __init__(self, message: str, line_no: int | None = None, line: str | None = None):
        self.line_no = line_no
        self.line = line
        if line_no is not None:
            message = f"{message} (line {line_no}: {line!r})"
        super().__init__(message)


class EmptyProfileError(KernoptError):
    """No requested metric could be recovered from profiler output."""


class UnknownAliasError(KernoptError):
    """A requested metric has no column registered in the NCU alias table."""

    def __init__(self, metric: str):
        self.metric = metric
        super().__init__(
            f"metric {metric!r} is not covered by the NCU alias table; "
            f"no export column maps to it"
        )


class CapabilityError(KernoptError):
    """A profile request named metrics outside the adapter's declared capabilities."""


class ProfileTimeoutError(KernoptError):
    """The profiler-wrapped child process exceeded its timeout."""


class ProfilerFailureError(KernoptError):
    """The profiler child process exited nonzero."""

    def __init__(self, message: str, stderr: str = ""):
        self.stderr = stderr
        super().__init__(message)


class ProviderUnavailableError(KernoptError):
    """All retry attempts against the LLM provider failed."""


class ProviderConfigError(KernoptError):
    """Non-retryable provider error (bad credentials, bad request, missing key)."""


class NoCodeFoundError(KernoptError):
    """A model response contained no extractable source code."""


class ReplayMissError(KernoptError):
    """The replay transcript has no response recorded for a request key."""

    def __init__(self, tag: str, request_hash: str):
        self.tag = tag
        self.request_hash = request_hash
        super().__init__(f"no transcript entry for tag={tag} hash={request_hash}")


class CompendiumBuildError(KernoptError):
    """The knowledge-base build failed (no segments, or default metrics uncovered)."""

    def __init__(self, message: str, missing: list[str] | None = None):
        self.missing = list(missing or [])
        super().__init__(message)


class TensorFormatError(KernoptError):
    """A tensor file is malformed or uses an unsupported dtype."""


class TimingProtocolError(KernoptError):
    """A runner's time-mode output violated the warmup/repetition contract."""


class TaskInfrastructureError(KernoptError):
    """The reference side of a task failed; the task (not the attempt) is broken."""


class RunnerConfigError(KernoptError):
    """A runner argv template contained an unresolvable placeholder."""


class ResumeError(KernoptError):
    """Persisted loop state could not be reloaded."""

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        super().__init__(message)
