"""Exception types shared across the package."""


class OnedemoError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(OnedemoError, ValueError):
    """A value, config, or state violates a documented contract."""


class ConfigError(ValidationError):
    """Bad user-supplied configuration; lists every offending field."""


class EpisodeOverError(OnedemoError, RuntimeError):
    """step() called after the episode already reached its fixed length."""


class DegenerateWorkspaceError(OnedemoError, RuntimeError):
    """Rejection sampling of a task instance failed too many times."""


class DemoFormatError(ValidationError):
    """A demonstration file is malformed; message names the field at fault."""


class RejectedDemoError(OnedemoError, RuntimeError):
    """A demonstration failed replay validation (it does not solve its task)."""


class UnsplittableDemoError(OnedemoError, RuntimeError):
    """A stack demonstration has no detectable release of the first block."""


class GenerationInfeasibleError(OnedemoError, RuntimeError):
    """Demo-set generation hit its attempt cap before reaching the target count."""

    def __init__(self, attempts: int, successes: int, target: int):
        self.attempts = attempts
        self.successes = successes
        self.target = target
        ratio = successes / attempts if attempts else 0.0
        super().__init__(
            f"generated {successes}/{target} episodes in {attempts} attempts "
            f"(success ratio {ratio:.3f}); source demonstration retargets too poorly"
        )


class BufferError(OnedemoError, RuntimeError):
    """Replay buffer misuse (sampling empty buffers, pushing to frozen ones)."""


class TrainingDivergenceError(OnedemoError, RuntimeError):
    """A loss or gradient became non-finite during training."""
