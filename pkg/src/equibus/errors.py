"""Exception hierarchy shared by all equibus modules."""


class EquibusError(Exception):
    """Base class for every error raised by the package."""

    #: process exit code used by the CLI
    exit_code = 4


class ValidationError(EquibusError, ValueError):
    """An input violates a documented invariant."""

    exit_code = 2


class ScenarioError(ValidationError):
    """Malformed or invalid scenario (generation spec, file contents)."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class InvalidAssignmentError(ValidationError):
    """A line assignment is not a valid partition of the candidate stops."""


class InadmissibleActionError(ValidationError):
    """An action that the MDP does not admit in the current state."""


class ConfigurationError(ValidationError):
    """Network dimensions or hyperparameters are inconsistent."""


class CheckpointError(EquibusError):
    """A checkpoint file cannot be parsed or does not match the expected config."""

    exit_code = 3


class DegenerateSampleError(ValidationError):
    """Statistics requested on a sample that cannot support them."""


class UndefinedRatioError(ValidationError):
    """Improvement ratio against a non-positive baseline."""
