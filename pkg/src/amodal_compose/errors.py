"""Exception types shared across the package, mapped to CLI exit codes."""


class AmodalError(Exception):
    """Base class; `code` is the machine-parsable error code printed by the CLI."""

    code = "E_RUNTIME"
    exit_code = 2


class DimensionError(AmodalError):
    code = "E_DIMENSION"
    exit_code = 1


class DegenerateMaskError(AmodalError):
    code = "E_DEGENERATE_MASK"
    exit_code = 1


class SamplingFailureError(AmodalError):
    """Rejection sampling exhausted its attempt budget; caller may retry."""

    code = "E_SAMPLING"
    exit_code = 2


class AttentionDegenerateError(AmodalError):
    code = "E_ATTENTION"
    exit_code = 2


class InvalidAnnotationError(AmodalError):
    code = "E_ANNOTATION"
    exit_code = 1


class ManifestError(AmodalError):
    """A manifest entry failed validation; message names the entry id."""

    code = "E_MANIFEST"
    exit_code = 1


class IncompatibleCheckpointError(AmodalError):
    code = "E_CHECKPOINT"
    exit_code = 1


class ConfigurationError(AmodalError):
    code = "E_CONFIG"
    exit_code = 1


class TrainingDivergedError(AmodalError):
    """Non-finite loss; message records the offending step and batch seed."""

    code = "E_DIVERGED"
    exit_code = 2


class ShapePredictionFailureError(AmodalError):
    code = "E_SHAPE_PRED"
    exit_code = 2


class PlacementError(AmodalError):
    code = "E_PLACEMENT"
    exit_code = 1


class UsageError(AmodalError):
    code = "E_USAGE"
    exit_code = 1
