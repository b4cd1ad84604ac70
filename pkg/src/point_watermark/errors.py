"""Typed errors raised across the watermarking pipeline.

Data errors derive from ValueError as well as WatermarkError, so callers that
already catch ValueError keep working. The CLI maps ConfigError to a usage
exit code and every other WatermarkError to a data-error exit code.
"""

from __future__ import annotations


class WatermarkError(Exception):
    """Base class for every error this package raises on purpose."""


class ConfigError(WatermarkError, ValueError):
    """Invalid or unknown configuration field."""


# ---------------------------------------------------------------------------
# Geometry parsing, sampling and storage
# ---------------------------------------------------------------------------

class GeometryError(WatermarkError, ValueError):
    pass


class MalformedHeader(GeometryError):
    pass


class CountMismatch(GeometryError):
    pass


class IndexOutOfRange(GeometryError):
    pass


class NonFiniteCoordinate(GeometryError):
    pass


class UnsupportedEncoding(GeometryError):
    pass


class MalformedRecord(GeometryError):
    pass


class ZeroAreaMesh(GeometryError):
    pass


class DegenerateCloud(GeometryError):
    pass


class CloudIOError(WatermarkError, OSError):
    """Reading or writing a cloud file failed at the OS level."""


# ---------------------------------------------------------------------------
# Embedding / extraction
# ---------------------------------------------------------------------------

class InvalidWatermark(WatermarkError, ValueError):
    pass


class NonNormalizedInput(WatermarkError, ValueError):
    pass


class TooFewPoints(WatermarkError, ValueError):
    pass


class EmbedNonConvergent(WatermarkError, RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Attacks and metrics
# ---------------------------------------------------------------------------

class InvalidAttackSpec(WatermarkError, ValueError):
    pass


class EmptyResult(WatermarkError, ValueError):
    pass


class LengthMismatch(WatermarkError, ValueError):
    pass


class EmptyCloud(WatermarkError, ValueError):
    pass


class EmptyScoreSet(WatermarkError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Neural decoder
# ---------------------------------------------------------------------------

class ShapeMismatch(WatermarkError, ValueError):
    pass


class EmptyDataset(WatermarkError, ValueError):
    pass


class DivergedLoss(WatermarkError, RuntimeError):
    pass


class MalformedCheckpoint(WatermarkError, ValueError):
    pass


class ParameterCountMismatch(MalformedCheckpoint):
    """Payload size disagrees with the parameter count of the stored config."""


class CheckpointVersionMismatch(WatermarkError, ValueError):
    pass


class CheckpointConfigMismatch(WatermarkError, ValueError):
    """Checkpoint architecture does not fit the requested run."""


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------

class OverlapDetected(WatermarkError, ValueError):
    pass


class EvaluationAborted(WatermarkError, RuntimeError):
    pass


class ReportError(WatermarkError, ValueError):
    pass
