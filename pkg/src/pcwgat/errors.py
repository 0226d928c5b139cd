"""Exception hierarchy.

Every error raised on purpose by the package derives from ``PcqaError`` so
the CLI can map it to the data-error exit code.
"""


class PcqaError(Exception):
    pass


# pointcloud_io
class MalformedHeader(PcqaError):
    pass


class UnsupportedFormat(PcqaError):
    pass


class TruncatedBody(PcqaError):
    pass


class MissingColumn(PcqaError):
    pass


class UnparsableScore(PcqaError):
    def __init__(self, row, column, value):
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")
        self.row = row
        self.column = column


class EmptyManifest(PcqaError):
    pass


class EmptyRange(PcqaError):
    pass


class InvalidCloud(PcqaError):
    pass


# clustering / graph / tensors
class TooFewPoints(PcqaError):
    pass


class NonFiniteFeature(PcqaError):
    pass


class ShapeMismatch(PcqaError, ValueError):
    pass


class EmptyCluster(PcqaError):
    pass


class EmptyNeighborhood(PcqaError):
    pass


class UnrecordedForward(PcqaError):
    pass


# training / evaluation
class TooFewReferences(PcqaError):
    pass


class LengthMismatch(PcqaError, ValueError):
    pass


class ConfigMismatch(PcqaError):
    pass


class ConfigError(PcqaError):
    pass


class CheckpointError(PcqaError):
    pass


class ConstantTarget(PcqaError):
    pass


class TooFewSamples(PcqaError):
    pass


class PipelineError(PcqaError):
    """Wraps a failure while processing one named cloud."""

    def __init__(self, path, cause):
        super().__init__(f"{path}: {cause}")
        self.path = path
        self.cause = cause


class InvalidRow(PcqaError):
    pass
