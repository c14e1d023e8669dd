"""Exception hierarchy.

``DataError`` covers bad inputs on disk (files, manifests, checkpoints) and
maps to CLI exit code 2; ``TrainingError`` covers runtime failures during
optimisation and maps to exit code 3.
"""


class OrientError(Exception):
    pass


class DataError(OrientError, ValueError):
    pass


class TrainingError(OrientError, RuntimeError):
    pass


class NiftiError(DataError):
    pass


class MalformedHeaderError(NiftiError):
    pass


class UnsupportedDatatypeError(NiftiError):
    pass


class UnsupportedRankError(NiftiError):
    pass


class TruncatedFileError(NiftiError):
    pass


class CheckpointError(DataError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class ManifestError(DataError):
    pass


class TooFewPatientsError(DataError):
    pass


class DivergenceError(TrainingError):
    pass
