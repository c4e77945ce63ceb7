"""Exception types raised across the package."""


class PairPointError(Exception):
    """Base class for all package errors."""


class ShapeError(PairPointError, ValueError):
    pass


class InsufficientCorrespondences(PairPointError, ValueError):
    pass


class DegenerateConfiguration(PairPointError, ValueError):
    pass


class NoConsensus(PairPointError, RuntimeError):
    pass


class OutOfBounds(PairPointError, ValueError):
    pass


class CheckpointIncompatible(PairPointError):
    pass


class CheckpointCorrupt(PairPointError):
    pass


class MissingImage(PairPointError, FileNotFoundError):
    def __init__(self, path):
        super().__init__(f"missing image: {path}")
        self.path = path


class DecodeError(PairPointError):
    def __init__(self, path):
        super().__init__(f"could not decode image: {path}")
        self.path = path


class ManifestError(PairPointError, ValueError):
    def __init__(self, line_no, message):
        super().__init__(f"manifest line {line_no}: {message}")
        self.line_no = line_no


class EmptyDataset(PairPointError, ValueError):
    pass


class EmptyEvaluation(PairPointError, ValueError):
    pass


class InvalidPose(PairPointError, ValueError):
    pass


class ConfigError(PairPointError, KeyError):
    def __init__(self, key, message=None):
        super().__init__(key)
        self.key = key
        self.message = message or f"unknown config key: {key}"

    def __str__(self):
        return self.message


class NonFiniteLoss(PairPointError, FloatingPointError):
    def __init__(self, step, pair_indices, record=None):
        super().__init__(f"non-finite loss at step {step}, pairs {pair_indices}")
        self.step = step
        self.pair_indices = pair_indices
        self.record = record
