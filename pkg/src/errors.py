"""Error Types

Exception hierarchy shared by every module. The CLI maps user/input errors
to exit code 2 and everything else to exit code 1.
"""


class ProphetNetError(Exception):
    """Base class for all errors raised by this package"""


class ConfigurationError(ProphetNetError, ValueError):
    """Invalid configuration value or unknown configuration key"""


class DimensionError(ProphetNetError, ValueError):
    """Operand shapes are incompatible"""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class OutOfVocabularyError(ProphetNetError, IndexError):
    """Token id outside the embedding table"""


class EmptyLossError(ProphetNetError):
    """Every position of a loss was ignored"""


class TapeError(ProphetNetError, RuntimeError):
    """Backward called outside its contract"""


class CacheMismatchError(ProphetNetError, ValueError):
    """Incremental decoding cache does not match the prefix it is given"""


class NumericalError(ProphetNetError, FloatingPointError):
    """NaN encountered in logits or gradients"""


class CheckpointError(ProphetNetError):
    """Checkpoint file is unreadable, truncated or of the wrong version"""


class DataError(ProphetNetError):
    """Missing, empty or malformed input data"""


class TrainingDivergedError(ProphetNetError):
    """Loss became NaN during training"""

    def __init__(self, step: int, last_checkpoint=None):
        self.step = step
        self.last_checkpoint = last_checkpoint
        where = f"; last checkpoint kept at {last_checkpoint}" if last_checkpoint else ""
        super().__init__(f"loss diverged (NaN) at step {step}{where}")


USER_ERRORS = (ConfigurationError, DataError, CheckpointError, OSError)
