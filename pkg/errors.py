"""
Error types for the mixture-activation training engine
Each error carries the exit code the CLI returns when it escapes a stage
"""


class MixActError(Exception):
    """Base class for every failure raised by the engine"""

    exit_code = 1


class ConfigError(MixActError):
    """Invalid configuration, flag, group name or layer geometry"""

    exit_code = 2


class ShapeError(ConfigError):
    """Tensor dimensions that do not fit together"""


class DataError(MixActError):
    """Missing, truncated or malformed dataset files and labels"""

    exit_code = 3


class NumericError(MixActError):
    """NaN or Inf reached the loss"""

    exit_code = 4


class GradcheckError(MixActError):
    """Tape gradients disagree with finite differences"""

    exit_code = 5


class StateError(MixActError):
    """Engine misuse: missing gradients, loss off the tape, broken freeze"""
