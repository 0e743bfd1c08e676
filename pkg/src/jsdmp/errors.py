"""Exception hierarchy.

Every error carries a short ``code`` used as the machine-greppable prefix of
CLI diagnostics (``error[E_DIM]: ...``).
"""


class JsdmpError(Exception):
    code = "E_JSDMP"


class DimensionError(JsdmpError, ValueError):
    code = "E_DIM"


class DomainError(JsdmpError, ValueError):
    code = "E_DOMAIN"


class EdgeIndexError(JsdmpError, IndexError):
    code = "E_INDEX"


class ConfigError(JsdmpError, ValueError):
    code = "E_CONFIG"


class StateError(JsdmpError, RuntimeError):
    code = "E_STATE"


class NonFiniteError(JsdmpError, FloatingPointError):
    code = "E_NAN"


class TrainingError(JsdmpError, RuntimeError):
    code = "E_TRAIN"


class LoadError(JsdmpError, ValueError):
    code = "E_LOAD"


class ValidationError(LoadError):
    code = "E_VALIDATE"


class CheckpointError(JsdmpError, ValueError):
    code = "E_CHECKPOINT"
