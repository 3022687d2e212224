"""Exception hierarchy shared by all modules.

Each error carries the name of the module that raised it so that the CLI can
report ``<module>.<ErrorName>: message``.
"""


class GotReidError(Exception):
    module = "gotreid"

    @property
    def qualified_name(self) -> str:
        return f"{self.module}.{type(self).__name__}"


# ot_core
class OTError(GotReidError):
    module = "ot_core"


class ZeroNormRow(OTError, ValueError):
    pass


class NonConvergence(OTError, RuntimeError):
    pass


class DimensionMismatch(OTError, ValueError):
    pass


class TooLarge(OTError, ValueError):
    pass


# graph_attention
class GraphError(GotReidError):
    module = "graph_attention"


class EdgeOutOfRange(GraphError, ValueError):
    pass


class SingleHeadExchange(GraphError, RuntimeWarning):
    pass


# losses
class LossError(GotReidError):
    module = "losses"


class LabelOutOfRange(LossError, ValueError):
    pass


class NoValidTriplet(LossError, ValueError):
    pass


class NonFinite(LossError, FloatingPointError):
    pass


class LossDimensionMismatch(LossError, ValueError):
    pass


# model
class ModelError(GotReidError):
    module = "model"


class ShapeMismatch(ModelError, ValueError):
    pass


class UnknownModality(ModelError, ValueError):
    pass


class DivergenceDetected(ModelError, FloatingPointError):
    pass


class CheckpointError(ModelError, ValueError):
    pass


# eval
class EvalError(GotReidError):
    module = "eval"


class EmptyGallery(EvalError, ValueError):
    pass


class NoRelevantItem(EvalError, ValueError):
    pass


class InsufficientGallerySamples(EvalError, ValueError):
    pass


# data
class DataError(GotReidError):
    module = "data"


class BadMagic(DataError, ValueError):
    pass


class TruncatedFile(DataError, ValueError):
    pass


class VersionMismatch(DataError, ValueError):
    pass


class FileAccessError(DataError, OSError):
    pass


class InsufficientSamples(DataError, ValueError):
    pass


# cli / config
class ConfigError(GotReidError, ValueError):
    module = "cli"
